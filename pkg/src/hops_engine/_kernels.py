"""Compiled single-trajectory propagation.

Everything in here is numba-jitted and operates on flat arrays prepared by
:mod:`hops_engine.propagator`.  The hierarchy right-hand side mirrors the
reference implementation in that module exactly; a test pins the two against
each other on random states.

Status codes returned by the driver:

* 0  finished
* 1  non-finite state encountered
* 2  squared norm of the physical state fell below the floor (nonlinear)
* 3  step size underflow
* 4  step budget exhausted
"""

from __future__ import annotations

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_NONFINITE = 1
STATUS_NORM_FLOOR = 2
STATUS_UNDERFLOW = 3
STATUS_MAXSTEPS = 4


@njit(cache=True, inline="always")
def _smoothstep(u):
    return u * u * u * (10.0 + u * (-15.0 + 6.0 * u))


@njit(cache=True, inline="always")
def _smoothstep_d(u):
    return 30.0 * u * u * (u - 1.0) * (u - 1.0)


@njit(cache=True)
def eval_modulation(t, period, shift, ramps, n_ramps):
    """Piecewise quintic-smoothstep modulation value and time derivative.

    ``ramps`` rows are ``(t0, t1, v0, v1)`` sorted by ``t0`` inside one
    period; the curve holds the surrounding ramp endpoints in between.
    """
    tau = t - shift
    if period > 0.0:
        tau = tau % period
    value = ramps[0, 2] if n_ramps > 0 else 0.0
    dvalue = 0.0
    for r in range(n_ramps):
        t0 = ramps[r, 0]
        t1 = ramps[r, 1]
        if tau < t0:
            break
        if tau <= t1:
            w = t1 - t0
            u = (tau - t0) / w
            dv = ramps[r, 3] - ramps[r, 2]
            value = ramps[r, 2] + dv * _smoothstep(u)
            dvalue = dv * _smoothstep_d(u) / w
            break
        value = ramps[r, 3]
        dvalue = 0.0
    return value, dvalue


@njit(cache=True, inline="always")
def _hermite(vals, ders, dt, t):
    """Cubic Hermite interpolation of a gridded process at time ``t``."""
    n = vals.shape[0]
    x = t / dt
    j = int(x)
    if j < 0:
        j = 0
    if j > n - 2:
        j = n - 2
    u = x - j
    y0 = vals[j]
    y1 = vals[j + 1]
    d0 = ders[j] * dt
    d1 = ders[j + 1] * dt
    u2 = u * u
    u3 = u2 * u
    return (
        (2.0 * u3 - 3.0 * u2 + 1.0) * y0
        + (u3 - 2.0 * u2 + u) * d0
        + (-2.0 * u3 + 3.0 * u2) * y1
        + (u3 - u2) * d1
    )


@njit(cache=True)
def hops_rhs(
    t,
    y,
    out,
    nonlinear,
    # dimensions
    n_hier,
    dim,
    num_baths,
    # hierarchy structure
    damping,
    edge_lo,
    edge_hi,
    edge_slot,
    edge_coef,
    bath_of_slot,
    Gc,
    Wc,
    # system pieces
    H_static,
    H_mod_idx,
    H_mats,
    L_mod_idx,
    L_mats,
    L_dag_mats,
    mod_period,
    mod_shift,
    mod_ramps,
    mod_nramps,
    # processes on their grid
    eta_vals,
    eta_ders,
    xi_vals,
    xi_ders,
    proc_dt,
    norm_floor,
):
    """Hierarchy equations of motion; fills ``out`` and returns a status code.

    State layout: ``n_hier * dim`` hierarchy amplitudes followed by one shift
    register per expansion slot (ignored in the linear method).
    """
    n_slots = bath_of_slot.shape[0]
    n_mods = mod_period.shape[0]

    mod_val = np.empty(n_mods)
    for c in range(n_mods):
        v, _ = eval_modulation(
            t, mod_period[c], mod_shift[c], mod_ramps[c], mod_nramps[c]
        )
        mod_val[c] = v

    # per-bath coupling operators L_n(t) and process values
    L_t = np.zeros((num_baths, dim, dim), dtype=np.complex128)
    Ld_t = np.zeros((num_baths, dim, dim), dtype=np.complex128)
    eta_star = np.empty(num_baths, dtype=np.complex128)
    xi_t = np.empty(num_baths, dtype=np.complex128)
    for n in range(num_baths):
        scale = 1.0 if L_mod_idx[n] < 0 else mod_val[L_mod_idx[n]]
        for a in range(dim):
            for b in range(dim):
                L_t[n, a, b] = scale * L_mats[n, a, b]
                Ld_t[n, a, b] = scale * L_dag_mats[n, a, b]
        # the sampled driving process has correlation alpha(t-s); the factor
        # multiplying L in the equations is its complex conjugate
        eta_star[n] = np.conj(_hermite(eta_vals[n], eta_ders[n], proc_dt, t))
        xi_t[n] = _hermite(xi_vals[n], xi_ders[n], proc_dt, t)

    # expectation values and noise shift (nonlinear method only)
    expL = np.zeros(num_baths, dtype=np.complex128)
    if nonlinear:
        nrm = 0.0
        for a in range(dim):
            nrm += (y[a].real * y[a].real) + (y[a].imag * y[a].imag)
        if nrm < norm_floor:
            return STATUS_NORM_FLOOR
        for n in range(num_baths):
            acc = 0.0 + 0.0j
            for a in range(dim):
                row = 0.0 + 0.0j
                for b in range(dim):
                    row += Ld_t[n, a, b] * y[b]
                acc += np.conj(y[a]) * row
            expL[n] = acc / nrm
        for n in range(num_baths):
            shift = 0.0 + 0.0j
            for m in range(n_slots):
                if bath_of_slot[m] == n:
                    shift += y[n_hier * dim + m]
            eta_star[n] = eta_star[n] + shift

    # effective one-state generator
    # A = -i H_S(t) - i sum_n (L_n xi*_n + L_n^dag xi_n) + sum_n eta~*_n L_n
    A = np.empty((dim, dim), dtype=np.complex128)
    for a in range(dim):
        for b in range(dim):
            ham = H_static[a, b] + 0.0j
            for h in range(H_mod_idx.shape[0]):
                ham += mod_val[H_mod_idx[h]] * H_mats[h, a, b]
            drive = 0.0 + 0.0j
            for n in range(num_baths):
                ham += L_t[n, a, b] * np.conj(xi_t[n]) + Ld_t[n, a, b] * xi_t[n]
                drive += eta_star[n] * L_t[n, a, b]
            A[a, b] = -1j * ham + drive

    # diagonal part: (A - damping_k) psi_k
    for k in range(n_hier):
        base = k * dim
        for a in range(dim):
            acc = -damping[k] * y[base + a]
            for b in range(dim):
                acc += A[a, b] * y[base + b]
            out[base + a] = acc

    # hierarchy couplings, one pass over the raising edges
    for e in range(edge_lo.shape[0]):
        i = edge_lo[e]
        j = edge_hi[e]
        m = edge_slot[e]
        n = bath_of_slot[m]
        c = -1j * edge_coef[e]
        bi = i * dim
        bj = j * dim
        for a in range(dim):
            acc_up = 0.0 + 0.0j
            acc_dn = 0.0 + 0.0j
            for b in range(dim):
                acc_dn += L_t[n, a, b] * y[bi + b]
                acc_up += Ld_t[n, a, b] * y[bj + b]
            if nonlinear:
                acc_up -= expL[n] * y[bj + a]
            out[bj + a] += c * acc_dn
            out[bi + a] += c * acc_up

    # gauge term keeping |psi^0| ~ 1: the whole hierarchy vector may be
    # rescaled freely since every nonlinear coefficient is a ratio
    if nonlinear:
        dn = 0.0
        for a in range(dim):
            dn += (np.conj(y[a]) * out[a]).real
        dn = dn / nrm - (1.0 - nrm)
        for v in range(n_hier * dim):
            out[v] -= dn * y[v]

    # shift registers r_m' = conj(G_m) <L^dag> - conj(W_m) r_m
    for m in range(n_slots):
        idx = n_hier * dim + m
        if nonlinear:
            out[idx] = Gc[m] * expL[bath_of_slot[m]] - Wc[m] * y[idx]
        else:
            out[idx] = 0.0 + 0.0j
    return STATUS_OK


# Dormand-Prince 5(4) coefficients
_A2 = np.array([1.0 / 5.0])
_A3 = np.array([3.0 / 40.0, 9.0 / 40.0])
_A4 = np.array([44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0])
_A5 = np.array([19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0])
_A6 = np.array(
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0]
)
_B = np.array(
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0]
)
_E = np.array(
    [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ]
)


@njit(cache=True)
def propagate(
    y0,
    sample_times,
    keep,
    nonlinear,
    n_hier,
    dim,
    num_baths,
    damping,
    edge_lo,
    edge_hi,
    edge_slot,
    edge_coef,
    bath_of_slot,
    Gc,
    Wc,
    H_static,
    H_mod_idx,
    H_mats,
    L_mod_idx,
    L_mats,
    L_dag_mats,
    mod_period,
    mod_shift,
    mod_ramps,
    mod_nramps,
    eta_vals,
    eta_ders,
    xi_vals,
    xi_ders,
    proc_dt,
    rtol,
    atol,
    max_step,
    norm_floor,
    max_steps,
):
    """Adaptive embedded Runge-Kutta (Dormand-Prince 5(4)) driver.

    Steps land exactly on every entry of ``sample_times``; the rows of the
    returned array hold ``y[keep]`` at those times.  Returns
    ``(status, samples, t_fail, worst_index)``.
    """
    nvar = y0.shape[0]
    n_samp = sample_times.shape[0]
    n_keep = keep.shape[0]
    samples = np.zeros((n_samp, n_keep), dtype=np.complex128)

    y = y0.copy()
    t = sample_times[0]
    k1 = np.empty(nvar, dtype=np.complex128)
    k2 = np.empty(nvar, dtype=np.complex128)
    k3 = np.empty(nvar, dtype=np.complex128)
    k4 = np.empty(nvar, dtype=np.complex128)
    k5 = np.empty(nvar, dtype=np.complex128)
    k6 = np.empty(nvar, dtype=np.complex128)
    k7 = np.empty(nvar, dtype=np.complex128)
    ytmp = np.empty(nvar, dtype=np.complex128)
    ynew = np.empty(nvar, dtype=np.complex128)

    for q in range(n_keep):
        samples[0, q] = y[keep[q]]

    st = hops_rhs(
        t, y, k1, nonlinear, n_hier, dim, num_baths, damping, edge_lo, edge_hi,
        edge_slot, edge_coef, bath_of_slot, Gc, Wc, H_static, H_mod_idx, H_mats,
        L_mod_idx, L_mats, L_dag_mats, mod_period, mod_shift, mod_ramps,
        mod_nramps, eta_vals, eta_ders, xi_vals, xi_ders, proc_dt, norm_floor,
    )
    if st != STATUS_OK:
        return st, samples, t, -1

    h = min(1e-3, max_step)
    steps = 0
    for s_idx in range(1, n_samp):
        target = sample_times[s_idx]
        while t < target - 1e-12:
            if steps >= max_steps:
                return STATUS_MAXSTEPS, samples, t, -1
            steps += 1
            hs = h
            if t + hs > target:
                hs = target - t
            if hs < 1e-14:
                return STATUS_UNDERFLOW, samples, t, -1

            # stages
            for v in range(nvar):
                ytmp[v] = y[v] + hs * _A2[0] * k1[v]
            st = hops_rhs(
                t + hs / 5.0, ytmp, k2, nonlinear, n_hier, dim, num_baths, damping,
                edge_lo, edge_hi, edge_slot, edge_coef, bath_of_slot, Gc, Wc,
                H_static, H_mod_idx, H_mats, L_mod_idx, L_mats, L_dag_mats,
                mod_period, mod_shift, mod_ramps, mod_nramps, eta_vals, eta_ders,
                xi_vals, xi_ders, proc_dt, norm_floor,
            )
            if st != STATUS_OK:
                return st, samples, t, _worst(ytmp, n_hier, dim)
            for v in range(nvar):
                ytmp[v] = y[v] + hs * (_A3[0] * k1[v] + _A3[1] * k2[v])
            st = hops_rhs(
                t + 3.0 * hs / 10.0, ytmp, k3, nonlinear, n_hier, dim, num_baths,
                damping, edge_lo, edge_hi, edge_slot, edge_coef, bath_of_slot, Gc,
                Wc, H_static, H_mod_idx, H_mats, L_mod_idx, L_mats, L_dag_mats,
                mod_period, mod_shift, mod_ramps, mod_nramps, eta_vals, eta_ders,
                xi_vals, xi_ders, proc_dt, norm_floor,
            )
            if st != STATUS_OK:
                return st, samples, t, _worst(ytmp, n_hier, dim)
            for v in range(nvar):
                ytmp[v] = y[v] + hs * (_A4[0] * k1[v] + _A4[1] * k2[v] + _A4[2] * k3[v])
            st = hops_rhs(
                t + 4.0 * hs / 5.0, ytmp, k4, nonlinear, n_hier, dim, num_baths,
                damping, edge_lo, edge_hi, edge_slot, edge_coef, bath_of_slot, Gc,
                Wc, H_static, H_mod_idx, H_mats, L_mod_idx, L_mats, L_dag_mats,
                mod_period, mod_shift, mod_ramps, mod_nramps, eta_vals, eta_ders,
                xi_vals, xi_ders, proc_dt, norm_floor,
            )
            if st != STATUS_OK:
                return st, samples, t, _worst(ytmp, n_hier, dim)
            for v in range(nvar):
                ytmp[v] = y[v] + hs * (
                    _A5[0] * k1[v] + _A5[1] * k2[v] + _A5[2] * k3[v] + _A5[3] * k4[v]
                )
            st = hops_rhs(
                t + 8.0 * hs / 9.0, ytmp, k5, nonlinear, n_hier, dim, num_baths,
                damping, edge_lo, edge_hi, edge_slot, edge_coef, bath_of_slot, Gc,
                Wc, H_static, H_mod_idx, H_mats, L_mod_idx, L_mats, L_dag_mats,
                mod_period, mod_shift, mod_ramps, mod_nramps, eta_vals, eta_ders,
                xi_vals, xi_ders, proc_dt, norm_floor,
            )
            if st != STATUS_OK:
                return st, samples, t, _worst(ytmp, n_hier, dim)
            for v in range(nvar):
                ytmp[v] = y[v] + hs * (
                    _A6[0] * k1[v]
                    + _A6[1] * k2[v]
                    + _A6[2] * k3[v]
                    + _A6[3] * k4[v]
                    + _A6[4] * k5[v]
                )
            st = hops_rhs(
                t + hs, ytmp, k6, nonlinear, n_hier, dim, num_baths, damping,
                edge_lo, edge_hi, edge_slot, edge_coef, bath_of_slot, Gc, Wc,
                H_static, H_mod_idx, H_mats, L_mod_idx, L_mats, L_dag_mats,
                mod_period, mod_shift, mod_ramps, mod_nramps, eta_vals, eta_ders,
                xi_vals, xi_ders, proc_dt, norm_floor,
            )
            if st != STATUS_OK:
                return st, samples, t, _worst(ytmp, n_hier, dim)
            for v in range(nvar):
                ynew[v] = y[v] + hs * (
                    _B[0] * k1[v]
                    + _B[2] * k3[v]
                    + _B[3] * k4[v]
                    + _B[4] * k5[v]
                    + _B[5] * k6[v]
                )
            st = hops_rhs(
                t + hs, ynew, k7, nonlinear, n_hier, dim, num_baths, damping,
                edge_lo, edge_hi, edge_slot, edge_coef, bath_of_slot, Gc, Wc,
                H_static, H_mod_idx, H_mats, L_mod_idx, L_mats, L_dag_mats,
                mod_period, mod_shift, mod_ramps, mod_nramps, eta_vals, eta_ders,
                xi_vals, xi_ders, proc_dt, norm_floor,
            )
            if st != STATUS_OK:
                return st, samples, t, _worst(ynew, n_hier, dim)

            # error norm
            err = 0.0
            for v in range(nvar):
                ev = hs * (
                    _E[0] * k1[v]
                    + _E[2] * k3[v]
                    + _E[3] * k4[v]
                    + _E[4] * k5[v]
                    + _E[5] * k6[v]
                    + _E[6] * k7[v]
                )
                ay = abs(y[v])
                ayn = abs(ynew[v])
                sc = atol + rtol * (ay if ay > ayn else ayn)
                q = abs(ev) / sc
                err += q * q
            err = np.sqrt(err / nvar)

            if err <= 1.0:
                t = t + hs
                for v in range(nvar):
                    y[v] = ynew[v]
                    k1[v] = k7[v]  # first-same-as-last
                if not np.isfinite(err):
                    return STATUS_NONFINITE, samples, t, _worst(y, n_hier, dim)
                factor = 5.0 if err == 0.0 else min(5.0, 0.9 * err ** -0.2)
                h = min(max_step, hs * max(0.2, factor))
            else:
                if not np.isfinite(err):
                    return STATUS_NONFINITE, samples, t, _worst(ynew, n_hier, dim)
                h = hs * max(0.2, 0.9 * err ** -0.2)
        for q in range(n_keep):
            samples[s_idx, q] = y[keep[q]]
    return STATUS_OK, samples, t, -1


@njit(cache=True)
def _worst(y, n_hier, dim):
    """Hierarchy ordinal holding the largest (or first non-finite) entry."""
    worst = 0
    best = -1.0
    for k in range(n_hier):
        mag = 0.0
        for a in range(dim):
            v = y[k * dim + a]
            if not (np.isfinite(v.real) and np.isfinite(v.imag)):
                return k
            mag += abs(v)
        if mag > best:
            best = mag
            worst = k
    return worst
