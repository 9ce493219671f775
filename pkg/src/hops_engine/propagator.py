"""Trajectory propagation for the stochastic hierarchy.

The right-hand side exists twice on purpose: a plain-numpy reference
(:func:`rhs_linear`, :func:`rhs_nonlinear`) that states the equations as
directly as possible, and a compiled kernel (:mod:`hops_engine._kernels`)
used for production runs.  A test pins both against each other on random
states; ensembles would be hopeless without the compiled path.

Time-dependent systems are described as linear combinations of static
matrices with smooth scalar modulation functions, which covers the engine
protocols exactly and keeps the compiled path free of Python callbacks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from . import _kernels
from .bath import ExponentialBCF
from .hierarchy import HierarchyBasis, HopsCoefficients, coupling_edges
from .stochproc import ProcessRealization, zero_process


class TrajectoryError(RuntimeError):
    """Raised when a trajectory cannot be propagated at all (bad inputs)."""


@dataclass(frozen=True)
class ModulationTable:
    """Piecewise quintic-smoothstep scalar modulation.

    ``ramps`` rows are ``(t0, t1, v0, v1)``; between ramps the value holds,
    before the first ramp it is the first ``v0``.  A positive ``period``
    wraps the evaluation time, ``shift`` delays the whole curve.
    """

    ramps: np.ndarray
    period: float = 0.0
    shift: float = 0.0

    def __post_init__(self):
        r = np.atleast_2d(np.asarray(self.ramps, dtype=float))
        object.__setattr__(self, "ramps", r[np.argsort(r[:, 0])])

    @classmethod
    def constant(cls, value: float) -> "ModulationTable":
        return cls(ramps=np.array([[-2.0, -1.0, value, value]]))

    def __call__(self, t):
        return self.value_and_derivative(t)[0]

    def value_and_derivative(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        v = np.empty_like(t)
        dv = np.empty_like(t)
        for i, ti in enumerate(t):
            v[i], dv[i] = _kernels.eval_modulation(
                ti, self.period, self.shift, self.ramps, len(self.ramps)
            )
        return v, dv

    def shifted(self, tau: float) -> "ModulationTable":
        return replace(self, shift=self.shift + tau)

    def slowed(self, new_width: float) -> "ModulationTable":
        """Widen every ramp to ``new_width`` keeping its support boundary:
        rising ramps keep their start, falling ramps keep their end."""
        out = []
        for t0, t1, v0, v1 in self.ramps:
            if v1 >= v0:
                out.append((t0, t0 + new_width, v0, v1))
            else:
                out.append((t1 - new_width, t1, v0, v1))
        return replace(self, ramps=np.array(out))


@dataclass
class CompiledSystem:
    """Flat-array form of a modulated system for the compiled kernel.

    ``H(t) = H_static + sum_j mods[H_mod_idx[j]](t) * H_mats[j]`` and
    ``L_n(t) = mods[L_mod_idx[n]](t) * L_mats[n]`` (static if the index is -1).
    """

    dim: int
    H_static: np.ndarray
    H_mod_idx: np.ndarray
    H_mats: np.ndarray
    L_mod_idx: np.ndarray
    L_mats: np.ndarray
    mods: list[ModulationTable]

    def _mod_values(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        vals = np.zeros((len(self.mods), len(t)))
        ders = np.zeros_like(vals)
        for c, m in enumerate(self.mods):
            vals[c], ders[c] = m.value_and_derivative(t)
        return vals, ders

    def hamiltonian(self, t: float) -> np.ndarray:
        vals, _ = self._mod_values(t)
        H = self.H_static.astype(complex).copy()
        for j, idx in enumerate(self.H_mod_idx):
            H += vals[idx, 0] * self.H_mats[j]
        return H

    def hamiltonian_dt(self, t: float) -> np.ndarray:
        _, ders = self._mod_values(t)
        H = np.zeros_like(self.H_static, dtype=complex)
        for j, idx in enumerate(self.H_mod_idx):
            H += ders[idx, 0] * self.H_mats[j]
        return H

    def coupling(self, n: int, t: float) -> np.ndarray:
        idx = self.L_mod_idx[n]
        if idx < 0:
            return self.L_mats[n].astype(complex)
        return float(self.mods[idx](t)[0]) * self.L_mats[n]

    def coupling_dt(self, n: int, t: float) -> np.ndarray:
        idx = self.L_mod_idx[n]
        if idx < 0:
            return np.zeros_like(self.L_mats[n], dtype=complex)
        _, dv = self.mods[idx].value_and_derivative(t)
        return dv[0] * self.L_mats[n]

    def kernel_mod_arrays(self):
        n_mods = len(self.mods)
        r_max = max(len(m.ramps) for m in self.mods) if n_mods else 1
        periods = np.zeros(n_mods)
        shifts = np.zeros(n_mods)
        ramps = np.zeros((max(n_mods, 1), max(r_max, 1), 4))
        nramps = np.zeros(max(n_mods, 1), dtype=np.int64)
        for c, m in enumerate(self.mods):
            periods[c] = m.period
            shifts[c] = m.shift
            ramps[c, : len(m.ramps)] = m.ramps
            nramps[c] = len(m.ramps)
        return periods, shifts, ramps, nramps


@dataclass
class SystemSpec:
    """System Hamiltonian and per-bath coupling operators, all callables of
    time.  ``H(t)`` must be Hermitian; couplings may be arbitrary.

    When built from a :class:`CompiledSystem` (the usual route), the compiled
    representation rides along and enables the fast kernel.
    """

    dimension: int
    H: Callable[[float], np.ndarray]
    L: Sequence[Callable[[float], np.ndarray]]
    dL: Sequence[Callable[[float], np.ndarray]]
    dH: Callable[[float], np.ndarray] | None = None
    compiled: CompiledSystem | None = None

    def __post_init__(self):
        if self.dimension < 2:
            raise ValueError("system dimension must be at least 2")
        for t in (0.0, 0.7, 13.1):
            H = np.asarray(self.H(t))
            if H.shape != (self.dimension, self.dimension):
                raise ValueError("H(t) has the wrong shape")
            if np.abs(H - H.conj().T).max() > 1e-12 * max(np.abs(H).max(), 1.0):
                raise ValueError(f"H(t) is not Hermitian at t={t}")

    @property
    def num_baths(self) -> int:
        return len(self.L)

    @classmethod
    def from_compiled(cls, cs: CompiledSystem) -> "SystemSpec":
        return cls(
            dimension=cs.dim,
            H=cs.hamiltonian,
            L=[(lambda t, n=n: cs.coupling(n, t)) for n in range(len(cs.L_mats))],
            dL=[(lambda t, n=n: cs.coupling_dt(n, t)) for n in range(len(cs.L_mats))],
            dH=cs.hamiltonian_dt,
            compiled=cs,
        )


@dataclass
class BathProcesses:
    """Noise inputs of one trajectory for one bath."""

    eta: ProcessRealization
    xi: ProcessRealization

    @classmethod
    def zero_temperature(cls, eta: ProcessRealization) -> "BathProcesses":
        return cls(eta=eta, xi=zero_process(eta.times[-1], eta.dt))


@dataclass
class SolverConfig:
    """Adaptive embedded Runge-Kutta settings."""

    method: str = "rk45"
    rtol: float = 1e-6
    atol: float = 1e-8
    max_step: float = math.inf
    dense_output: bool = False
    norm_floor: float = 1e-12
    max_steps: int = 50_000_000

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("rtol and atol must be positive")


@dataclass
class TrajectorySamples:
    """One trajectory evaluated on the sample grid.

    ``first_level[t, m]`` is the state raised once in expansion slot ``m``;
    ``second_level`` is present only when requested and carries its own
    index map ``second_level_k`` (rows of slot occupations).
    """

    times: np.ndarray
    psi0: np.ndarray
    first_level: np.ndarray
    norm_sq: np.ndarray
    expL: np.ndarray
    eta: np.ndarray
    xi: np.ndarray
    xi_dot: np.ndarray
    method: str
    second_level: np.ndarray | None = None
    second_level_k: np.ndarray | None = None
    aborted: bool = False
    abort_time: float = math.nan
    abort_ordinal: int = -1
    status: int = 0


def _state_views(state: np.ndarray, basis: HierarchyBasis, dim: int):
    n_hier = len(basis)
    psi = state[: n_hier * dim].reshape(n_hier, dim)
    regs = state[n_hier * dim :]
    return psi, regs


def _assemble_generator(system, t, eta_star, xi_t):
    H = np.asarray(system.H(t), dtype=complex).copy()
    for n in range(system.num_baths):
        Ln = np.asarray(system.L[n](t), dtype=complex)
        H += Ln * np.conj(xi_t[n]) + Ln.conj().T * xi_t[n]
    A = -1j * H
    for n in range(system.num_baths):
        A += eta_star[n] * np.asarray(system.L[n](t), dtype=complex)
    return A


def _rhs_reference(
    state, t, system, coeffs, basis, processes, nonlinear, norm_floor=1e-12
):
    dim = system.dimension
    psi, regs = _state_views(np.asarray(state, dtype=complex), basis, dim)
    # the sampled driving process carries the correlation alpha(t-s); the
    # factor multiplying L in the equations is its complex conjugate
    eta_star = np.conj([p.eta(t) for p in processes]).astype(complex)
    xi_t = np.array([p.xi(t) for p in processes], dtype=complex)

    expL = np.zeros(system.num_baths, dtype=complex)
    if nonlinear:
        nrm = float(np.vdot(psi[0], psi[0]).real)
        if nrm < norm_floor:
            raise TrajectoryError(
                f"physical-state norm {nrm:.3e} below floor at t={t}"
            )
        for n in range(system.num_baths):
            Ld = np.asarray(system.L[n](t), dtype=complex).conj().T
            expL[n] = np.vdot(psi[0], Ld @ psi[0]) / nrm
        for n in range(system.num_baths):
            eta_star[n] += regs[coeffs.slots_of_bath(n)].sum()

    A = _assemble_generator(system, t, eta_star, xi_t)
    dpsi = psi @ A.T - coeffs.damping[:, None] * psi
    for n in range(system.num_baths):
        Ln = np.asarray(system.L[n](t), dtype=complex)
        Ld_eff = Ln.conj().T - (expL[n] * np.eye(dim) if nonlinear else 0.0)
        for m in coeffs.slots_of_bath(n):
            has_dn = basis.down[:, m] >= 0
            k_m = basis.indices[has_dn, m]
            amp = -1j * coeffs.sqrt_G[m] * np.sqrt(k_m)
            dpsi[has_dn] += amp[:, None] * (psi[basis.down[has_dn, m]] @ Ln.T)
            has_up = basis.up[:, m] >= 0
            k_up = basis.indices[has_up, m] + 1.0
            amp = -1j * coeffs.sqrt_G[m] * np.sqrt(k_up)
            dpsi[has_up] += amp[:, None] * (psi[basis.up[has_up, m]] @ Ld_eff.T)

    dregs = np.zeros_like(regs)
    if nonlinear:
        # gauge term keeping |psi^0| ~ 1 (every nonlinear coefficient is a
        # ratio, so a common rescaling of the hierarchy vector is free)
        nrm = float(np.vdot(psi[0], psi[0]).real)
        dn = float(np.vdot(psi[0], dpsi[0]).real) / nrm - (1.0 - nrm)
        dpsi -= dn * psi
        dregs = np.conj(coeffs.G) * expL[coeffs.bath_of_slot] - np.conj(coeffs.W) * regs
    return np.concatenate([dpsi.ravel(), dregs])


def rhs_linear(state, t, system, coeffs, basis, processes):
    """Time derivative of the linear hierarchy with the raw driving noise.

    ``state`` stacks all hierarchy amplitudes followed by the (unused) shift
    registers; thermal noise enters through the Hamiltonian.
    """
    return _rhs_reference(state, t, system, coeffs, basis, processes, False)


def rhs_nonlinear(state, t, system, coeffs, basis, processes, norm_floor=1e-12):
    """Time derivative of the norm-stabilized hierarchy.

    The driving noise is shifted by the register sums and the raising
    couplings use ``L^dag - <L^dag>`` with the normalized expectation in the
    physical slot.  Raises :class:`TrajectoryError` when that norm collapses.
    """
    return _rhs_reference(
        state, t, system, coeffs, basis, processes, True, norm_floor
    )


def _keep_ordinals(basis: HierarchyBasis, keep_second_level: bool):
    firsts = basis.first_level_ordinals()
    ords = [np.array([0], dtype=np.int64), firsts]
    second = basis.level_ordinals(2) if keep_second_level else None
    if second is not None:
        ords.append(second)
    return np.concatenate(ords), firsts, second


def propagate_trajectory(
    initial_system_state: np.ndarray,
    system: SystemSpec,
    coeffs: HopsCoefficients,
    basis: HierarchyBasis,
    processes: Sequence[BathProcesses],
    solver: SolverConfig,
    sample_times: np.ndarray,
    method: str = "nonlinear",
    keep_second_level: bool = False,
) -> TrajectorySamples:
    """Propagate one trajectory from the product initial condition.

    The initial hierarchy state puts ``initial_system_state`` in the physical
    slot with all auxiliaries (and shift registers) zero.  Returns the
    physical and first-level states (optionally second level) at
    ``sample_times`` together with coupling expectations and the thermal
    process values needed by the observables layer.
    """
    if method not in ("linear", "nonlinear"):
        raise ValueError(f"unknown method {method!r}")
    if len(processes) != system.num_baths:
        raise ValueError("need one process bundle per bath")
    sample_times = np.asarray(sample_times, dtype=float)
    dim = system.dimension
    n_hier = len(basis)
    n_slots = basis.m_total
    psi0 = np.asarray(initial_system_state, dtype=complex)
    if psi0.shape != (dim,):
        raise ValueError("initial state has the wrong dimension")

    y0 = np.zeros(n_hier * dim + n_slots, dtype=complex)
    y0[:dim] = psi0

    keep_ords, firsts, second = _keep_ordinals(basis, keep_second_level)
    keep_flat = np.concatenate([np.arange(k * dim, (k + 1) * dim) for k in keep_ords])

    nonlinear = method == "nonlinear"
    if system.compiled is not None and solver.method == "rk45":
        status, flat, t_fail, worst = _run_kernel(
            y0, system.compiled, coeffs, basis, processes, solver, sample_times,
            nonlinear, keep_flat,
        )
    else:
        status, flat, t_fail, worst = _run_generic(
            y0, system, coeffs, basis, processes, solver, sample_times,
            nonlinear, keep_flat,
        )

    n_keep = len(keep_ords)
    cube = flat.reshape(len(sample_times), n_keep, dim)
    out_psi0 = cube[:, 0, :]
    first_level = cube[:, 1 : 1 + n_slots, :]
    second_level = cube[:, 1 + n_slots :, :] if keep_second_level else None
    second_k = basis.indices[second] if second is not None else None

    norm_sq = np.einsum("td,td->t", out_psi0.conj(), out_psi0).real
    nb = system.num_baths
    expL = np.zeros((len(sample_times), nb), dtype=complex)
    safe = np.where(norm_sq > 0, norm_sq, 1.0)
    for n in range(nb):
        for i, t in enumerate(sample_times):
            Ld = np.asarray(system.L[n](t), dtype=complex).conj().T
            expL[i, n] = np.vdot(out_psi0[i], Ld @ out_psi0[i]) / safe[i]
    eta = np.stack([p.eta(sample_times) for p in processes], axis=1)
    xi = np.stack([p.xi(sample_times) for p in processes], axis=1)
    xi_dot = np.stack([p.xi.derivative(sample_times) for p in processes], axis=1)

    return TrajectorySamples(
        times=sample_times,
        psi0=out_psi0,
        first_level=first_level,
        norm_sq=norm_sq,
        expL=expL,
        eta=eta,
        xi=xi,
        xi_dot=xi_dot,
        method=method,
        second_level=second_level,
        second_level_k=second_k,
        aborted=status != _kernels.STATUS_OK,
        abort_time=t_fail if status != _kernels.STATUS_OK else math.nan,
        abort_ordinal=worst,
        status=status,
    )


def _process_arrays(processes, nb):
    n = len(processes[0].eta.values)
    dt = processes[0].eta.dt
    eta_vals = np.zeros((nb, n), dtype=complex)
    eta_ders = np.zeros((nb, n), dtype=complex)
    xi_vals = np.zeros((nb, n), dtype=complex)
    xi_ders = np.zeros((nb, n), dtype=complex)
    for i, p in enumerate(processes):
        if abs(p.eta.dt - dt) > 1e-12 or len(p.eta.values) != n:
            raise ValueError("all processes must share one grid")
        eta_vals[i] = p.eta.values
        eta_ders[i] = p.eta.derivative_values
        if len(p.xi.values) == n:
            xi_vals[i] = p.xi.values
            xi_ders[i] = p.xi.derivative_values
        elif np.abs(p.xi.values).max() == 0.0:
            pass
        else:
            raise ValueError("thermal process grid mismatch")
    return eta_vals, eta_ders, xi_vals, xi_ders, dt


def _run_kernel(
    y0, cs, coeffs, basis, processes, solver, sample_times, nonlinear, keep_flat
):
    lo, hi, slot, coef = coupling_edges(basis, coeffs)
    periods, shifts, ramps, nramps = cs.kernel_mod_arrays()
    nb = len(cs.L_mats)
    eta_vals, eta_ders, xi_vals, xi_ders, proc_dt = _process_arrays(processes, nb)
    L_dag = np.conj(np.transpose(cs.L_mats, (0, 2, 1)))
    status, samples, t_fail, worst = _kernels.propagate(
        y0,
        sample_times,
        keep_flat,
        nonlinear,
        len(basis),
        cs.dim,
        nb,
        coeffs.damping,
        lo,
        hi,
        slot,
        coef,
        coeffs.bath_of_slot,
        np.conj(coeffs.G),
        np.conj(coeffs.W),
        cs.H_static.astype(complex),
        cs.H_mod_idx,
        cs.H_mats.astype(complex),
        cs.L_mod_idx,
        cs.L_mats.astype(complex),
        L_dag,
        periods,
        shifts,
        ramps,
        nramps,
        eta_vals,
        eta_ders,
        xi_vals,
        xi_ders,
        proc_dt,
        solver.rtol,
        solver.atol,
        solver.max_step,
        solver.norm_floor,
        solver.max_steps,
    )
    return status, samples, t_fail, worst


def _run_generic(
    y0, system, coeffs, basis, processes, solver, sample_times, nonlinear, keep_flat
):
    status = _kernels.STATUS_OK
    t_fail = math.nan
    worst = -1

    def rhs(t, y):
        return _rhs_reference(
            y, t, system, coeffs, basis, processes, nonlinear, solver.norm_floor
        )

    try:
        sol = solve_ivp(
            rhs,
            (sample_times[0], sample_times[-1]),
            y0,
            method="RK45",
            t_eval=sample_times,
            rtol=solver.rtol,
            atol=solver.atol,
            max_step=solver.max_step,
        )
        if not sol.success:
            status = _kernels.STATUS_NONFINITE
        ys = sol.y.T.astype(complex)
    except TrajectoryError:
        status = _kernels.STATUS_NORM_FLOOR
        ys = np.zeros((len(sample_times), len(y0)), dtype=complex)
    flat = np.zeros((len(sample_times), len(keep_flat)), dtype=complex)
    flat[: len(ys)] = ys[:, keep_flat]
    if not np.isfinite(flat).all():
        status = _kernels.STATUS_NONFINITE
        flat = np.nan_to_num(flat)
    return status, flat, t_fail, worst
