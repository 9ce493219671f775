"""Brute-force cross-validation: a bath of explicitly discretized modes with
truncated Fock spaces, propagated exactly.

The continuum bath is replaced by ``K`` modes from a midpoint rule on the
spectral density.  Everything (reduced state, interaction energy, bath
energy) is then computed from the full wavefunction.  Thermal initial states
are handled by Gibbs sampling of Fock occupations, which is exact for the
diagonal thermal ensemble.  Finite baths recur after ``2 pi / d omega``, so
comparisons stay inside that window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from .bath import ExponentialBCF, OhmicSpectralDensity, ThermalParameters, bcf_zero_temp
from .observables import Welford
from .propagator import CompiledSystem
from .stochproc import SpectralLines


class DimensionError(RuntimeError):
    """Raised when the truncated Hilbert space exceeds the configured bound."""


@dataclass(frozen=True)
class DiscretizedBath:
    """Finite list of modes ``(omega, g)`` standing in for a continuum bath."""

    omegas: np.ndarray
    couplings: np.ndarray
    fock_cutoffs: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "omegas", np.asarray(self.omegas, dtype=float))
        object.__setattr__(self, "couplings", np.asarray(self.couplings, dtype=float))
        if any(c < 2 for c in self.fock_cutoffs):
            raise ValueError("Fock cutoffs below 2 make no sense")

    @property
    def num_modes(self) -> int:
        return len(self.omegas)

    def bcf(self, tau) -> np.ndarray:
        """Zero-temperature correlation function of the discrete bath."""
        tau = np.asarray(tau, dtype=float)
        return np.einsum(
            "k,k...->...",
            self.couplings**2,
            np.exp(-1j * np.multiply.outer(self.omegas, tau)),
        )

    def recurrence_time(self) -> float:
        gaps = np.diff(np.sort(self.omegas))
        dw = gaps.min() if len(gaps) else self.omegas[0]
        return 2 * math.pi / dw

    def exponential_bcf(self, damping: float = 1e-8) -> ExponentialBCF:
        """Exact hierarchy representation of this bath (one term per mode)."""
        return ExponentialBCF.from_modes(self.omegas, self.couplings**2, damping)

    def driving_lines(self) -> SpectralLines:
        return SpectralLines(self.omegas, self.couplings**2)

    def thermal_lines(self, thermal: ThermalParameters) -> SpectralLines | None:
        if thermal.is_zero_temperature:
            return None
        nbar = 1.0 / np.expm1(thermal.beta * self.omegas)
        return SpectralLines(self.omegas, self.couplings**2 * nbar)


def discretize(
    sd: OhmicSpectralDensity,
    num_modes: int,
    omega_max: float,
    fock_cutoffs: Sequence[int] | int = 8,
) -> DiscretizedBath:
    """Midpoint discretization of ``J`` on ``[0, omega_max]``:
    ``|g_k|^2 = J(omega_k) d omega / pi`` at the interval midpoints."""
    if num_modes < 1:
        raise ValueError("need at least one mode")
    dw = omega_max / num_modes
    omegas = (np.arange(num_modes) + 0.5) * dw
    g = np.sqrt(sd(omegas) * dw / math.pi)
    if isinstance(fock_cutoffs, int):
        fock_cutoffs = (fock_cutoffs,) * num_modes
    return DiscretizedBath(omegas, g, tuple(fock_cutoffs))


def bcf_reproduction_error(
    disc: DiscretizedBath, sd: OhmicSpectralDensity, window: float, num: int = 400
) -> float:
    """Relative max-norm mismatch between the discrete and continuum BCF."""
    taus = np.linspace(0.0, window, num)
    exact = bcf_zero_temp(sd, taus)
    return float(np.abs(disc.bcf(taus) - exact).max() / np.abs(exact).max())


@dataclass
class OracleResult:
    """Exact series with standard errors over the thermal Gibbs samples."""

    times: np.ndarray
    rho: np.ndarray
    rho_se: np.ndarray
    system_energy: np.ndarray
    system_energy_se: np.ndarray
    interaction: np.ndarray
    interaction_se: np.ndarray
    bath_delta: np.ndarray
    bath_delta_se: np.ndarray
    total_energy: np.ndarray
    num_samples: int
    leakage: float

    def trace_distance(self, rho_other: np.ndarray) -> np.ndarray:
        """Per-time trace distance to another reduced-state series."""
        diff = self.rho - rho_other
        out = np.empty(len(self.times))
        for i, d in enumerate(diff):
            ev = np.linalg.eigvalsh(d)
            out[i] = 0.5 * np.abs(ev).sum()
        return out


def _mode_operators(cutoffs: Sequence[int]):
    ops = []
    for c in cutoffs:
        a = sp.diags(np.sqrt(np.arange(1, c)), 1, format="csr")
        ops.append(a)
    return ops


def _embed(op, dims, slot):
    """Kronecker embedding of ``op`` acting on tensor slot ``slot``."""
    mats = [sp.identity(d, format="csr") for d in dims]
    mats[slot] = op
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


@dataclass
class ExactModel:
    """Assembled sparse operators of qubit plus discretized baths."""

    compiled: CompiledSystem
    baths: list[DiscretizedBath]
    dims: list[int]
    sys_ops: dict
    bath_number: list[sp.spmatrix]
    bath_energy: list[sp.spmatrix]
    coupling_agent: list[sp.spmatrix]

    @property
    def dimension(self) -> int:
        return int(np.prod(self.dims))


def build_model(
    compiled: CompiledSystem,
    baths: Sequence[DiscretizedBath],
    dim_bound: int = 20_000,
) -> ExactModel:
    dims = [compiled.dim]
    for b in baths:
        dims.extend(b.fock_cutoffs)
    total = int(np.prod(dims))
    if total > dim_bound:
        raise DimensionError(f"Hilbert dimension {total} exceeds bound {dim_bound}")
    bath_number = []
    bath_energy = []
    coupling_agent = []
    slot = 1
    for b in baths:
        num = None
        energy = None
        agent = None
        for k in range(b.num_modes):
            a = sp.diags(np.sqrt(np.arange(1, b.fock_cutoffs[k])), 1, format="csr")
            n_op = _embed((a.getH() @ a).tocsr(), dims, slot + k)
            e_op = b.omegas[k] * n_op
            g_a = b.couplings[k] * _embed(a, dims, slot + k)
            num = n_op if num is None else num + n_op
            energy = e_op if energy is None else energy + e_op
            agent = g_a if agent is None else agent + g_a
        bath_number.append(num)
        bath_energy.append(energy)
        coupling_agent.append(agent)
        slot += b.num_modes
    return ExactModel(
        compiled=compiled,
        baths=list(baths),
        dims=dims,
        sys_ops={},
        bath_number=bath_number,
        bath_energy=bath_energy,
        coupling_agent=coupling_agent,
    )


def _hamiltonian(model: ExactModel, t: float) -> sp.spmatrix:
    dims = model.dims
    H = _embed(sp.csr_matrix(model.compiled.hamiltonian(t)), dims, 0)
    for n, B in enumerate(model.coupling_agent):
        L = _embed(sp.csr_matrix(model.compiled.coupling(n, t)), dims, 0)
        H = H + L.getH() @ B + L @ B.getH() + model.bath_energy[n]
    return H


def _sys_expectation(psi, dims, op):
    d0 = dims[0]
    rest = int(np.prod(dims[1:]))
    m = psi.reshape(d0, rest)
    return np.einsum("ar,ab,br->", m.conj(), op, m)


def _reduced_density(psi, dims):
    d0 = dims[0]
    rest = int(np.prod(dims[1:]))
    m = psi.reshape(d0, rest)
    return m @ m.conj().T


def sample_initial_occupations(
    baths: Sequence[DiscretizedBath],
    thermals: Sequence[ThermalParameters],
    rng: np.random.Generator,
) -> list[np.ndarray]:
    """Gibbs-sample one Fock occupation per mode (geometric distribution)."""
    out = []
    for b, th in zip(baths, thermals):
        if th.is_zero_temperature:
            out.append(np.zeros(b.num_modes, dtype=int))
            continue
        p = -np.expm1(-th.beta * b.omegas)
        out.append(rng.geometric(p) - 1)
    return out


def exact_propagate(
    compiled: CompiledSystem,
    baths: Sequence[DiscretizedBath],
    thermals: Sequence[ThermalParameters],
    horizon: float,
    sample_times: np.ndarray,
    num_thermal_samples: int = 1,
    seed: int = 0,
    dim_bound: int = 20_000,
    rtol: float = 1e-9,
    atol: float = 1e-11,
    time_dependent: bool | None = None,
) -> OracleResult:
    """Propagate the full model exactly and return all energy series.

    At zero temperature a single deterministic run suffices; finite
    temperature averages over Gibbs-sampled Fock occupations with Welford
    standard errors.  Occupations beyond a mode's cutoff raise, and the
    top-level leakage of the propagated states is reported.
    """
    model = build_model(compiled, baths, dim_bound)
    dims = model.dims
    sample_times = np.asarray(sample_times, dtype=float)
    if time_dependent is None:
        time_dependent = bool(len(compiled.mods))

    H_static = _hamiltonian(model, 0.0) if not time_dependent else None
    HB_ops = model.bath_energy
    B_ops = model.coupling_agent

    all_zero_t = all(th.is_zero_temperature for th in thermals)
    n_samp = 1 if all_zero_t else num_thermal_samples
    rng = np.random.default_rng(seed)

    T = len(sample_times)
    w_rho = Welford.zeros((T, dims[0], dims[0]), complex_data=True)
    w_es = Welford.zeros(T)
    w_ei = Welford.zeros((T, len(baths)))
    w_eb = Welford.zeros((T, len(baths)))
    w_tot = Welford.zeros(T)
    leakage = 0.0

    for s in range(n_samp):
        occs = sample_initial_occupations(baths, thermals, rng)
        for b, occ in zip(baths, occs):
            for k, n_occ in enumerate(occ):
                if n_occ > b.fock_cutoffs[k] - 3:
                    raise DimensionError(
                        f"sampled occupation {n_occ} too close to cutoff "
                        f"{b.fock_cutoffs[k]} for mode at {b.omegas[k]:.3f}"
                    )
        idx = 0
        strides = np.cumprod([1] + dims[::-1][:-1])[::-1]
        flat_occ = [1] + [int(x) for occ in occs for x in occ]
        # qubit spin-down is component index 1
        pos = sum(f * s_ for f, s_ in zip(flat_occ, strides))
        psi0 = np.zeros(model.dimension, dtype=complex)
        psi0[pos] = 1.0

        if time_dependent:
            def rhs(t, y):
                return -1j * (_hamiltonian(model, t) @ y)
            sol = solve_ivp(
                rhs, (sample_times[0], sample_times[-1]), psi0,
                t_eval=sample_times, rtol=rtol, atol=atol, method="DOP853",
            )
            states = sol.y.T
        else:
            states = np.empty((T, model.dimension), dtype=complex)
            states[0] = psi0
            from scipy.sparse.linalg import expm_multiply
            for i in range(1, T):
                dt = sample_times[i] - sample_times[i - 1]
                states[i] = expm_multiply((-1j * dt) * H_static, states[i - 1])

        rho_t = np.empty((T, dims[0], dims[0]), dtype=complex)
        es_t = np.empty(T)
        ei_t = np.empty((T, len(baths)))
        eb_t = np.empty((T, len(baths)))
        tot_t = np.empty(T)
        eb0 = [float((psi0.conj() @ (HB @ psi0)).real) for HB in HB_ops]
        for i, t in enumerate(sample_times):
            psi = states[i]
            rho_t[i] = _reduced_density(psi, dims)
            Hs = model.compiled.hamiltonian(t)
            es_t[i] = _sys_expectation(psi, dims, Hs).real
            tot = es_t[i]
            for n in range(len(baths)):
                L = model.compiled.coupling(n, t)
                Lfull = _embed(sp.csr_matrix(L), dims, 0)
                HI = Lfull.getH() @ B_ops[n] + Lfull @ B_ops[n].getH()
                ei_t[i, n] = float((psi.conj() @ (HI @ psi)).real)
                eb = float((psi.conj() @ (HB_ops[n] @ psi)).real)
                eb_t[i, n] = eb - eb0[n]
                tot += ei_t[i, n] + eb
            tot_t[i] = tot
        # top-level Fock leakage of the final state
        psiT = states[-1].reshape(dims)
        for slot in range(1, len(dims)):
            sl = [slice(None)] * len(dims)
            sl[slot] = dims[slot] - 1
            leakage = max(leakage, float(np.sum(np.abs(psiT[tuple(sl)]) ** 2)))

        w_rho.update(rho_t)
        w_es.update(es_t)
        w_ei.update(ei_t)
        w_eb.update(eb_t)
        w_tot.update(tot_t)

    return OracleResult(
        times=sample_times,
        rho=w_rho.mean,
        rho_se=w_rho.stderr(),
        system_energy=w_es.mean,
        system_energy_se=w_es.stderr(),
        interaction=w_ei.mean,
        interaction_se=w_ei.stderr(),
        bath_delta=w_eb.mean,
        bath_delta_se=w_eb.stderr(),
        total_energy=w_tot.mean,
        num_samples=n_samp,
        leakage=leakage,
    )
