"""Qubit Otto engine: modulation protocols, engine assembly, ensemble runs,
and cycle-level thermodynamic metrics.

The machine is a qubit with gap modulation ``f`` and two bosonic baths whose
couplings are switched by ``h_hot`` and ``h_cold``.  A cycle has period
``Theta``; the plain four-phase protocol keeps compression, hot contact,
expansion and cold contact disjoint, while shifted variants deliberately
overlap them.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import bath as bath_mod
from .bath import (
    ExponentialBCF,
    OhmicSpectralDensity,
    ThermalParameters,
    bcf_zero_temp,
    calibrate_delta,
    fit_ohmic_bcf,
    thermal_correlation_grid,
)
from .hierarchy import HierarchyBasis, HopsCoefficients, build_basis
from .observables import (
    EnergySeries,
    EnsembleAccumulator,
    accumulate_trajectory,
)
from .propagator import (
    BathProcesses,
    CompiledSystem,
    ModulationTable,
    SolverConfig,
    SystemSpec,
    propagate_trajectory,
)
from .stochproc import ProcessSpec, process_seed, sample_process, zero_process

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
IDENTITY = np.eye(2, dtype=complex)

HOT, COLD = 0, 1


class ProtocolError(ValueError):
    """Raised when a modulation protocol cannot be laid out as requested."""


@dataclass(frozen=True)
class Protocol:
    """Cycle period, transition time and the three modulation curves.

    ``f`` drives the qubit gap, ``h_hot``/``h_cold`` the bath couplings; all
    three are periodic, twice continuously differentiable and bounded in
    [0, 1].  ``shifts`` records the per-bath time offsets applied on top of
    the base layout.
    """

    Theta: float
    tau_tr: float
    f: ModulationTable
    h_hot: ModulationTable
    h_cold: ModulationTable
    num_cycles: int = 3
    shifts: tuple[float, float] = (0.0, 0.0)

    @property
    def horizon(self) -> float:
        return self.num_cycles * self.Theta

    def coupling(self, bath: int) -> ModulationTable:
        return self.h_hot if bath == HOT else self.h_cold


def make_olc(Theta: float, tau_tr: float, num_cycles: int = 3) -> Protocol:
    """Four-phase cycle with disjoint phases and smooth transitions.

    Layout within one period (all ramps are quintic smoothsteps of width
    ``tau_tr``): the gap rises on ``[0, tau_tr]`` and falls on
    ``[Theta/2 - tau_tr, Theta/2]``; the hot coupling occupies the
    compressed half with maximal plateau, the cold coupling the expanded
    half.  Requires ``8 tau_tr <= Theta`` so every transition fits without
    overlap.
    """
    if tau_tr <= 0:
        raise ProtocolError("transition time must be positive")
    if 8.0 * tau_tr > Theta:
        raise ProtocolError(
            f"transitions overlap: 8 * tau_tr = {8 * tau_tr:.3f} > Theta = {Theta:.3f}"
        )
    half = Theta / 2.0
    f = ModulationTable(
        ramps=np.array(
            [[0.0, tau_tr, 0.0, 1.0], [half - tau_tr, half, 1.0, 0.0]]
        ),
        period=Theta,
    )
    h_hot = ModulationTable(
        ramps=np.array(
            [
                [tau_tr, 2 * tau_tr, 0.0, 1.0],
                [half - 2 * tau_tr, half - tau_tr, 1.0, 0.0],
            ]
        ),
        period=Theta,
    )
    h_cold = ModulationTable(
        ramps=np.array(
            [[half, half + tau_tr, 0.0, 1.0], [Theta - tau_tr, Theta, 1.0, 0.0]]
        ),
        period=Theta,
    )
    return Protocol(Theta=Theta, tau_tr=tau_tr, f=f, h_hot=h_hot, h_cold=h_cold,
                    num_cycles=num_cycles)


def make_shifted(
    base: Protocol, tau: float, which: str = "both", slow: bool = False
) -> Protocol:
    """Delay bath couplings by ``tau`` (cyclically), optionally at half speed.

    ``which`` selects ``"both"`` couplings or ``"cold_only"``; positive
    ``tau`` delays the bath phases relative to the gap modulation.  ``slow``
    doubles the transition time of every modulation while keeping the cycle
    period, so phases may overlap by design.
    """
    if which not in ("both", "cold_only"):
        raise ValueError(f"unknown shift target {which!r}")
    if abs(tau) >= base.Theta / 2:
        raise ProtocolError("|tau| must stay below half a period")
    f, h_hot, h_cold = base.f, base.h_hot, base.h_cold
    tau_tr = base.tau_tr
    if slow:
        tau_tr = 2.0 * base.tau_tr
        f = f.slowed(tau_tr)
        h_hot = h_hot.slowed(tau_tr)
        h_cold = h_cold.slowed(tau_tr)
    hot_shift = tau if which == "both" else 0.0
    return Protocol(
        Theta=base.Theta,
        tau_tr=tau_tr,
        f=f,
        h_hot=h_hot.shifted(hot_shift),
        h_cold=h_cold.shifted(tau),
        num_cycles=base.num_cycles,
        shifts=(hot_shift, tau),
    )


@dataclass(frozen=True)
class QubitEngineSpec:
    """Engine parameters in units of the qubit scale ``Omega``.

    ``s_x`` is the static transverse field (energy units, below
    ``Omega / 2``); the gap runs from ``eps0`` (expanded) to ``eps1``
    (compressed).  Bath coupling prefactors follow from the global coupling
    measure ``delta`` via the thermal spectral densities at the two
    resonances.
    """

    Omega: float = 1.0
    s_x: float = 0.0
    delta: float = 0.7
    omega_c: float = 1.0
    T_cold: float = 0.5
    T_hot: float = 4.0

    def __post_init__(self):
        if not (0 <= self.s_x < self.Omega / 2):
            raise ValueError("s_x must lie in [0, Omega/2)")
        if self.delta <= 0 or self.omega_c <= 0 or self.T_cold <= 0:
            raise ValueError("delta, omega_c and temperatures must be positive")
        if self.eps0 >= self.eps1:
            raise ValueError("engine regime requires eps0 < eps1")
        if self.T_hot <= self.T_cold:
            raise ValueError("hot bath must be hotter than the cold bath")

    @property
    def eps0(self) -> float:
        return self.Omega * math.sqrt(1.0 + (self.s_x / self.Omega) ** 2)

    @property
    def eps1(self) -> float:
        return 2.0 * self.Omega * math.sqrt(1.0 + (self.s_x / (2 * self.Omega)) ** 2)

    @property
    def beta_cold(self) -> float:
        return 1.0 / self.T_cold

    @property
    def beta_hot(self) -> float:
        return 1.0 / self.T_hot

    def coupling_prefactors(self) -> tuple[float, float]:
        """``(eta_hot, eta_cold)`` reproducing ``delta`` at the resonances."""
        eta_cold, eta_hot = calibrate_delta(
            self.delta, self.beta_cold, self.beta_hot, self.omega_c, self.Omega
        )
        return eta_hot, eta_cold

    def spectral_densities(self) -> tuple[OhmicSpectralDensity, OhmicSpectralDensity]:
        eta_hot, eta_cold = self.coupling_prefactors()
        return (
            OhmicSpectralDensity(eta_hot, self.omega_c),
            OhmicSpectralDensity(eta_cold, self.omega_c),
        )

    def thermal_parameters(self) -> tuple[ThermalParameters, ThermalParameters]:
        return ThermalParameters(self.beta_hot), ThermalParameters(self.beta_cold)

    @property
    def eta_otto(self) -> float:
        return 1.0 - self.eps0 / self.eps1

    @property
    def eta_carnot(self) -> float:
        return 1.0 - self.T_cold / self.T_hot


def build_compiled(spec: QubitEngineSpec, proto: Protocol) -> CompiledSystem:
    """Compiled system: gap modulation on the diagonal, transverse couplings.

    ``H_S(t) = (Omega/2) [ (s_x/Omega) sx + (1 + f(t)) (sz + 1) ]`` and
    ``L_i(t) = h_i(t) sx / 2``; the identity part pins the instantaneous
    ground energy to zero for vanishing ``s_x``.
    """
    half = spec.Omega / 2.0
    H_static = half * ((spec.s_x / spec.Omega) * SIGMA_X + (SIGMA_Z + IDENTITY))
    H_gap = half * (SIGMA_Z + IDENTITY)
    return CompiledSystem(
        dim=2,
        H_static=H_static,
        H_mod_idx=np.array([0], dtype=np.int64),
        H_mats=np.array([H_gap]),
        L_mod_idx=np.array([1, 2], dtype=np.int64),
        L_mats=np.array([SIGMA_X / 2.0, SIGMA_X / 2.0]),
        mods=[proto.f, proto.h_hot, proto.h_cold],
    )


def hamiltonian_at(spec: QubitEngineSpec, proto: Protocol, t: float):
    """System and coupling operators with their exact time derivatives at
    ``t``: ``(H_S, L_hot, L_cold, dH_S, dL_hot, dL_cold)``."""
    cs = build_compiled(spec, proto)
    return (
        cs.hamiltonian(t),
        cs.coupling(HOT, t),
        cs.coupling(COLD, t),
        cs.hamiltonian_dt(t),
        cs.coupling_dt(HOT, t),
        cs.coupling_dt(COLD, t),
    )


def gibbs_bloch_z(spec: QubitEngineSpec, f_value: float, beta: float) -> float:
    """Reference Bloch-z of the local Gibbs state at gap ``(1 + f) Omega``
    (diagnostic line for the plateau phases, valid at ``s_x = 0``)."""
    gap = (1.0 + f_value) * spec.Omega
    return -math.tanh(beta * gap / 2.0)


class _OhmicAutocorr:
    """Picklable zero-temperature autocorrelation of an Ohmic bath."""

    def __init__(self, sd: OhmicSpectralDensity):
        self.sd = sd

    def __call__(self, tau):
        return bcf_zero_temp(self.sd, np.asarray(tau))


class _OhmicSpectrum:
    def __init__(self, sd: OhmicSpectralDensity):
        self.sd = sd

    def __call__(self, omega):
        return self.sd(np.clip(np.asarray(omega, dtype=float), 0.0, None)) / math.pi


class _ThermalAutocorr:
    def __init__(self, sd: OhmicSpectralDensity, thermal: ThermalParameters):
        self.sd = sd
        self.thermal = thermal

    def __call__(self, tau):
        return thermal_correlation_grid(self.sd, self.thermal, np.asarray(tau))


class _ThermalSpectrum:
    def __init__(self, sd: OhmicSpectralDensity, beta: float):
        self.sd = sd
        self.beta = beta

    def __call__(self, omega):
        omega = np.asarray(omega, dtype=float)
        out = np.empty_like(omega)
        pos = omega > 0
        out[pos] = (
            bath_mod.bose_occupation(self.beta, omega[pos]) * self.sd(omega[pos])
        ) / math.pi
        out[~pos] = self.sd.eta_tilde / (self.beta * math.pi)
        return out


@dataclass
class EnsembleConfig:
    """Ensemble, hierarchy and solver settings of one engine run."""

    num_samples: int = 500
    k_max: int = 4
    bcf_terms: int = 5
    solver: SolverConfig = field(default_factory=SolverConfig)
    master_seed: int = 0
    workers: int | None = None
    sample_dt: float = 0.1
    process_dt: float = 0.02
    method: str = "nonlinear"
    keep_second_level: bool = False
    fit_tmax: float | None = None
    chunk_size: int = 25
    max_abort_fraction: float = 1e-3

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValueError("need at least one sample")
        if self.k_max < 0:
            raise ValueError("k_max must be non-negative")


@dataclass
class EngineContext:
    """Everything a worker needs to integrate trajectories (picklable)."""

    spec: QubitEngineSpec
    proto: Protocol
    cfg: EnsembleConfig
    bcfs: list[ExponentialBCF]
    basis: HierarchyBasis
    coeffs: HopsCoefficients
    compiled: CompiledSystem
    eta_specs: list[ProcessSpec]
    xi_specs: list[ProcessSpec | None]
    sample_times: np.ndarray
    cycle_window: tuple[float, float]

    def system(self) -> SystemSpec:
        return SystemSpec.from_compiled(self.compiled)


def _unit_fit(omega_c: float, terms: int, tmax: float) -> ExponentialBCF:
    return fit_ohmic_bcf(OhmicSpectralDensity(1.0, omega_c), terms, tmax)


def build_context(
    spec: QubitEngineSpec,
    proto: Protocol,
    cfg: EnsembleConfig,
    unit_fit: ExponentialBCF | None = None,
) -> EngineContext:
    """Fit the correlation functions, enumerate the hierarchy and prepare the
    noise specifications for an engine run."""
    horizon = proto.horizon
    fit_tmax = cfg.fit_tmax if cfg.fit_tmax is not None else horizon
    if unit_fit is None:
        unit_fit = _unit_fit(spec.omega_c, cfg.bcf_terms, fit_tmax)
    sds = spec.spectral_densities()
    thermals = spec.thermal_parameters()
    bcfs = [unit_fit.scaled(sd.eta_tilde) for sd in sds]
    basis = build_basis([b.num_terms for b in bcfs], cfg.k_max)
    coeffs = HopsCoefficients.from_bcfs(bcfs, basis)
    compiled = build_compiled(spec, proto)

    eta_specs = []
    xi_specs: list[ProcessSpec | None] = []
    for sd, th in zip(sds, thermals):
        eta_specs.append(
            ProcessSpec(
                autocorrelation=_OhmicAutocorr(sd),
                horizon=horizon,
                grid_resolution=cfg.process_dt,
                spectral_density=_OhmicSpectrum(sd),
                pad_fraction=0.5,
            )
        )
        if th.is_zero_temperature:
            xi_specs.append(None)
        else:
            xi_specs.append(
                ProcessSpec(
                    autocorrelation=_ThermalAutocorr(sd, th),
                    horizon=horizon,
                    grid_resolution=cfg.process_dt,
                    spectral_density=_ThermalSpectrum(sd, th.beta),
                    pad_fraction=1.0,
                )
            )
    sample_times = np.arange(0.0, horizon + 1e-9, cfg.sample_dt)
    cycle_window = ((proto.num_cycles - 1) * proto.Theta, proto.num_cycles * proto.Theta)
    return EngineContext(
        spec=spec,
        proto=proto,
        cfg=cfg,
        bcfs=bcfs,
        basis=basis,
        coeffs=coeffs,
        compiled=compiled,
        eta_specs=eta_specs,
        xi_specs=xi_specs,
        sample_times=sample_times,
        cycle_window=cycle_window,
    )


def trajectory_processes(ctx: EngineContext, traj: int) -> list[BathProcesses]:
    """Per-trajectory noise, seeded by (master seed, index, bath, kind)."""
    out = []
    for n in range(len(ctx.eta_specs)):
        rng_eta = process_seed(ctx.cfg.master_seed, traj, n, "driving")
        eta = sample_process(ctx.eta_specs[n], rng_eta)
        if ctx.xi_specs[n] is None:
            procs = BathProcesses.zero_temperature(eta)
        else:
            rng_xi = process_seed(ctx.cfg.master_seed, traj, n, "thermal")
            procs = BathProcesses(eta, sample_process(ctx.xi_specs[n], rng_xi))
        out.append(procs)
    return out


def run_chunk(ctx: EngineContext, start: int, count: int) -> EnsembleAccumulator:
    """Integrate trajectories ``start .. start+count-1`` into a fresh
    accumulator (the unit of work of the parallel ensemble)."""
    system = ctx.system()
    acc = EnsembleAccumulator(
        times=ctx.sample_times,
        dim=2,
        num_baths=2,
        cycle_window=ctx.cycle_window,
    )
    psi0 = np.array([0.0, 1.0], dtype=complex)  # spin down, zero energy
    for traj in range(start, start + count):
        procs = trajectory_processes(ctx, traj)
        samples = propagate_trajectory(
            psi0,
            system,
            ctx.coeffs,
            ctx.basis,
            procs,
            ctx.cfg.solver,
            ctx.sample_times,
            method=ctx.cfg.method,
            keep_second_level=ctx.cfg.keep_second_level,
        )
        accumulate_trajectory(acc, samples, ctx.coeffs, system)
    return acc


_WORKER_CTX: EngineContext | None = None


def _worker_init(ctx: EngineContext):
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _worker_run(span: tuple[int, int]) -> EnsembleAccumulator:
    assert _WORKER_CTX is not None
    return run_chunk(_WORKER_CTX, span[0], span[1])


@dataclass
class CycleMetrics:
    """Thermodynamic summary of the limit cycle (the final simulated cycle).

    Work and the average power satisfy ``power * Theta = work`` exactly; the
    efficiency divides the work by the energy drawn from the hot bath, with
    a delta-method standard error from the sample covariance.
    """

    work: float
    work_se: float
    power: float
    power_se: float
    efficiency: float
    efficiency_se: float
    work_system: float
    work_system_se: float
    work_interaction: tuple[float, float]
    bath_delta: tuple[float, float]
    bath_delta_se: tuple[float, float]
    closure_system: float
    closure_system_se: float
    closure_interaction: tuple[float, float]
    eta_otto: float
    eta_carnot: float
    bounds_ok: bool
    closure_ok: bool
    limit_cycle_index: int
    num_samples: int
    aborted: int

    @property
    def refrigerator(self) -> bool:
        return self.power < 0


def cycle_metrics(
    acc: EnsembleAccumulator, spec: QubitEngineSpec, proto: Protocol
) -> CycleMetrics:
    cov = acc.cycle
    if cov is None or cov.count < 2:
        raise ValueError("accumulator carries no cycle statistics")
    nb = acc.num_baths
    m = cov.mean
    C = cov.cov_of_mean()
    W, W_S = m[0], m[1]
    W_I = tuple(m[2 : 2 + nb])
    dHB = tuple(m[2 + nb : 2 + 2 * nb])
    dHS_cl = m[2 + 2 * nb]
    dHI_cl = tuple(m[3 + 2 * nb : 3 + 3 * nb])
    se = np.sqrt(np.clip(np.diag(C), 0.0, None))
    q_idx = 2 + nb + HOT
    Q = dHB[HOT]
    eta = W / (-Q)
    grad = np.zeros(len(m))
    grad[0] = -1.0 / Q
    grad[q_idx] = W / Q**2
    eta_se = float(np.sqrt(max(grad @ C @ grad, 0.0)))
    theta = proto.Theta
    closure_ok = bool(
        abs(dHS_cl) <= 3 * se[2 + 2 * nb] + 1e-12
        and all(
            abs(dHI_cl[n]) <= 3 * se[3 + 2 * nb + n] + 1e-12 for n in range(nb)
        )
    )
    bounds_ok = bool(eta < spec.eta_otto < spec.eta_carnot)
    return CycleMetrics(
        work=float(W),
        work_se=float(se[0]),
        power=float(W / theta),
        power_se=float(se[0] / theta),
        efficiency=float(eta),
        efficiency_se=eta_se,
        work_system=float(W_S),
        work_system_se=float(se[1]),
        work_interaction=tuple(float(x) for x in W_I),
        bath_delta=tuple(float(x) for x in dHB),
        bath_delta_se=tuple(float(se[2 + nb + n]) for n in range(nb)),
        closure_system=float(dHS_cl),
        closure_system_se=float(se[2 + 2 * nb]),
        closure_interaction=tuple(float(x) for x in dHI_cl),
        eta_otto=spec.eta_otto,
        eta_carnot=spec.eta_carnot,
        bounds_ok=bounds_ok,
        closure_ok=closure_ok,
        limit_cycle_index=proto.num_cycles,
        num_samples=acc.count,
        aborted=acc.aborted,
    )


@dataclass
class EngineResult:
    spec: QubitEngineSpec
    proto: Protocol
    cfg: EnsembleConfig
    accumulator: EnsembleAccumulator
    energy: EnergySeries
    metrics: CycleMetrics
    fit_residuals: tuple[float, float]
    basis_size: int
    wall_time: float

    def bloch(self):
        """Bloch components and standard errors, shapes (T, 3)."""
        return self.accumulator.bloch.mean, self.accumulator.bloch.stderr()


def run_engine(
    spec: QubitEngineSpec,
    proto: Protocol,
    cfg: EnsembleConfig,
    unit_fit: ExponentialBCF | None = None,
) -> EngineResult:
    """Propagate the full ensemble and assemble energies and cycle metrics.

    Work is split into chunks of trajectory indices; each worker folds its
    chunk into a private accumulator and partial results merge in index
    order, so the outcome is independent of the worker count.
    """
    t0 = time.time()
    ctx = build_context(spec, proto, cfg, unit_fit=unit_fit)
    spans = [
        (s, min(cfg.chunk_size, cfg.num_samples - s))
        for s in range(0, cfg.num_samples, cfg.chunk_size)
    ]
    workers = cfg.workers if cfg.workers is not None else (os.cpu_count() or 1)
    workers = max(1, min(workers, len(spans)))
    if workers == 1:
        partials = [run_chunk(ctx, *span) for span in spans]
    else:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_worker_init, initargs=(ctx,)
        ) as pool:
            partials = list(pool.map(_worker_run, spans))
    acc = partials[0]
    for p in partials[1:]:
        acc.merge(p)
    if acc.count == 0:
        raise RuntimeError("every trajectory aborted")
    energy = EnergySeries.from_accumulator(acc)
    metrics = cycle_metrics(acc, spec, proto)
    return EngineResult(
        spec=spec,
        proto=proto,
        cfg=cfg,
        accumulator=acc,
        energy=energy,
        metrics=metrics,
        fit_residuals=tuple(b.fit_residual for b in ctx.bcfs),
        basis_size=len(ctx.basis),
        wall_time=time.time() - t0,
    )


def work_diagram(
    result: EngineResult, which: str
) -> tuple[np.ndarray, np.ndarray, float]:
    """Parametric loop ``(X(t), <dH/dX>(t))`` over the limit cycle.

    ``which`` is ``"f"``, ``"h_hot"`` or ``"h_cold"``.  Returns the loop and
    its signed shoelace area, which equals minus the work done through that
    modulation channel up to sampling error.
    """
    acc = result.accumulator
    lo, hi = acc.cycle_window
    sel = (acc.times >= lo - 1e-9) & (acc.times <= hi + 1e-9)
    t = acc.times[sel]
    cs = result.accumulator  # alias for clarity below
    compiled = build_compiled(result.spec, result.proto)
    if which == "f":
        X = result.proto.f.value_and_derivative(t)[0]
        part = compiled.H_mats[0]
        rho = acc.rho.mean[sel]
        Y = np.einsum("ab,tba->t", part.astype(complex), rho).real
    elif which in ("h_hot", "h_cold"):
        n = HOT if which == "h_hot" else COLD
        X = result.proto.coupling(n).value_and_derivative(t)[0]
        Y = acc.dh_channel.mean[sel, n]
    else:
        raise ValueError(f"unknown work-diagram channel {which!r}")
    area = _shoelace(X, Y)
    return X, Y, area


def _shoelace(x: np.ndarray, y: np.ndarray) -> float:
    xc = np.append(x, x[0])
    yc = np.append(y, y[0])
    return 0.5 * float(np.sum(xc[:-1] * yc[1:] - xc[1:] * yc[:-1]))


@dataclass
class ScanPoint:
    label: dict
    metrics: CycleMetrics | None
    error: str | None = None


def scan(
    points: Sequence[tuple[dict, QubitEngineSpec, Protocol]],
    cfg: EnsembleConfig,
    unit_fit_cache: dict | None = None,
) -> list[ScanPoint]:
    """Run the engine per grid point; failures are recorded, not fatal.

    Each point gets an independent seed offset so scans stay reproducible
    under reordering.
    """
    results = []
    cache = unit_fit_cache if unit_fit_cache is not None else {}
    for i, (label, spec, proto) in enumerate(points):
        key = (spec.omega_c, cfg.bcf_terms, cfg.fit_tmax or proto.horizon)
        if key not in cache:
            cache[key] = _unit_fit(*key)
        point_cfg = replace(cfg, master_seed=cfg.master_seed + 7919 * i)
        try:
            res = run_engine(spec, proto, point_cfg, unit_fit=cache[key])
            results.append(ScanPoint(label=label, metrics=res.metrics))
        except Exception as exc:  # per-point failures must not kill the scan
            results.append(ScanPoint(label=label, metrics=None, error=str(exc)))
    return results
