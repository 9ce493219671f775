"""Ensemble estimators: reduced state, bath energy flow, interaction energy,
power splits, and normal-ordered collective bath observables.

All bath quantities come from first-level (and for order-2 observables,
second-level) hierarchy states.  In the norm-stabilized method every
quadratic form is divided by the squared norm of the physical state, so all
trajectories enter with equal weight.  Estimators are accumulated with
Welford statistics and support deterministic merging across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

from .hierarchy import HopsCoefficients
from .propagator import SystemSpec, TrajectorySamples


class GridMismatchError(ValueError):
    """Trajectory samples do not live on the accumulator's time grid."""


@dataclass
class Welford:
    """Streaming mean and squared deviations over arrays of fixed shape.

    Complex data is accumulated on its real view so standard errors come out
    per real component.  ``merge`` implements the parallel combine and is
    associative, so a fixed reduction order gives bitwise-stable results.
    """

    mean: np.ndarray
    m2: np.ndarray
    count: int = 0

    @classmethod
    def zeros(cls, shape, complex_data: bool = False) -> "Welford":
        dtype = complex if complex_data else float
        return cls(np.zeros(shape, dtype=dtype), np.zeros(shape, dtype=float))

    def update(self, x: np.ndarray):
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        delta2 = x - self.mean
        if np.iscomplexobj(self.mean):
            self.m2 = self.m2 + (delta * np.conj(delta2)).real
        else:
            self.m2 = self.m2 + delta * delta2

    def merge(self, other: "Welford"):
        if other.count == 0:
            return
        if self.count == 0:
            self.mean, self.m2, self.count = other.mean, other.m2, other.count
            return
        n = self.count + other.count
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.count / n)
        if np.iscomplexobj(self.mean):
            self.m2 = (
                self.m2 + other.m2 + (delta * np.conj(delta)).real
                * self.count * other.count / n
            )
        else:
            self.m2 = self.m2 + other.m2 + delta**2 * self.count * other.count / n
        self.count = n

    def stderr(self) -> np.ndarray:
        if self.count < 2:
            return np.full_like(self.m2, np.inf, dtype=float)
        return np.sqrt(self.m2 / (self.count * (self.count - 1)))


@dataclass
class CovWelford:
    """Streaming mean and covariance of a small vector of cycle scalars."""

    mean: np.ndarray
    m2: np.ndarray
    count: int = 0

    @classmethod
    def zeros(cls, dim: int) -> "CovWelford":
        return cls(np.zeros(dim), np.zeros((dim, dim)))

    def update(self, x: np.ndarray):
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + np.outer(delta, x - self.mean)

    def merge(self, other: "CovWelford"):
        if other.count == 0:
            return
        if self.count == 0:
            self.mean, self.m2, self.count = other.mean, other.m2, other.count
            return
        n = self.count + other.count
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.count / n)
        self.m2 = (
            self.m2 + other.m2 + np.outer(delta, delta) * self.count * other.count / n
        )
        self.count = n

    def cov_of_mean(self) -> np.ndarray:
        if self.count < 2:
            return np.full_like(self.m2, np.inf)
        return self.m2 / (self.count * (self.count - 1))


def _norm(samples: TrajectorySamples) -> np.ndarray:
    if samples.method == "nonlinear":
        return samples.norm_sq
    return np.ones_like(samples.norm_sq)


def coupling_channel(
    samples: TrajectorySamples,
    coeffs: HopsCoefficients,
    bath: int,
    op: np.ndarray,
    rate_weights: np.ndarray | None = None,
    thermal: np.ndarray | None = None,
) -> np.ndarray:
    """Single-trajectory estimate of ``<A B_n + h.c.>``-type channels.

    Evaluates ``2 Re[(sum_u c_u <psi0|A|psi^(e_u)> + xi <psi0|A|psi0>) / N]``
    where ``c_u = sqrt(G_u)`` by default or ``sqrt(G_u) W_u`` when
    ``rate_weights`` are given, and ``xi`` is the per-time thermal factor
    (``samples.xi[:, n]`` by default).  The building block behind interaction
    energy, bath energy flow, power contributions and work-diagram channels.
    """
    slots = np.nonzero(coeffs.bath_of_slot == bath)[0]
    c = coeffs.sqrt_G[slots]
    if rate_weights is not None:
        c = c * rate_weights[slots]
    bra = samples.psi0.conj() @ op  # (T, D)
    lvl = samples.first_level[:, slots, :]  # (T, M_n, D)
    s = np.einsum("td,tmd,m->t", bra, lvl, c)
    xi = samples.xi[:, bath] if thermal is None else thermal
    s = s + xi * np.einsum("td,td->t", bra, samples.psi0)
    return 2.0 * (s / _norm(samples)).real


def interaction_energy(
    samples: TrajectorySamples, coeffs: HopsCoefficients, system: SystemSpec
) -> np.ndarray:
    """Per-trajectory interaction energy estimate, shape ``(T, num_baths)``.

    Real by the ``+ c.c.`` construction; its ensemble mean is ``<H_I^(n)>``.
    """
    return _time_dependent_channel(samples, coeffs, system, "interaction")


def bath_energy_flow(
    samples: TrajectorySamples, coeffs: HopsCoefficients, system: SystemSpec
) -> np.ndarray:
    """Per-trajectory bath energy flow estimate, shape ``(T, num_baths)``.

    Positive values mean energy flowing out of the bath.  The thermal part
    uses the derivative values stored with the samples.
    """
    return -_time_dependent_channel(samples, coeffs, system, "flow")


def total_power(
    samples: TrajectorySamples, coeffs: HopsCoefficients, system: SystemSpec
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-trajectory total power and its split ``(P, P_S, P_I per bath)``.

    ``P_S`` is the negative expectation of the explicit system-Hamiltonian
    rate; ``P_I`` reuses the interaction-energy expression with the coupling
    operator replaced by its time derivative.  Positive values are usable
    output.  Requires a system with a time-derivative callable.
    """
    if system.dH is None:
        raise ValueError("total power needs the Hamiltonian time derivative")
    norm = _norm(samples)
    dyad = np.einsum("ta,tb->tab", samples.psi0, samples.psi0.conj())
    p_sys = np.empty(len(samples.times))
    for i, t in enumerate(samples.times):
        dH = np.asarray(system.dH(t), dtype=complex)
        p_sys[i] = -np.einsum("ab,ba->", dH, dyad[i]).real / norm[i]
    p_int = -_time_dependent_channel(samples, coeffs, system, "power")
    return p_sys + p_int.sum(axis=1), p_sys, p_int


def _time_dependent_channel(samples, coeffs, system, kind: str) -> np.ndarray:
    """Shared evaluation for channels whose operator is L_n(t)-dependent."""
    T = len(samples.times)
    nb = system.num_baths
    out = np.empty((T, nb))
    norm = _norm(samples)
    for n in range(nb):
        slots = np.nonzero(coeffs.bath_of_slot == n)[0]
        c = coeffs.sqrt_G[slots]
        if kind == "flow":
            c = c * coeffs.W[slots]
        lvl = samples.first_level[:, slots, :]
        s = np.zeros(T, dtype=complex)
        for i, t in enumerate(samples.times):
            if kind == "power":
                A = np.asarray(system.dL[n](t), dtype=complex).conj().T
            else:
                A = np.asarray(system.L[n](t), dtype=complex).conj().T
            bra = samples.psi0[i].conj() @ A
            s[i] = bra @ (lvl[i].T @ c)
            if kind == "flow":
                # the hierarchy term carries d/dt alpha = -W alpha while the
                # c-number thermal drive differentiates to xi-dot directly,
                # so the two enter with opposite signs (single-mode oracle
                # pins this down)
                s[i] -= samples.xi_dot[i, n] * (bra @ samples.psi0[i])
            else:
                s[i] += samples.xi[i, n] * (bra @ samples.psi0[i])
        out[:, n] = 2.0 * (s / norm).real
    return out


def level_index_map(samples: TrajectorySamples):
    """Map from flat occupation tuples to columns of the retained levels."""
    m_total = samples.first_level.shape[1]
    table = {tuple([0] * m_total): ("zero", 0)}
    for m in range(m_total):
        key = tuple(1 if j == m else 0 for j in range(m_total))
        table[key] = ("first", m)
    if samples.second_level_k is not None:
        for col, row in enumerate(samples.second_level_k):
            table[tuple(int(x) for x in row)] = ("second", col)
    return table


def _aux_state(samples, table, key):
    kind, col = table[key]
    if kind == "zero":
        return samples.psi0
    if kind == "first":
        return samples.first_level[:, col, :]
    return samples.second_level[:, col, :]


def _bath_level_indices(coeffs: HopsCoefficients, bath: int, level: int, m_total: int):
    """Occupation rows of total order ``level`` supported on one bath's slots,
    with the multinomial factor and amplitude ``sqrt(G^k k!)`` of each."""
    slots = np.nonzero(coeffs.bath_of_slot == bath)[0]
    if level == 0:
        yield tuple([0] * m_total), 1.0, 1.0 + 0.0j
        return
    for combo in combinations_with_replacement(slots, level):
        row = [0] * m_total
        for s in combo:
            row[s] += 1
        binom = math.factorial(level)
        gk = 1.0 + 0.0j
        for s in set(combo):
            binom //= math.factorial(row[s])
            gk *= coeffs.G[s] ** row[s] * math.factorial(row[s])
        yield tuple(row), float(binom), np.sqrt(gk)


def collective_observable(
    samples: TrajectorySamples,
    coeffs: HopsCoefficients,
    terms: list[tuple[np.ndarray, int, int]],
    bath_bra: int = 0,
    bath_ket: int = 0,
) -> np.ndarray:
    """Per-trajectory estimate of ``sum_a <F_a (B_i^dag)^(p_a) (B_j)^(q_a)>``.

    ``terms`` holds ``(F, p, q)`` with orders at most 2; level-2 entries need
    samples propagated with ``keep_second_level=True``.  Thermal baths
    contribute the binomial cross terms in ``xi`` and ``xi*``.
    """
    T = len(samples.times)
    table = level_index_map(samples)
    m_total = samples.first_level.shape[1]
    norm = _norm(samples)
    total = np.zeros(T, dtype=complex)
    xi_i = samples.xi[:, bath_bra]
    xi_j = samples.xi[:, bath_ket]
    for F, p, q in terms:
        if p > 2 or q > 2 or p < 0 or q < 0:
            raise ValueError(f"collective observable order ({p},{q}) above cap 2")
        if max(p, q) > 1 and samples.second_level is None:
            raise ValueError("order-2 observables need retained second-level states")
        F = np.asarray(F, dtype=complex)
        for pp in range(p + 1):
            for qq in range(q + 1):
                pref = (
                    math.comb(p, pp)
                    * math.comb(q, qq)
                    * np.conj(xi_i) ** (p - pp)
                    * xi_j ** (q - qq)
                )
                block = np.zeros(T, dtype=complex)
                for krow_b, binb, gb in _bath_level_indices(
                    coeffs, bath_bra, pp, m_total
                ):
                    bra_state = _aux_state(samples, table, krow_b)
                    for krow_k, bink, gk in _bath_level_indices(
                        coeffs, bath_ket, qq, m_total
                    ):
                        ket_state = _aux_state(samples, table, krow_k)
                        amp = binb * bink * np.conj(gb) * gk
                        block += amp * np.einsum(
                            "td,de,te->t", bra_state.conj(), F, ket_state
                        )
                total += pref * block
    return total / norm


@dataclass
class EnsembleAccumulator:
    """Streaming Monte-Carlo averages of everything the engine needs.

    Per sample time: reduced density matrix, Bloch vector (for qubits), bath
    energy flows, interaction energies, system energy, power contributions,
    work-diagram channels, and per-trajectory cumulative bath energy changes.
    Aborted trajectories are counted but never enter the averages.
    """

    times: np.ndarray
    dim: int
    num_baths: int
    cycle_window: tuple[float, float] | None = None
    aborted: int = 0
    rho: Welford = field(init=False)
    bloch: Welford | None = field(init=False)
    flow: Welford = field(init=False)
    interaction: Welford = field(init=False)
    bath_delta: Welford = field(init=False)
    dh_channel: Welford = field(init=False)
    system_energy: Welford = field(init=False)
    system_power: Welford = field(init=False)
    interaction_power: Welford = field(init=False)
    cycle: CovWelford | None = field(init=False)

    # layout of the cycle-scalar vector:
    #   0 work, 1 system work, 2.. per-bath interaction work,
    #   then per-bath bath-energy change, then system/interaction closure
    def __post_init__(self):
        T = len(self.times)
        nb = self.num_baths
        self.rho = Welford.zeros((T, self.dim, self.dim), complex_data=True)
        self.bloch = Welford.zeros((T, 3)) if self.dim == 2 else None
        self.flow = Welford.zeros((T, nb))
        self.interaction = Welford.zeros((T, nb))
        self.bath_delta = Welford.zeros((T, nb))
        self.dh_channel = Welford.zeros((T, nb))
        self.system_energy = Welford.zeros(T)
        self.system_power = Welford.zeros(T)
        self.interaction_power = Welford.zeros((T, nb))
        self.cycle = (
            CovWelford.zeros(3 + 3 * nb) if self.cycle_window is not None else None
        )

    @property
    def count(self) -> int:
        return self.rho.count

    def merge(self, other: "EnsembleAccumulator"):
        if not np.array_equal(self.times, other.times):
            raise GridMismatchError("cannot merge accumulators on different grids")
        self.aborted += other.aborted
        for name in (
            "rho", "bloch", "flow", "interaction", "bath_delta", "dh_channel",
            "system_energy", "system_power", "interaction_power", "cycle",
        ):
            mine, theirs = getattr(self, name), getattr(other, name)
            if mine is not None:
                mine.merge(theirs)
        return self


def accumulate_trajectory(
    acc: EnsembleAccumulator,
    samples: TrajectorySamples,
    coeffs: HopsCoefficients,
    system: SystemSpec,
) -> EnsembleAccumulator:
    """Fold one trajectory into the ensemble estimators.

    In the norm-stabilized method every quadratic form carries the
    ``1 / <psi0|psi0>`` weight; in the linear method raw dyads are averaged.
    Aborted trajectories only increment the abort counter.
    """
    if len(samples.times) != len(acc.times) or np.abs(
        samples.times - acc.times
    ).max() > 1e-9:
        raise GridMismatchError("trajectory samples on a different time grid")
    if samples.aborted:
        acc.aborted += 1
        return acc

    norm = _norm(samples)
    dyad = np.einsum("ta,tb->tab", samples.psi0, samples.psi0.conj())
    rho = dyad / norm[:, None, None]
    acc.rho.update(rho)
    if acc.bloch is not None:
        rx = 2.0 * rho[:, 0, 1].real
        ry = -2.0 * rho[:, 0, 1].imag
        rz = (rho[:, 0, 0] - rho[:, 1, 1]).real
        acc.bloch.update(np.stack([rx, ry, rz], axis=1))

    flow = bath_energy_flow(samples, coeffs, system)
    acc.flow.update(flow)
    inter = _time_dependent_channel(samples, coeffs, system, "interaction")
    acc.interaction.update(inter)
    delta_b = _cumtrapz(-flow, samples.times)
    acc.bath_delta.update(delta_b)

    T = len(samples.times)
    e_sys = np.empty(T)
    p_sys = np.empty(T)
    for i, t in enumerate(samples.times):
        H = np.asarray(system.H(t), dtype=complex)
        e_sys[i] = np.einsum("ab,ba->", H, rho[i]).real
        dH = (
            np.asarray(system.dH(t), dtype=complex)
            if system.dH is not None
            else np.zeros_like(H)
        )
        p_sys[i] = -np.einsum("ab,ba->", dH, rho[i]).real
    acc.system_energy.update(e_sys)
    acc.system_power.update(p_sys)

    p_int = -_time_dependent_channel(samples, coeffs, system, "power")
    acc.interaction_power.update(p_int)

    dh = np.empty((T, acc.num_baths))
    for n in range(acc.num_baths):
        base = _base_coupling_operator(system, n)
        dh[:, n] = coupling_channel(samples, coeffs, n, base.conj().T)
    acc.dh_channel.update(dh)

    if acc.cycle is not None:
        lo, hi = acc.cycle_window
        sel = (acc.times >= lo - 1e-9) & (acc.times <= hi + 1e-9)
        tw = acc.times[sel]
        p_tot = p_sys[sel] + p_int[sel].sum(axis=1)
        vec = [np.trapezoid(p_tot, tw), np.trapezoid(p_sys[sel], tw)]
        vec += [np.trapezoid(p_int[sel, n], tw) for n in range(acc.num_baths)]
        vec += [
            delta_b[sel][-1, n] - delta_b[sel][0, n] for n in range(acc.num_baths)
        ]
        vec.append(e_sys[sel][-1] - e_sys[sel][0])
        vec += [inter[sel][-1, n] - inter[sel][0, n] for n in range(acc.num_baths)]
        acc.cycle.update(np.array(vec))
    return acc


def _base_coupling_operator(system: SystemSpec, n: int) -> np.ndarray:
    """Unmodulated coupling matrix (the conjugate variable of h_n)."""
    if system.compiled is not None:
        return system.compiled.L_mats[n].astype(complex)
    return np.asarray(system.L[n](0.0), dtype=complex)


def _cumtrapz(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    dt = np.diff(t)
    avg = 0.5 * (y[1:] + y[:-1])
    out = np.zeros_like(y)
    out[1:] = np.cumsum(avg * dt[:, None] if y.ndim == 2 else avg * dt, axis=0)
    return out


@dataclass
class SeriesQuantity:
    value: np.ndarray
    stderr: np.ndarray


@dataclass
class EnergySeries:
    """All energetic quantities on the sample grid with standard errors.

    ``bath_delta`` integrates the negative flow, so the bookkeeping identity
    ``total_delta = system + sum(interaction + bath_delta)`` holds up to
    integration and Monte-Carlo error; ``power_total`` integrates to
    ``-total_delta`` in the same sense.
    """

    times: np.ndarray
    system: SeriesQuantity
    interaction: SeriesQuantity
    flow: SeriesQuantity
    bath_delta: SeriesQuantity
    power_system: SeriesQuantity
    power_interaction: SeriesQuantity
    total_delta: SeriesQuantity
    power_total: SeriesQuantity

    @classmethod
    def from_accumulator(cls, acc: EnsembleAccumulator) -> "EnergySeries":
        sq = lambda w: SeriesQuantity(w.mean.copy(), w.stderr())
        system = sq(acc.system_energy)
        interaction = sq(acc.interaction)
        flow = sq(acc.flow)
        bath_delta = sq(acc.bath_delta)
        p_sys = sq(acc.system_power)
        p_int = sq(acc.interaction_power)
        e0 = system.value[0] + interaction.value.sum(axis=1)[0]
        total = (
            system.value
            + interaction.value.sum(axis=1)
            + bath_delta.value.sum(axis=1)
            - e0
        )
        total_se = np.sqrt(
            system.stderr**2
            + (interaction.stderr**2).sum(axis=1)
            + (bath_delta.stderr**2).sum(axis=1)
        )
        p_tot = p_sys.value + p_int.value.sum(axis=1)
        p_tot_se = np.sqrt(p_sys.stderr**2 + (p_int.stderr**2).sum(axis=1))
        return cls(
            times=acc.times.copy(),
            system=system,
            interaction=interaction,
            flow=flow,
            bath_delta=bath_delta,
            power_system=p_sys,
            power_interaction=p_int,
            total_delta=SeriesQuantity(total, total_se),
            power_total=SeriesQuantity(p_tot, p_tot_se),
        )

    def energy_balance_residual(
        self, window: tuple[float, float] | None = None
    ) -> float:
        """Relative mismatch between the integrated total power and the
        reconstructed global energy change over ``window`` (default: all)."""
        sel = np.ones_like(self.times, dtype=bool)
        if window is not None:
            sel = (self.times >= window[0] - 1e-9) & (self.times <= window[1] + 1e-9)
        t = self.times[sel]
        work = np.trapezoid(self.power_total.value[sel], t)
        drop = self.total_delta.value[sel][-1] - self.total_delta.value[sel][0]
        scale = max(abs(work), abs(drop), 1e-12)
        return abs(work + drop) / scale
