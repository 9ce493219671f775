"""Stationary complex Gaussian processes with a prescribed autocorrelation.

Two generation routes share one sampling interface:

* a Fourier (circulant) route that factorizes the sampled autocorrelation on
  a periodic grid -- at the grid points the ensemble correlation then equals
  the periodized autocorrelation exactly;
* a mode-sum route for baths made of discrete lines, where the process is a
  finite sum of oscillators with Gaussian amplitudes.

Both deliver the realization together with its time derivative from the same
spectral draw, so cubic Hermite interpolation between grid points is
derivative-consistent by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bath import ExponentialBCF


class NegativeSpectrumError(RuntimeError):
    """Spectral factorization of the autocorrelation produced significantly
    negative weight; the offending frequency band is reported."""


@dataclass(frozen=True)
class SpectralLines:
    """Discrete spectral content: ``autocorrelation(tau) = sum_k w_k exp(-i o_k tau)``."""

    omegas: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omegas", np.asarray(self.omegas, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if np.any(self.weights < 0):
            raise ValueError("spectral line weights must be non-negative")


@dataclass(frozen=True)
class ProcessSpec:
    """What to sample: an autocorrelation, a horizon and a grid.

    ``autocorrelation`` maps a real lag array to complex values and must be
    Hermitian (checked by spot sampling).  If ``lines`` is given it takes
    precedence and the process is synthesized as a finite mode sum.
    """

    autocorrelation: Callable[[np.ndarray], np.ndarray]
    horizon: float
    grid_resolution: float
    seed: int = 0
    lines: SpectralLines | None = None
    spectral_density: Callable[[np.ndarray], np.ndarray] | None = None
    pad_fraction: float = 0.15
    negative_weight_tol: float = 1e-3

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.grid_resolution <= 0:
            raise ValueError("grid resolution must be positive")

    def times(self) -> np.ndarray:
        n = int(round(self.horizon / self.grid_resolution))
        return np.arange(n + 1) * self.grid_resolution


@dataclass
class ProcessRealization:
    """One realization on the grid, with derivative values from the same draw.

    Calling the realization evaluates the cubic Hermite interpolant; its
    exact derivative is available through :meth:`derivative`.
    """

    times: np.ndarray
    values: np.ndarray
    derivative_values: np.ndarray
    seed: int

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        j = np.clip((t / self.dt).astype(int), 0, len(self.times) - 2)
        u = t / self.dt - j
        return j, u

    def __call__(self, t):
        j, u = self._locate(t)
        y0, y1 = self.values[j], self.values[j + 1]
        d0, d1 = self.derivative_values[j] * self.dt, self.derivative_values[j + 1] * self.dt
        u2, u3 = u * u, u * u * u
        return (
            (2 * u3 - 3 * u2 + 1) * y0
            + (u3 - 2 * u2 + u) * d0
            + (-2 * u3 + 3 * u2) * y1
            + (u3 - u2) * d1
        )

    def derivative(self, t):
        j, u = self._locate(t)
        y0, y1 = self.values[j], self.values[j + 1]
        d0, d1 = self.derivative_values[j] * self.dt, self.derivative_values[j + 1] * self.dt
        u2 = u * u
        return (
            (6 * u2 - 6 * u) * y0
            + (3 * u2 - 4 * u + 1) * d0
            + (-6 * u2 + 6 * u) * y1
            + (3 * u2 - 2 * u) * d1
        ) / self.dt


def _check_hermitian(spec: ProcessSpec):
    taus = np.array([0.11, 0.37, 0.81]) * spec.horizon
    plus = np.atleast_1d(spec.autocorrelation(taus))
    minus = np.atleast_1d(spec.autocorrelation(-taus))
    at0 = complex(np.atleast_1d(spec.autocorrelation(np.array([0.0])))[0])
    scale = max(np.abs(plus).max(), abs(at0), 1e-300)
    if np.abs(minus - np.conj(plus)).max() > 1e-6 * scale:
        raise ValueError("autocorrelation is not Hermitian")
    if at0.real < -1e-12 * scale:
        raise ValueError("autocorrelation must have non-negative real part at 0")


def _circulant_factorization(spec: ProcessSpec) -> tuple[np.ndarray, np.ndarray, int]:
    """Signed FFT frequencies, per-mode variances, and the embedding size.

    The autocorrelation is sampled over one period ``T_p >= 2*(horizon + pad)``
    with negative lags wrapped around; its inverse DFT gives the variances of
    independent spectral amplitudes.  Weights below ``-tol * max`` raise, the
    remaining small negatives are clipped to zero.
    """
    dt = spec.grid_resolution
    pad = spec.pad_fraction * spec.horizon + 4 * dt
    P = int(2 ** math.ceil(math.log2(max(2 * (spec.horizon + pad) / dt, 16))))
    freqs = 2 * math.pi * np.fft.fftfreq(P, d=dt)
    if spec.spectral_density is not None:
        # exact non-negative weights from the analytic spectrum on [0, inf);
        # the realized correlation is its Riemann sum over the FFT bins
        dw = 2 * math.pi / (P * dt)
        pos = freqs >= 0
        weights = np.zeros(P)
        weights[pos] = np.clip(spec.spectral_density(freqs[pos]), 0.0, None) * dw
        return freqs, weights, P
    # enlarging the period always reduces the periodization error of a
    # decaying autocorrelation, so retry before declaring the spectrum
    # indefinite
    for attempt in range(5):
        taus = np.arange(P) * dt
        taus = np.where(taus <= P * dt / 2, taus, taus - P * dt)
        a = np.asarray(spec.autocorrelation(taus), dtype=complex)
        weights = np.fft.ifft(a).real
        peak = max(weights.max(), 1e-300)
        bad = weights < -spec.negative_weight_tol * peak
        if not bad.any():
            freqs = 2 * math.pi * np.fft.fftfreq(P, d=dt)
            return freqs, np.clip(weights, 0.0, None), P
        if attempt < 4 and P < 2**22:
            P *= 2
            continue
        freqs = 2 * math.pi * np.fft.fftfreq(P, d=dt)
        wbad = freqs[bad]
        raise NegativeSpectrumError(
            f"negative spectral weight (min {weights.min():.3e} of peak {peak:.3e}) "
            f"in band [{wbad.min():.3f}, {wbad.max():.3f}]"
        )
    raise AssertionError("unreachable")


def sample_process(
    spec: ProcessSpec, rng: np.random.Generator | None = None
) -> ProcessRealization:
    """Draw one realization with ``M(z) = 0``, ``M(z z) = 0`` and ensemble
    correlation ``M(z(t) z*(s)) = autocorrelation(t - s)`` at the grid points.

    Deterministic given ``spec.seed`` (or an explicit generator).
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    t = spec.times()
    n = len(t)
    if spec.lines is not None:
        om, w = spec.lines.omegas, spec.lines.weights
        z = (rng.standard_normal(len(om)) + 1j * rng.standard_normal(len(om))) / math.sqrt(2)
        amp = np.sqrt(w) * z
        phase = np.exp(-1j * np.outer(t, om))
        values = phase @ amp
        deriv = phase @ (-1j * om * amp)
        return ProcessRealization(t, values, deriv, spec.seed)

    _check_hermitian(spec)
    freqs, weights, P = _circulant_factorization(spec)
    z = (rng.standard_normal(P) + 1j * rng.standard_normal(P)) / math.sqrt(2)
    amp = np.sqrt(weights) * z
    # evaluate sum_k amp_k exp(-i w_k t_j) on the grid: a forward FFT
    values = np.fft.fft(amp)[:n]
    deriv = np.fft.fft(-1j * freqs * amp)[:n]
    return ProcessRealization(t, values, deriv, spec.seed)


def sample_thermal_with_derivative(
    spec: ProcessSpec, rng: np.random.Generator | None = None
) -> ProcessRealization:
    """Thermal-noise realization including its time derivative.

    Identical sampling route as :func:`sample_process`; the derivative comes
    from multiplying the same spectral draw by ``-i w``, so the interpolated
    value and derivative stay consistent to interpolation order.
    """
    return sample_process(spec, rng)


def zero_process(horizon: float, dt: float) -> ProcessRealization:
    """The identically vanishing process (zero-temperature thermal noise)."""
    n = int(round(horizon / dt))
    t = np.arange(n + 1) * dt
    z = np.zeros(n + 1, dtype=complex)
    return ProcessRealization(t, z, z.copy(), seed=-1)


def process_seed(master_seed: int, trajectory: int, bath: int, kind: str) -> np.random.Generator:
    """Reproducible per-trajectory generator.

    The stream is keyed by (master seed, trajectory index, bath index,
    process kind), so ensembles parallelize without seed collisions.
    """
    kind_code = {"driving": 0, "thermal": 1, "fock": 2}[kind]
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(trajectory, bath, kind_code))
    return np.random.default_rng(ss)


@dataclass
class ShiftAccumulator:
    """Per-term registers of the running memory integral
    ``int_0^t conj(alpha)(t-s) <L^dag>_s ds`` of the norm-stabilized method.

    Register ``r_u`` decays at ``conj(W_u)`` and is driven by
    ``conj(G_u) <L^dag>``; the shift is the sum of all registers.
    """

    registers: np.ndarray

    @classmethod
    def zeros(cls, num_terms: int) -> "ShiftAccumulator":
        return cls(np.zeros(num_terms, dtype=complex))

    @property
    def value(self) -> complex:
        return complex(self.registers.sum())


def shift_update(
    acc: ShiftAccumulator,
    bcf: ExponentialBCF,
    expectation_L_dagger: complex,
    dt: float,
) -> ShiftAccumulator:
    """Advance the shift registers by ``dt`` with an exponential-integrator
    step, exact for an expectation value held constant over the step:

        ``r <- e^(-conj(W) dt) r + conj(G) <L^dag> (1 - e^(-conj(W) dt)) / conj(W)``
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    wc = np.conj(bcf.W)
    decay = np.exp(-wc * dt)
    drive = np.conj(bcf.G) * expectation_L_dagger * (1.0 - decay) / wc
    return ShiftAccumulator(decay * acc.registers + drive)
