"""Bath descriptions: spectral densities, correlation functions and their
multi-exponential representation.

Everything in here is pure and immutable.  Energies are measured in units of
the qubit scale ``Omega`` and times in ``1/Omega`` unless stated otherwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.optimize import least_squares


class FitError(RuntimeError):
    """Raised when the exponential fit cannot reach the requested residual.

    Carries the best residual found in :attr:`residual`.
    """

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class QuadratureError(RuntimeError):
    """Raised when adaptive quadrature fails to reach the requested tolerance."""


@dataclass(frozen=True)
class OhmicSpectralDensity:
    """Ohmic spectral density with exponential cutoff,
    ``J(w) = eta_tilde * w * exp(-w / omega_c)`` for ``w >= 0``.
    """

    eta_tilde: float
    omega_c: float

    def __post_init__(self):
        if self.eta_tilde <= 0:
            raise ValueError(f"eta_tilde must be positive, got {self.eta_tilde}")
        if self.omega_c <= 0:
            raise ValueError(f"omega_c must be positive, got {self.omega_c}")

    def __call__(self, omega):
        omega = np.asarray(omega, dtype=float)
        return self.eta_tilde * omega * np.exp(-omega / self.omega_c)

    def reorganization_energy(self) -> float:
        """``(1/pi) * integral J(w)/w dw``, a rough coupling-strength scale."""
        return self.eta_tilde * self.omega_c / math.pi


@dataclass(frozen=True)
class ThermalParameters:
    """Inverse temperature of a bath.  ``beta = math.inf`` marks zero temperature."""

    beta: float

    def __post_init__(self):
        if not (self.beta > 0):
            raise ValueError(f"beta must be positive (or inf), got {self.beta}")

    @property
    def is_zero_temperature(self) -> bool:
        return math.isinf(self.beta)

    @classmethod
    def from_temperature(cls, temperature: float) -> "ThermalParameters":
        if temperature == 0:
            return cls(beta=math.inf)
        return cls(beta=1.0 / temperature)


def bose_occupation(beta: float, omega):
    """Mean thermal occupation ``1 / (exp(beta*omega) - 1)``.

    Stable for small ``beta*omega``; zero at ``beta = inf``.
    """
    omega = np.asarray(omega, dtype=float)
    if math.isinf(beta):
        return np.zeros_like(omega)
    return 1.0 / np.expm1(beta * omega)


def bcf_zero_temp(sd: OhmicSpectralDensity, tau):
    """Zero-temperature bath correlation function for the Ohmic-exponential
    spectral density, in closed form::

        alpha(tau) = (eta_tilde / pi) * omega_c**2 / (1 + i*omega_c*tau)**2

    which is ``(1/pi) * int_0^inf J(w) exp(-i*w*tau) dw``.  Entire in ``tau``,
    Hermitian (``alpha(-tau) = conj(alpha(tau))``), decays like ``tau**-2``.
    """
    tau = np.asarray(tau)
    return sd.eta_tilde / math.pi * sd.omega_c**2 / (1.0 + 1j * sd.omega_c * tau) ** 2


def _thermal_integrand_cutoff(sd: OhmicSpectralDensity, beta: float) -> float:
    """Frequency beyond which ``n(beta*w) * J(w)`` is below 1e-14 of its peak."""
    w = np.linspace(1e-6, 200.0 * sd.omega_c, 20000)
    f = bose_occupation(beta, w) * sd(w)
    peak = f.max()
    above = np.nonzero(f > 1e-14 * peak)[0]
    return float(w[above[-1]]) if len(above) else sd.omega_c


def thermal_correlation(
    sd: OhmicSpectralDensity,
    thermal: ThermalParameters,
    tau: float,
    abs_tol: float = 1e-10,
) -> complex:
    """Autocorrelation of the thermal noise process,

        ``(1/pi) * int_0^inf n(beta*w) J(w) exp(-i*w*tau) dw``

    by adaptive quadrature.  Twice differentiable in ``tau`` for the
    Ohmic-exponential density at finite temperature.
    """
    if thermal.is_zero_temperature:
        return 0.0 + 0.0j
    beta = thermal.beta
    w_max = _thermal_integrand_cutoff(sd, beta)

    def integrand_re(w):
        return bose_occupation(beta, w) * sd(w) * math.cos(w * tau) / math.pi

    def integrand_im(w):
        return -bose_occupation(beta, w) * sd(w) * math.sin(w * tau) / math.pi

    parts = []
    for fn in (integrand_re, integrand_im):
        val, err = quad(fn, 0.0, w_max, epsabs=abs_tol, epsrel=0.0, limit=400)
        if err > 50 * abs_tol:
            raise QuadratureError(
                f"thermal correlation quadrature reached {err:.2e}, "
                f"requested {abs_tol:.2e} (tau={tau})"
            )
        parts.append(val)
    return complex(parts[0], parts[1])


def _trigamma(z: np.ndarray) -> np.ndarray:
    """Trigamma function for complex arguments with ``Re z > 0`` (vectorized).

    Recurrence pushes the argument to ``Re z >= 16`` where the asymptotic
    series converges to near machine precision.
    """
    z = np.asarray(z, dtype=complex)
    out = np.zeros_like(z)
    zz = z.copy()
    # psi_1(z) = psi_1(z+1) + 1/z^2
    while True:
        small = zz.real < 16.0
        if not small.any():
            break
        out[small] += 1.0 / zz[small] ** 2
        zz[small] += 1.0

    inv = 1.0 / zz
    inv2 = inv * inv
    # Bernoulli numbers B_2, B_4, ..., B_14
    bern = [1.0 / 6, -1.0 / 30, 1.0 / 42, -1.0 / 30, 5.0 / 66, -691.0 / 2730, 7.0 / 6]
    series = inv + 0.5 * inv2
    term = inv
    for b in bern:
        term = term * inv2
        series = series + b * term
    return out + series


def thermal_correlation_grid(
    sd: OhmicSpectralDensity, thermal: ThermalParameters, taus: np.ndarray
) -> np.ndarray:
    """Vectorized thermal autocorrelation on a grid of lags.

    Uses the closed form obtained by expanding the Bose factor in a geometric
    series, ``int_0^inf w e^(-a w) n(beta w) dw = trigamma(1 + a/beta) / beta**2``
    with ``a = 1/omega_c + i*tau``.  Agrees with :func:`thermal_correlation`
    to quadrature accuracy and is cheap enough for long process grids.
    """
    taus = np.asarray(taus, dtype=float)
    if thermal.is_zero_temperature:
        return np.zeros(taus.shape, dtype=complex)
    beta = thermal.beta
    a = 1.0 / sd.omega_c + 1j * taus
    return sd.eta_tilde / math.pi / beta**2 * _trigamma(1.0 + a / beta)


def thermal_spectral_density(
    sd: OhmicSpectralDensity, thermal: ThermalParameters, omega: float
) -> float:
    """Effective thermal spectral density on the full frequency axis,

        ``J_beta(w) = J(w) / (1 - exp(-beta*w))``

    with the odd extension ``J(w) := -J(-w)`` for ``w < 0``.  For ``w > 0``
    this is the emission weight ``J(w) * (n + 1)``; for ``w < 0`` the
    absorption weight ``J(|w|) * n``, which vanishes at zero temperature.
    ``w = 0`` is excluded from the domain.
    """
    if omega == 0:
        raise ValueError("thermal spectral density is not defined at omega = 0")
    j = sd(omega) if omega > 0 else -sd(-omega)
    if thermal.is_zero_temperature:
        return float(j) if omega > 0 else 0.0
    return float(j / -np.expm1(-thermal.beta * omega))


def calibrate_delta(
    delta: float,
    beta_cold: float,
    beta_hot: float,
    omega_c: float,
    omega: float = 1.0,
) -> tuple[float, float]:
    """Coupling prefactors ``(eta_cold, eta_hot)`` such that the thermal
    spectral densities of the two baths agree at the respective qubit
    resonances::

        J_beta_cold(omega) / omega = J_beta_hot(2*omega) / omega = delta

    obtained by inverting ``delta = eta * exp(-w/omega_c) * (1 - exp(-beta*w))**-1
    * (w/omega)`` at ``w = omega`` (cold) and ``w = 2*omega`` (hot).
    """
    if delta < 0:
        raise ValueError("delta must be non-negative")
    eta_cold = delta * -np.expm1(-beta_cold * omega) * math.exp(omega / omega_c)
    eta_hot = (
        delta * -np.expm1(-beta_hot * 2 * omega) * math.exp(2 * omega / omega_c) / 2.0
    )
    return float(eta_cold), float(eta_hot)


@dataclass(frozen=True)
class ExponentialBCF:
    """Multi-exponential representation ``alpha(tau) ~ sum_u G_u exp(-W_u tau)``
    of a bath correlation function, valid for ``tau >= 0`` and extended to
    negative lags by Hermitian symmetry.

    All decay rates must satisfy ``Re(W) > 0``.
    """

    G: np.ndarray
    W: np.ndarray
    fit_residual: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "G", np.atleast_1d(np.asarray(self.G, dtype=complex)))
        object.__setattr__(self, "W", np.atleast_1d(np.asarray(self.W, dtype=complex)))
        if self.G.shape != self.W.shape or self.G.ndim != 1:
            raise ValueError("G and W must be 1-d arrays of equal length")
        if not np.all(self.W.real > 0):
            raise ValueError("all exponential rates must have positive real part")

    @property
    def num_terms(self) -> int:
        return len(self.G)

    @property
    def terms(self) -> list[tuple[complex, complex]]:
        return list(zip(self.G.tolist(), self.W.tolist()))

    def __call__(self, tau):
        """Evaluate the represented correlation function (Hermitian in tau)."""
        tau = np.asarray(tau)
        at = np.abs(tau)
        val = np.einsum("u,u...->...", self.G, np.exp(-np.multiply.outer(self.W, at)))
        return np.where(tau >= 0, val, np.conj(val))

    def scaled(self, factor: float) -> "ExponentialBCF":
        """Same decay structure with amplitudes scaled by ``factor``."""
        return ExponentialBCF(self.G * factor, self.W, self.fit_residual)

    def to_json(self, sd: OhmicSpectralDensity | None = None) -> str:
        doc = {
            "terms": [
                {"G": [g.real, g.imag], "W": [w.real, w.imag]} for g, w in self.terms
            ],
            "residual": self.fit_residual,
        }
        if sd is not None:
            doc["sd"] = {"eta_tilde": sd.eta_tilde, "omega_c": sd.omega_c}
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExponentialBCF":
        doc = json.loads(text)
        G = np.array([complex(*t["G"]) for t in doc["terms"]])
        W = np.array([complex(*t["W"]) for t in doc["terms"]])
        return cls(G, W, float(doc.get("residual", 0.0)))

    @classmethod
    def from_modes(
        cls, omegas: Sequence[float], weights: Sequence[float], damping: float = 1e-8
    ) -> "ExponentialBCF":
        """Exact representation of a discrete-mode bath,
        ``alpha(tau) = sum |g|^2 exp(-i w tau)``, with a tiny real damping so
        the positivity constraint on ``Re(W)`` holds.
        """
        omegas = np.asarray(omegas, dtype=float)
        weights = np.asarray(weights, dtype=float)
        return cls(weights.astype(complex), damping + 1j * omegas)


def _model_matrix(taus: np.ndarray, W: np.ndarray) -> np.ndarray:
    return np.exp(-np.multiply.outer(taus, W))


def _solve_amplitudes(taus, values, W):
    A = _model_matrix(taus, W)
    G, *_ = np.linalg.lstsq(A, values, rcond=None)
    return G, A @ G - values


def _polish_full(taus, values, G, W, weight):
    """Joint Gauss-Newton refinement of amplitudes and rates with the exact
    Jacobian; removes the finite-difference floor of the projected stage."""
    m = len(G)

    def split(x):
        return (
            x[:m] + 1j * x[m : 2 * m],
            np.exp(x[2 * m : 3 * m]) + 1j * x[3 * m :],
        )

    def join(G, W):
        return np.concatenate([G.real, G.imag, np.log(W.real), W.imag])

    def resid(x):
        g, w = split(x)
        r = (_model_matrix(taus, w) @ g - values) * weight
        return np.concatenate([r.real, r.imag])

    def jac(x):
        g, w = split(x)
        E = _model_matrix(taus, w)  # (n, m)
        dG = E
        dW = -g[None, :] * taus[:, None] * E
        # chain rule for the log/imag parametrization of W
        cols = [dG, 1j * dG, dW * w.real[None, :], 1j * dW]
        J = np.concatenate(cols, axis=1) * weight
        return np.concatenate([J.real, J.imag], axis=0)

    try:
        sol = least_squares(
            resid, join(G, W), jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15
        )
        g, w = split(sol.x)
        return g, w
    except Exception:
        return G, W


def fit_exponentials(
    taus: np.ndarray,
    values: np.ndarray,
    num_terms: int,
    window: tuple[float, float] | None = None,
    max_residual: float | None = None,
    num_starts: int = 12,
    seed: int = 7,
    rate_scale: float = 1.0,
) -> ExponentialBCF:
    """Fit ``sum_u G_u exp(-W_u tau)`` to a sampled correlation function.

    Uses separable (variable-projection) nonlinear least squares: the rates
    are optimized with amplitudes solved linearly at every step, restarted
    from several random rate configurations.  ``Re(W) > 0`` is enforced by
    parametrizing ``Re(W) = exp(x)``.

    Parameters
    ----------
    taus, values
        Sample grid (non-negative lags) and correlation values on it.
    num_terms
        Number of exponential terms; must be >= 1.
    window
        Restricts the fit to samples inside ``[window[0], window[1]]``.
    max_residual
        If given, a :class:`FitError` carrying the best residual is raised
        when the relative max-norm residual stays above this value.
    rate_scale
        Characteristic rate (e.g. the cutoff frequency) for the random
        initialization range.

    Returns
    -------
    ExponentialBCF
        Best fit found; ``fit_residual`` is the relative max-norm error on
        the input samples inside the window.
    """
    if num_terms < 1:
        raise ValueError("num_terms must be >= 1")
    taus = np.asarray(taus, dtype=float)
    values = np.asarray(values, dtype=complex)
    if window is not None:
        keep = (taus >= window[0]) & (taus <= window[1])
        taus, values = taus[keep], values[keep]
    if len(taus) < 2 * num_terms:
        raise ValueError("not enough samples for the requested number of terms")
    span = taus.max() - taus.min()
    scale = np.abs(values).max()
    weights = 1.0 / scale

    def pack(W):
        return np.concatenate([np.log(W.real), W.imag])

    def unpack(x):
        return np.exp(x[:num_terms]) + 1j * x[num_terms:]

    def resid(x):
        W = unpack(x)
        _, r = _solve_amplitudes(taus, values, W)
        r = r * weights
        return np.concatenate([r.real, r.imag])

    rng = np.random.default_rng(seed)
    lo, hi = 0.1 / max(span, 1e-12), 10.0 * rate_scale
    best = None
    starts = []
    # one structured start: geometrically spaced rates, mild common rotation
    starts.append(
        np.geomspace(max(lo, 1e-3 * rate_scale), hi / 2, num_terms)
        + 1j * rate_scale * np.linspace(0.1, 1.0, num_terms)
    )
    for _ in range(num_starts - 1):
        re = np.exp(rng.uniform(np.log(lo), np.log(hi), num_terms))
        im = rng.uniform(-2.0, 2.0, num_terms) * rate_scale
        starts.append(re + 1j * im)

    for W0 in starts:
        try:
            sol = least_squares(
                resid,
                pack(np.asarray(W0)),
                method="lm",
                max_nfev=4000,
                xtol=1e-15,
                ftol=1e-15,
                gtol=1e-15,
            )
        except Exception:
            continue
        W = unpack(sol.x)
        G, r = _solve_amplitudes(taus, values, W)
        linf = float(np.abs(r).max() / scale)
        if best is None or linf < best[0]:
            best = (linf, G, W)

    if best is None:
        raise FitError("all fit starts failed", residual=math.inf)
    _, G, W = best
    G, W = _polish_full(taus, values, G, W, weights)
    _, r = _solve_amplitudes(taus, values, W)
    linf = float(np.abs(r).max() / scale)
    if max_residual is not None and linf > max_residual:
        raise FitError(
            f"fit residual {linf:.3e} above threshold {max_residual:.3e}",
            residual=linf,
        )
    return ExponentialBCF(G, W, fit_residual=linf)


def fit_ohmic_bcf(
    sd: OhmicSpectralDensity,
    num_terms: int,
    t_max: float,
    num_samples: int = 400,
    **kwargs,
) -> ExponentialBCF:
    """Fit the zero-temperature Ohmic BCF on ``[0, t_max]``.

    Samples on a log-spaced grid (plus tau = 0), which balances the sharp
    initial decay against the algebraic tail.  Amplitudes scale linearly with
    ``eta_tilde``, so fits are computed for the unit-prefactor density and
    rescaled; this keeps results for the two engine baths bitwise consistent.
    """
    unit_sd = OhmicSpectralDensity(1.0, sd.omega_c)
    taus = np.concatenate(
        [[0.0], np.geomspace(1e-3 / sd.omega_c, t_max, num_samples - 1)]
    )
    values = bcf_zero_temp(unit_sd, taus)
    kwargs.setdefault("rate_scale", sd.omega_c)
    fit = fit_exponentials(taus, values, num_terms, **kwargs)
    return fit.scaled(sd.eta_tilde)
