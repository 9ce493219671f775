import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hops_engine import bath
from hops_engine.bath import (
    ExponentialBCF,
    FitError,
    OhmicSpectralDensity,
    ThermalParameters,
    bcf_zero_temp,
    calibrate_delta,
    fit_exponentials,
    fit_ohmic_bcf,
    thermal_correlation,
    thermal_correlation_grid,
    thermal_spectral_density,
)

SD = OhmicSpectralDensity(1.0, 1.0)


def test_bcf_at_zero_matches_analytic_integral():
    # (1/pi) * int_0^inf w e^-w dw = 1/pi
    assert bcf_zero_temp(SD, 0.0) == pytest.approx(1.0 / math.pi, rel=1e-14)


def test_bcf_algebraic_tail():
    # decays like tau^-2
    for tau in (30.0, 60.0, 120.0):
        ratio = abs(bcf_zero_temp(SD, tau)) / abs(bcf_zero_temp(SD, 0.0))
        assert ratio == pytest.approx(1.0 / tau**2, rel=0.01)


def test_bcf_hermiticity_many_lags():
    rng = np.random.default_rng(1)
    taus = rng.uniform(-50, 50, 100)
    a_plus = bcf_zero_temp(SD, taus)
    a_minus = bcf_zero_temp(SD, -taus)
    np.testing.assert_allclose(a_minus, np.conj(a_plus), rtol=0, atol=1e-15)


def test_spectral_density_validation():
    with pytest.raises(ValueError):
        OhmicSpectralDensity(-1.0, 1.0)
    with pytest.raises(ValueError):
        OhmicSpectralDensity(1.0, 0.0)


def test_trigamma_against_mpmath():
    rng = np.random.default_rng(0)
    z = rng.uniform(0.1, 30, 40) + 1j * rng.uniform(-80, 80, 40)
    mine = bath._trigamma(z)
    ref = np.array([complex(mpmath.polygamma(1, complex(v))) for v in z])
    np.testing.assert_allclose(mine, ref, rtol=1e-12)


def test_thermal_correlation_zero_temperature():
    th = ThermalParameters(math.inf)
    assert thermal_correlation(SD, th, 1.3) == 0
    assert np.all(thermal_correlation_grid(SD, th, np.linspace(0, 5, 7)) == 0)


def test_thermal_correlation_quadrature_vs_closed_form():
    th = ThermalParameters(beta=1.0)
    for tau in (0.0, 0.4, 2.7, -1.9):
        q = thermal_correlation(SD, th, tau)
        g = complex(thermal_correlation_grid(SD, th, np.array([tau]))[0])
        assert abs(q - g) < 1e-8


def test_thermal_correlation_hermitian():
    th = ThermalParameters(beta=0.5)
    taus = np.linspace(0.1, 8, 13)
    plus = thermal_correlation_grid(SD, th, taus)
    minus = thermal_correlation_grid(SD, th, -taus)
    np.testing.assert_allclose(minus, np.conj(plus), rtol=1e-12)


def test_thermal_spectral_density_odd_extension():
    th = ThermalParameters(beta=2.0)
    for w in (0.3, 1.0, 2.5):
        jp = thermal_spectral_density(SD, th, w)
        jm = thermal_spectral_density(SD, th, -w)
        # detailed balance between the two sides
        assert jm == pytest.approx(jp * math.exp(-2.0 * w), rel=1e-12)


def test_thermal_spectral_density_zero_frequency_excluded():
    with pytest.raises(ValueError):
        thermal_spectral_density(SD, ThermalParameters(1.0), 0.0)


def test_thermal_spectral_density_absorption_dies_at_zero_temperature():
    # the absorption side (w < 0) vanishes as beta -> inf
    vals = [
        abs(thermal_spectral_density(SD, ThermalParameters(b), -1.0))
        for b in (1.0, 5.0, 20.0)
    ]
    assert vals[0] > vals[1] > vals[2]
    assert vals[2] < 1e-8
    assert thermal_spectral_density(SD, ThermalParameters(math.inf), -1.0) == 0.0


def test_calibrate_delta_round_trip():
    delta, bc, bh, wc = 0.7, 2.0, 0.25, 1.0
    eta_c, eta_h = calibrate_delta(delta, bc, bh, wc)
    assert eta_c > 0 and eta_h > 0
    jc = thermal_spectral_density(
        OhmicSpectralDensity(eta_c, wc), ThermalParameters(bc), 1.0
    )
    jh = thermal_spectral_density(
        OhmicSpectralDensity(eta_h, wc), ThermalParameters(bh), 2.0
    )
    assert jc == pytest.approx(delta, rel=1e-12)
    assert jh == pytest.approx(delta, rel=1e-12)


def test_calibrate_delta_linear_in_delta():
    e1 = calibrate_delta(0.35, 2.0, 0.25, 1.0)
    e2 = calibrate_delta(0.7, 2.0, 0.25, 1.0)
    assert e2[0] == pytest.approx(2 * e1[0], rel=1e-12)
    assert e2[1] == pytest.approx(2 * e1[1], rel=1e-12)
    z = calibrate_delta(0.0, 2.0, 0.25, 1.0)
    assert z == (0.0, 0.0)


def test_fit_recovers_single_exponential():
    taus = np.linspace(0, 10, 200)
    vals = np.exp(-(1 + 1j) * taus)
    fit = fit_exponentials(taus, vals, 1)
    assert abs(fit.G[0] - 1.0) < 1e-10
    assert abs(fit.W[0] - (1 + 1j)) < 1e-10


def test_fit_rejects_bad_term_count():
    taus = np.linspace(0, 10, 50)
    with pytest.raises(ValueError):
        fit_exponentials(taus, np.exp(-taus), 0)


def test_fit_residual_threshold_error():
    taus = np.linspace(0, 60, 300)
    vals = bcf_zero_temp(SD, taus)
    with pytest.raises(FitError) as exc:
        fit_exponentials(taus, vals, 1, max_residual=1e-6, num_starts=3)
    assert exc.value.residual > 1e-6


def test_five_term_ohmic_fit_quality(unit_ohmic_fit_60):
    fit = unit_ohmic_fit_60
    assert fit.num_terms == 5
    assert np.all(fit.W.real > 0)
    dense = np.linspace(0, 60, 3000)
    err = np.abs(fit(dense) - bcf_zero_temp(SD, dense)).max()
    assert err / abs(bcf_zero_temp(SD, 0.0)) < 1e-3


def test_fit_scales_linearly():
    fit = fit_ohmic_bcf(OhmicSpectralDensity(2.5, 1.0), 4, 30.0)
    unit = fit_ohmic_bcf(OhmicSpectralDensity(1.0, 1.0), 4, 30.0)
    np.testing.assert_allclose(fit.G, 2.5 * unit.G, rtol=1e-12)
    np.testing.assert_allclose(fit.W, unit.W, rtol=1e-12)


def test_exponential_bcf_validation_and_eval():
    with pytest.raises(ValueError):
        ExponentialBCF(np.array([1.0]), np.array([-0.1 + 1j]))
    b = ExponentialBCF(np.array([2.0, 1j]), np.array([1.0, 0.5 + 2j]))
    tau = np.array([-1.3, 0.7, 2.1])
    np.testing.assert_allclose(b(-tau), np.conj(b(tau)), rtol=1e-14)


def test_bcf_json_round_trip():
    b = ExponentialBCF(np.array([1 + 2j, 0.5]), np.array([1 + 1j, 2.0]), 1e-4)
    doc = b.to_json(sd=SD)
    parsed = json.loads(doc)
    assert parsed["sd"]["eta_tilde"] == 1.0
    b2 = ExponentialBCF.from_json(doc)
    np.testing.assert_array_equal(b.G, b2.G)
    np.testing.assert_array_equal(b.W, b2.W)
    assert b2.fit_residual == b.fit_residual


@given(
    st.floats(0.2, 3.0),
    st.floats(0.2, 3.0),
    st.floats(-20.0, 20.0),
)
@settings(max_examples=60, deadline=None)
def test_bcf_hermiticity_property(eta, wc, tau):
    sd = OhmicSpectralDensity(eta, wc)
    assert bcf_zero_temp(sd, -tau) == pytest.approx(
        np.conj(bcf_zero_temp(sd, tau)), rel=1e-12
    )
