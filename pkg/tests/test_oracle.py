import math

import numpy as np
import pytest

from hops_engine import oracle
from hops_engine.bath import OhmicSpectralDensity, ThermalParameters, bcf_zero_temp
from hops_engine.oracle import (
    DimensionError,
    DiscretizedBath,
    bcf_reproduction_error,
    discretize,
    exact_propagate,
)
from hops_engine.propagator import CompiledSystem, ModulationTable

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
I2 = np.eye(2, dtype=complex)
SD = OhmicSpectralDensity(1.0, 1.0)


def _static_system(gap=1.0, coupling=1.0):
    return CompiledSystem(
        dim=2,
        H_static=gap / 2.0 * (SZ + I2),
        H_mod_idx=np.zeros(0, dtype=np.int64),
        H_mats=np.zeros((0, 2, 2)),
        L_mod_idx=np.array([-1], dtype=np.int64),
        L_mats=np.array([coupling * SX / 2]),
        mods=[],
    )


def test_single_mode_is_pure_phase():
    b = discretize(SD, 1, 2.0)
    taus = np.linspace(0, 5, 50)
    vals = b.bcf(taus)
    np.testing.assert_allclose(np.abs(vals), np.abs(vals[0]), rtol=1e-12)


def test_dense_discretization_reproduces_bcf():
    b = discretize(SD, 64, 10.0)
    assert bcf_reproduction_error(b, SD, 5.0) < 0.01


def test_recurrence_time():
    b = discretize(SD, 8, 4.0)
    assert b.recurrence_time() == pytest.approx(2 * math.pi / 0.5, rel=1e-12)


def test_zero_coupling_keeps_bath_energy_constant():
    b = DiscretizedBath(np.array([1.0, 2.0]), np.array([0.0, 0.0]), (4, 4))
    ts = np.linspace(0, 5, 11)
    res = exact_propagate(
        _static_system(), [b], [ThermalParameters(1.0)], 5.0, ts,
        num_thermal_samples=5, seed=1,
    )
    assert np.abs(res.bath_delta).max() < 1e-10
    assert np.abs(res.interaction).max() < 1e-10


def test_rabi_exchange_period():
    # one resonant mode: excitation cycles with period 2 pi / g
    g = 0.08
    b = DiscretizedBath(np.array([1.0]), np.array([g]), (4,))
    period = 2 * math.pi / g
    ts = np.linspace(0.0, period, 41)
    # start with one thermal quantum by choosing beta so nbar ~ 1 would be
    # statistical; instead drive a direct matrix check of the same model
    model = oracle.build_model(_static_system(), [b], 20000)
    H = oracle._hamiltonian(model, 0.0).toarray()
    psi0 = np.zeros(8, dtype=complex)
    psi0[1 * 4 + 1] = 1.0  # |down, n=1>
    from scipy.linalg import expm

    occ = []
    for t in ts:
        psi = expm(-1j * H * t) @ psi0
        occ.append(abs(psi[1 * 4 + 1]) ** 2)
    occ = np.array(occ)
    # near-full exchange at half period, near-full return at the period
    assert occ[20] < 0.05
    assert occ[-1] > 0.9
    np.testing.assert_allclose(
        occ, np.cos(g * ts / 2) ** 2, atol=0.08
    )


def test_exact_energy_conservation_and_state_quality():
    b = discretize(SD, 3, 3.0, fock_cutoffs=6)
    ts = np.linspace(0, 4, 9)
    res = exact_propagate(
        _static_system(gap=1.0, coupling=0.6), [b], [ThermalParameters(math.inf)],
        4.0, ts,
    )
    drift = np.abs(res.total_energy - res.total_energy[0]).max()
    assert drift < 1e-8 * max(1.0, abs(res.total_energy[0]))
    for rho in res.rho:
        np.testing.assert_allclose(rho, rho.conj().T, atol=1e-12)
        assert np.trace(rho).real == pytest.approx(1.0, abs=1e-12)
        ev = np.linalg.eigvalsh(rho)
        assert ev.min() > -1e-12
    assert res.leakage < 1e-6


def test_dimension_bound():
    b = discretize(SD, 6, 5.0, fock_cutoffs=12)
    with pytest.raises(DimensionError):
        exact_propagate(
            _static_system(), [b], [ThermalParameters(math.inf)], 1.0,
            np.linspace(0, 1, 3), dim_bound=1000,
        )


def test_occupation_near_cutoff_rejected():
    b = DiscretizedBath(np.array([0.05]), np.array([0.1]), (4,))
    with pytest.raises(DimensionError, match="occupation"):
        exact_propagate(
            _static_system(), [b], [ThermalParameters(0.1)], 1.0,
            np.linspace(0, 1, 3), num_thermal_samples=50, seed=0,
        )


def test_hops_inputs_from_discrete_bath():
    b = discretize(SD, 4, 5.0)
    e = b.exponential_bcf()
    taus = np.linspace(0, 4, 20)
    np.testing.assert_allclose(e(taus), b.bcf(taus), rtol=1e-6)
    lines = b.driving_lines()
    np.testing.assert_array_equal(lines.omegas, b.omegas)
    th = b.thermal_lines(ThermalParameters(2.0))
    np.testing.assert_allclose(
        th.weights, b.couplings**2 / np.expm1(2.0 * b.omegas), rtol=1e-12
    )
    assert b.thermal_lines(ThermalParameters(math.inf)) is None
