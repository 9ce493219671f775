import math

import numpy as np
import pytest

from hops_engine.bath import ExponentialBCF
from hops_engine.hierarchy import HopsCoefficients, build_basis
from hops_engine.observables import (
    CovWelford,
    EnergySeries,
    EnsembleAccumulator,
    GridMismatchError,
    Welford,
    accumulate_trajectory,
    bath_energy_flow,
    collective_observable,
    coupling_channel,
    interaction_energy,
    total_power,
)
from hops_engine.propagator import (
    BathProcesses,
    CompiledSystem,
    ModulationTable,
    SolverConfig,
    SystemSpec,
    propagate_trajectory,
)
from hops_engine.stochproc import ProcessSpec, sample_process, zero_process

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
I2 = np.eye(2, dtype=complex)


def test_welford_against_numpy():
    rng = np.random.default_rng(0)
    xs = rng.standard_normal((40, 3))
    w = Welford.zeros(3)
    for x in xs:
        w.update(x)
    np.testing.assert_allclose(w.mean, xs.mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(
        w.stderr(), xs.std(axis=0, ddof=1) / math.sqrt(40), rtol=1e-12
    )


def test_welford_identical_updates_have_zero_spread():
    w = Welford.zeros(2)
    x = np.array([1.3, -0.2])
    w.update(x)
    mean_before = w.mean.copy()
    w.update(x)
    np.testing.assert_array_equal(w.mean, mean_before)
    np.testing.assert_allclose(w.m2, 0.0, atol=1e-30)


def test_welford_merge_matches_sequential():
    rng = np.random.default_rng(1)
    xs = rng.standard_normal((30, 2))
    seq = Welford.zeros(2)
    for x in xs:
        seq.update(x)
    a = Welford.zeros(2)
    b = Welford.zeros(2)
    for x in xs[:11]:
        a.update(x)
    for x in xs[11:]:
        b.update(x)
    a.merge(b)
    np.testing.assert_allclose(a.mean, seq.mean, rtol=1e-12)
    np.testing.assert_allclose(a.m2, seq.m2, rtol=1e-12)
    assert a.count == 30


def test_cov_welford_matches_numpy():
    rng = np.random.default_rng(2)
    xs = rng.standard_normal((50, 3)) @ np.diag([1.0, 2.0, 0.5])
    w = CovWelford.zeros(3)
    for x in xs:
        w.update(x)
    np.testing.assert_allclose(w.mean, xs.mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(
        w.cov_of_mean(), np.cov(xs.T) / 50, rtol=1e-10
    )


def _tiny_system(coupled=True):
    bcf = ExponentialBCF(np.array([0.5]), np.array([1.0 + 1j]))
    basis = build_basis((1,), 2)
    coeffs = HopsCoefficients.from_bcfs([bcf], basis)
    h = ModulationTable.constant(1.0 if coupled else 0.0)
    cs = CompiledSystem(
        dim=2, H_static=0.5 * (SZ + I2), H_mod_idx=np.zeros(0, dtype=np.int64),
        H_mats=np.zeros((0, 2, 2)), L_mod_idx=np.array([0], dtype=np.int64),
        L_mats=np.array([SX / 2]), mods=[h],
    )
    system = SystemSpec.from_compiled(cs)
    return bcf, basis, coeffs, system


def _trajectory(system, coeffs, basis, seed=1, ts=None, coupled=True):
    bcf = ExponentialBCF(np.array([0.5]), np.array([1.0 + 1j]))
    eta = sample_process(ProcessSpec(bcf, 6.0, 0.05, seed=seed))
    procs = [BathProcesses.zero_temperature(eta)]
    ts = np.linspace(0, 6, 13) if ts is None else ts
    return (
        propagate_trajectory(
            np.array([1, 0], dtype=complex), system, coeffs, basis, procs,
            SolverConfig(), ts, method="nonlinear", keep_second_level=True,
        ),
        ts,
    )


def test_closed_system_density_is_pure_projector():
    bcf, basis, coeffs, system = _tiny_system(coupled=False)
    s, ts = _trajectory(system, coeffs, basis, coupled=False)
    acc = EnsembleAccumulator(times=ts, dim=2, num_baths=1)
    accumulate_trajectory(acc, s, coeffs, system)
    rho = acc.rho.mean
    for i in range(len(ts)):
        np.testing.assert_allclose(rho[i] @ rho[i], rho[i], atol=1e-8)
        assert np.trace(rho[i]).real == pytest.approx(1.0, abs=1e-9)
        # exactly hermitian by construction
        np.testing.assert_array_equal(rho[i], rho[i].conj().T)


def test_flows_vanish_when_decoupled():
    bcf, basis, coeffs, system = _tiny_system(coupled=False)
    s, ts = _trajectory(system, coeffs, basis, coupled=False)
    assert np.abs(bath_energy_flow(s, coeffs, system)).max() < 1e-12
    assert np.abs(interaction_energy(s, coeffs, system)).max() < 1e-12


def test_interaction_starts_at_zero():
    bcf, basis, coeffs, system = _tiny_system()
    s, ts = _trajectory(system, coeffs, basis)
    assert interaction_energy(s, coeffs, system)[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_total_power_zero_for_static_hamiltonians():
    bcf, basis, coeffs, system = _tiny_system()
    s, ts = _trajectory(system, coeffs, basis)
    p, p_sys, p_int = total_power(s, coeffs, system)
    assert np.abs(p).max() < 1e-12


def test_collective_specializes_to_interaction():
    bcf, basis, coeffs, system = _tiny_system()
    s, ts = _trajectory(system, coeffs, basis)
    L = np.asarray(system.L[0](0.0))
    c = collective_observable(s, coeffs, [(L.conj().T, 0, 1)])
    inter = interaction_energy(s, coeffs, system)[:, 0]
    np.testing.assert_allclose(2 * c.real, inter, rtol=1e-10, atol=1e-12)


def test_collective_order_zero_is_plain_expectation():
    bcf, basis, coeffs, system = _tiny_system()
    s, ts = _trajectory(system, coeffs, basis)
    c = collective_observable(s, coeffs, [(SZ, 0, 0)])
    rz = (np.abs(s.psi0[:, 0]) ** 2 - np.abs(s.psi0[:, 1]) ** 2) / s.norm_sq
    np.testing.assert_allclose(c.real, rz, rtol=1e-10)
    assert np.abs(c.imag).max() < 1e-12


def test_collective_order_cap():
    bcf, basis, coeffs, system = _tiny_system()
    s, ts = _trajectory(system, coeffs, basis)
    with pytest.raises(ValueError, match="cap"):
        collective_observable(s, coeffs, [(SZ, 3, 0)])


def test_collective_order_two_needs_second_level():
    bcf, basis, coeffs, system = _tiny_system()
    s, ts = _trajectory(system, coeffs, basis)
    s.second_level = None
    with pytest.raises(ValueError, match="second-level"):
        collective_observable(s, coeffs, [(I2, 0, 2)])


def test_accumulator_grid_mismatch():
    bcf, basis, coeffs, system = _tiny_system()
    s, ts = _trajectory(system, coeffs, basis)
    acc = EnsembleAccumulator(times=ts + 0.5, dim=2, num_baths=1)
    with pytest.raises(GridMismatchError):
        accumulate_trajectory(acc, s, coeffs, system)


def test_aborted_trajectories_are_excluded():
    bcf, basis, coeffs, system = _tiny_system()
    s, ts = _trajectory(system, coeffs, basis)
    s.aborted = True
    acc = EnsembleAccumulator(times=ts, dim=2, num_baths=1)
    accumulate_trajectory(acc, s, coeffs, system)
    assert acc.count == 0 and acc.aborted == 1


def test_accumulator_merge_is_deterministic_reduction():
    bcf, basis, coeffs, system = _tiny_system()
    ts = np.linspace(0, 6, 13)
    accs = []
    for chunk in ((1, 2), (3, 4)):
        acc = EnsembleAccumulator(times=ts, dim=2, num_baths=1)
        for seed in chunk:
            s, _ = _trajectory(system, coeffs, basis, seed=seed)
            accumulate_trajectory(acc, s, coeffs, system)
        accs.append(acc)
    merged = accs[0]
    merged.merge(accs[1])
    seq = EnsembleAccumulator(times=ts, dim=2, num_baths=1)
    for seed in (1, 2, 3, 4):
        s, _ = _trajectory(system, coeffs, basis, seed=seed)
        accumulate_trajectory(seq, s, coeffs, system)
    np.testing.assert_allclose(merged.flow.mean, seq.flow.mean, rtol=1e-12)
    np.testing.assert_allclose(merged.flow.m2, seq.flow.m2, rtol=1e-9)
    assert merged.count == seq.count == 4


def test_energy_series_bookkeeping_shapes():
    bcf, basis, coeffs, system = _tiny_system()
    ts = np.linspace(0, 6, 13)
    acc = EnsembleAccumulator(times=ts, dim=2, num_baths=1, cycle_window=(0.0, 6.0))
    for seed in range(4):
        s, _ = _trajectory(system, coeffs, basis, seed=seed)
        accumulate_trajectory(acc, s, coeffs, system)
    es = EnergySeries.from_accumulator(acc)
    assert es.total_delta.value[0] == pytest.approx(0.0, abs=1e-12)
    assert es.bath_delta.value.shape == (13, 1)
    res = es.energy_balance_residual()
    assert np.isfinite(res)
