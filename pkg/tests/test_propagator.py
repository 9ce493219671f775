import math

import numpy as np
import pytest
from scipy.linalg import expm

from hops_engine import _kernels
from hops_engine.bath import ExponentialBCF
from hops_engine.hierarchy import HopsCoefficients, build_basis, coupling_edges
from hops_engine.propagator import (
    BathProcesses,
    CompiledSystem,
    ModulationTable,
    SolverConfig,
    SystemSpec,
    TrajectoryError,
    propagate_trajectory,
    rhs_linear,
    rhs_nonlinear,
    _process_arrays,
    _rhs_reference,
)
from hops_engine.stochproc import ProcessSpec, sample_process, zero_process

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
I2 = np.eye(2, dtype=complex)


def _small_setup():
    bcfs = [
        ExponentialBCF(np.array([1 + 0.5j, 0.2 - 0.1j]), np.array([1 + 1j, 2 - 0.5j])),
        ExponentialBCF(np.array([0.3 + 0.05j]), np.array([0.5 + 0.2j])),
    ]
    basis = build_basis((2, 1), 2)
    coeffs = HopsCoefficients.from_bcfs(bcfs, basis)
    f = ModulationTable(
        ramps=np.array([[0.0, 1.0, 0.0, 1.0], [4.0, 5.0, 1.0, 0.0]]), period=10.0
    )
    h1 = ModulationTable(
        ramps=np.array([[1.0, 2.0, 0.0, 1.0], [3.5, 4.5, 1.0, 0.0]]), period=10.0
    )
    h2 = ModulationTable.constant(0.7)
    cs = CompiledSystem(
        dim=2,
        H_static=0.5 * (SZ + I2),
        H_mod_idx=np.array([0], dtype=np.int64),
        H_mats=np.array([0.5 * (SZ + I2)]),
        L_mod_idx=np.array([1, 2], dtype=np.int64),
        L_mats=np.array([SX / 2, SX / 2]),
        mods=[f, h1, h2],
    )
    system = SystemSpec.from_compiled(cs)
    pe1 = ExponentialBCF(np.array([1.0]), np.array([1 + 1j]))
    pe2 = ExponentialBCF(np.array([0.3]), np.array([0.5 + 0.2j]))
    xib = ExponentialBCF(np.array([0.25]), np.array([0.8 + 0.3j]))
    p1 = sample_process(ProcessSpec(pe1, 10.0, 0.05, seed=3))
    p2 = sample_process(ProcessSpec(pe2, 10.0, 0.05, seed=4))
    xi1 = sample_process(ProcessSpec(xib, 10.0, 0.05, seed=5))
    procs = [BathProcesses(p1, xi1), BathProcesses.zero_temperature(p2)]
    return cs, system, coeffs, basis, procs


def test_kernel_matches_reference_rhs():
    cs, system, coeffs, basis, procs = _small_setup()
    rng = np.random.default_rng(5)
    nvar = len(basis) * 2 + basis.m_total
    y = rng.standard_normal(nvar) + 1j * rng.standard_normal(nvar)
    lo, hi, slot, coef = coupling_edges(basis, coeffs)
    periods, shifts, ramps, nramps = cs.kernel_mod_arrays()
    ev, ed, xv, xd, dt = _process_arrays(procs, 2)
    for nl, ref_fn in ((False, rhs_linear), (True, rhs_nonlinear)):
        ref = ref_fn(y, 2.345, system, coeffs, basis, procs)
        out = np.zeros(nvar, dtype=complex)
        st = _kernels.hops_rhs(
            2.345, y, out, nl, len(basis), 2, 2, coeffs.damping, lo, hi, slot,
            coef, coeffs.bath_of_slot, np.conj(coeffs.G), np.conj(coeffs.W),
            cs.H_static.astype(complex), cs.H_mod_idx, cs.H_mats.astype(complex),
            cs.L_mod_idx, cs.L_mats.astype(complex),
            np.conj(np.transpose(cs.L_mats, (0, 2, 1))), periods, shifts, ramps,
            nramps, ev, ed, xv, xd, dt, 1e-12,
        )
        assert st == _kernels.STATUS_OK
        np.testing.assert_allclose(out, ref, rtol=0, atol=1e-12 * np.abs(ref).max())


def test_rhs_linear_against_hand_assembled_matrix():
    # single bath, single term, k_max = 1, D = 2: two coupled blocks
    G, W = 0.4 + 0.1j, 0.9 + 1.3j
    bcf = ExponentialBCF(np.array([G]), np.array([W]))
    basis = build_basis((1,), 1)
    coeffs = HopsCoefficients.from_bcfs([bcf], basis)
    H = 0.7 * SZ + 0.2 * SX
    L = 0.3 * SX + 0.1j * (SX @ SZ)
    cs = CompiledSystem(
        dim=2, H_static=H, H_mod_idx=np.zeros(0, dtype=np.int64),
        H_mats=np.zeros((0, 2, 2)), L_mod_idx=np.array([-1], dtype=np.int64),
        L_mats=np.array([L]), mods=[],
    )
    system = SystemSpec(
        dimension=2, H=lambda t: H, L=[lambda t: L], dL=[lambda t: 0 * L],
        compiled=cs,
    )
    eta = sample_process(
        ProcessSpec(ExponentialBCF(np.array([1.0]), np.array([1 + 1j])), 3.0, 0.05,
                    seed=8)
    )
    procs = [BathProcesses.zero_temperature(eta)]
    t = 1.234
    e_star = np.conj(eta(t))
    sq = np.sqrt(G)
    big = np.zeros((5, 5), dtype=complex)
    A = -1j * H + e_star * L
    big[:2, :2] = A
    big[2:4, 2:4] = A - W * np.eye(2)
    big[:2, 2:4] = -1j * sq * L.conj().T  # raising neighbor enters via L^dag
    big[2:4, :2] = -1j * sq * L  # lowering neighbor enters via L
    rng = np.random.default_rng(0)
    y = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    ref = big @ y
    ref[4] = 0.0  # register untouched in the linear method
    got = rhs_linear(y, t, system, coeffs, basis, procs)
    np.testing.assert_allclose(got, ref, rtol=1e-12)


def test_closed_system_limit():
    # couplings off: physical slot evolves unitarily, auxiliaries stay zero
    bcf = ExponentialBCF(np.array([0.5]), np.array([1.0 + 1j]))
    basis = build_basis((1,), 2)
    coeffs = HopsCoefficients.from_bcfs([bcf], basis)
    cs = CompiledSystem(
        dim=2, H_static=0.5 * (SZ + I2), H_mod_idx=np.zeros(0, dtype=np.int64),
        H_mats=np.zeros((0, 2, 2)), L_mod_idx=np.array([0], dtype=np.int64),
        L_mats=np.array([SX / 2]), mods=[ModulationTable.constant(0.0)],
    )
    system = SystemSpec.from_compiled(cs)
    eta = sample_process(ProcessSpec(bcf, 6.0, 0.05, seed=1))
    procs = [BathProcesses.zero_temperature(eta)]
    ts = np.linspace(0, 6, 13)
    psi0 = np.array([0.6, 0.8], dtype=complex)
    out = propagate_trajectory(
        psi0, system, coeffs, basis, procs, SolverConfig(rtol=1e-9, atol=1e-12),
        ts, method="linear",
    )
    assert np.abs(out.first_level).max() == 0.0
    for i, t in enumerate(ts):
        exact = expm(-1j * cs.hamiltonian(0.0) * t) @ psi0
        np.testing.assert_allclose(out.psi0[i], exact, atol=1e-7)
    np.testing.assert_allclose(out.norm_sq, 1.0, atol=1e-7)


def test_pure_damping_of_auxiliary():
    # H = 0, L = 0, no noise: a state parked in slot k decays at k.W
    bcf = ExponentialBCF(np.array([0.5]), np.array([0.8 + 0.6j]))
    basis = build_basis((1,), 2)
    coeffs = HopsCoefficients.from_bcfs([bcf], basis)
    zero = ModulationTable.constant(0.0)
    cs = CompiledSystem(
        dim=2, H_static=np.zeros((2, 2)), H_mod_idx=np.zeros(0, dtype=np.int64),
        H_mats=np.zeros((0, 2, 2)), L_mod_idx=np.array([0], dtype=np.int64),
        L_mats=np.array([SX / 2]), mods=[zero],
    )
    system = SystemSpec.from_compiled(cs)
    procs = [BathProcesses.zero_temperature(zero_process(4.0, 0.05))]
    y0 = np.zeros(len(basis) * 2 + 1, dtype=complex)
    k2 = basis.level_ordinals(2)[0]
    y0[2 * k2] = 1.0
    t = 1.7
    deriv = rhs_linear(y0, 0.3, system, coeffs, basis, procs)
    np.testing.assert_allclose(
        deriv[2 * k2], -2 * (0.8 + 0.6j) * y0[2 * k2], rtol=1e-12
    )


def test_deterministic_replay():
    cs, system, coeffs, basis, procs = _small_setup()
    ts = np.linspace(0, 5, 11)
    psi0 = np.array([1.0, 0.0], dtype=complex)
    a = propagate_trajectory(
        psi0, system, coeffs, basis, procs, SolverConfig(), ts, method="nonlinear"
    )
    b = propagate_trajectory(
        psi0, system, coeffs, basis, procs, SolverConfig(), ts, method="nonlinear"
    )
    np.testing.assert_array_equal(a.psi0, b.psi0)
    np.testing.assert_array_equal(a.first_level, b.first_level)


def test_generic_path_matches_kernel():
    cs, system, coeffs, basis, procs = _small_setup()
    ts = np.linspace(0, 5, 11)
    psi0 = np.array([1.0, 0.0], dtype=complex)
    solver = SolverConfig(rtol=1e-9, atol=1e-11)
    fast = propagate_trajectory(
        psi0, system, coeffs, basis, procs, solver, ts, method="nonlinear"
    )
    plain = SystemSpec(dimension=2, H=system.H, L=system.L, dL=system.dL,
                       dH=system.dH, compiled=None)
    slow = propagate_trajectory(
        psi0, plain, coeffs, basis, procs, solver, ts, method="nonlinear"
    )
    np.testing.assert_allclose(fast.psi0, slow.psi0, atol=2e-6)
    np.testing.assert_allclose(fast.first_level, slow.first_level, atol=2e-6)


def test_nonlinear_norm_floor_abort():
    cs, system, coeffs, basis, procs = _small_setup()
    ts = np.linspace(0, 2, 5)
    tiny = np.array([1e-9, 0.0], dtype=complex)
    out = propagate_trajectory(
        tiny, system, coeffs, basis, procs, SolverConfig(), ts, method="nonlinear"
    )
    assert out.aborted
    assert out.status == _kernels.STATUS_NORM_FLOOR


def test_second_level_retention():
    cs, system, coeffs, basis, procs = _small_setup()
    ts = np.linspace(0, 3, 7)
    psi0 = np.array([1.0, 0.0], dtype=complex)
    out = propagate_trajectory(
        psi0, system, coeffs, basis, procs, SolverConfig(), ts,
        method="nonlinear", keep_second_level=True,
    )
    assert out.second_level is not None
    assert out.second_level.shape == (7, len(basis.level_ordinals(2)), 2)
    assert np.array_equal(
        out.second_level_k, basis.indices[basis.level_ordinals(2)]
    )


def test_modulation_smoothness_and_periodicity():
    m = ModulationTable(
        ramps=np.array([[1.0, 3.0, 0.0, 1.0], [6.0, 8.0, 1.0, 0.0]]), period=10.0
    )
    t = np.linspace(0, 10, 2001)
    v, dv = m.value_and_derivative(t)
    assert v.min() >= 0 and v.max() <= 1
    # C2: numerical second differences stay bounded across the ramp edges
    d2 = np.diff(v, 2) / (t[1] - t[0]) ** 2
    assert np.abs(np.diff(d2)).max() < 2.0 * (t[1] - t[0]) * 100
    # derivative consistent with finite differences
    fd = np.gradient(v, t)
    np.testing.assert_allclose(fd[5:-5], dv[5:-5], atol=5e-3)
    # periodicity
    np.testing.assert_allclose(m(np.array([2.0])), m(np.array([12.0])), rtol=1e-12)


def test_system_spec_validation():
    with pytest.raises(ValueError, match="Hermitian"):
        SystemSpec(dimension=2, H=lambda t: np.array([[0, 1j], [1j, 0]]),
                   L=[lambda t: SX], dL=[lambda t: SX * 0])
    with pytest.raises(ValueError):
        SystemSpec(dimension=1, H=lambda t: np.zeros((1, 1)), L=[], dL=[])
