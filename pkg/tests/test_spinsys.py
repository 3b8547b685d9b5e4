import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.linalg import expm

from nvtumble.errors import StepSizeError, ValidationError
from nvtumble.rotor import Trajectory, make_rng
from nvtumble.spinsys import (
    SPIN,
    SpinState,
    adiabatic_phase_ledger,
    adiabatic_populations,
    eigenframe,
    frames_along,
    geometric_phase_increment,
    m0_states,
    plus_states,
    propagate_with_field,
    propagate_zero_field,
    schrodinger_evolve,
    schrodinger_history,
    secular_phase_rate,
    unwrap_relative_phase,
    zero_field_hamiltonian,
)

D = 1.0
angles = st.tuples(st.floats(0.0, math.pi), st.floats(-math.pi, math.pi))


def _axis(theta, phi):
    return np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)])


def test_hamiltonian_aligned_and_transverse():
    assert np.allclose(zero_field_hamiltonian(0.0, 0.0, D), np.diag([D, 0, D]), atol=1e-15)
    h = zero_field_hamiltonian(math.pi / 2, 0.0, D)
    assert np.allclose(np.diag(h).real, [D / 2, D, D / 2], atol=1e-15)
    assert abs(h[0, 2]) == pytest.approx(D / 2)
    assert abs(h[0, 1]) < 1e-15 and abs(h[1, 2]) < 1e-15


@settings(max_examples=50, deadline=None)
@given(angles)
def test_hamiltonian_is_projected_spin_square(ang):
    theta, phi = ang
    h = zero_field_hamiltonian(theta, phi, D)
    assert np.allclose(h, h.conj().T, atol=1e-14)
    sz = np.tensordot(_axis(theta, phi), SPIN, axes=1)
    assert np.allclose(h, D * sz @ sz, atol=1e-13)
    assert np.allclose(np.linalg.eigvalsh(h), [0, D, D], atol=1e-10 * D)


@settings(max_examples=50, deadline=None)
@given(angles)
def test_eigenframe_orthonormal_and_eigen(ang):
    f = eigenframe(*ang)
    v = f.eigenvectors
    assert np.allclose(v.conj() @ v.T, np.eye(3), atol=1e-12)
    h = zero_field_hamiltonian(*ang, D)
    energies = np.einsum("ij,jk,ik->i", v.conj(), h, v).real
    assert np.allclose(energies, [D, 0, D], atol=1e-12)
    n = _axis(*ang)
    assert np.allclose(m0_states(n), f.zero)
    if 1e-6 < ang[0] < math.pi - 1e-6:
        assert np.allclose(plus_states(n), f.plus)


def test_eigenframe_examples():
    assert np.allclose(eigenframe(0.0, 0.0).zero, [0, 1, 0])
    assert np.allclose(eigenframe(math.pi / 2, 0.0).zero, [-1 / math.sqrt(2), 0, 1 / math.sqrt(2)])


def test_secular_rate():
    B = np.array([0.3, 0.0, 0.7])
    assert secular_phase_rate(0.0, 0.0, [0, 0, 2.0], 1.5) == pytest.approx(3.0)
    assert secular_phase_rate(math.pi / 2, 0.0, [0, 0, 2.0], 1.5) == pytest.approx(0.0, abs=1e-15)
    expected = 2.0 * (_axis(math.pi / 3, 0.0) @ B)
    assert secular_phase_rate(math.pi / 3, 0.0, B, 2.0) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(2.0 * (0.7 / 2 + 0.3 * math.sqrt(3) / 2))
    with pytest.warns(RuntimeWarning):
        secular_phase_rate(0.0, 0.0, [0, 0, 1.0], 1.0, D=1.0)


def test_geometric_increment():
    n = 1000
    total = sum(geometric_phase_increment(math.pi / 3, 0.0, 2 * math.pi / n) for _ in range(n))
    assert total == pytest.approx(math.pi, rel=1e-12)
    assert geometric_phase_increment(math.pi / 2, 0.0, 1.0) == pytest.approx(0.0, abs=1e-16)
    with pytest.raises(ValidationError):
        geometric_phase_increment(0.3, 0.0, math.pi)


def test_geometric_increment_against_quadrature():
    theta = lambda t: 1.0 + 0.4 * math.sin(3 * t)
    phi = lambda t: 2.0 * t + 0.5 * math.cos(t)
    dphi = lambda t: 2.0 - 0.5 * math.sin(t)
    oracle, _ = integrate.quad(lambda t: math.cos(theta(t)) * dphi(t), 0.0, 4.0, epsabs=1e-13, epsrel=1e-13)
    ts = np.linspace(0.0, 4.0, 20001)
    total = 0.0
    for t0, t1 in zip(ts[:-1], ts[1:]):
        total += geometric_phase_increment(theta(0.5 * (t0 + t1)), 0.0, phi(t1) - phi(t0))
    assert total == pytest.approx(oracle, abs=1e-6)


def test_adiabatic_populations_examples():
    f = eigenframe(0.7, 1.1)
    assert np.allclose(adiabatic_populations(SpinState(f.zero), f), [0, 1, 0])
    sup = SpinState((f.zero + f.plus) / math.sqrt(2))
    assert np.allclose(adiabatic_populations(sup, f), [0.5, 0.5, 0])
    rng = make_rng(0)
    v = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    assert adiabatic_populations(SpinState(v / np.linalg.norm(v)), f).sum() == pytest.approx(1.0, abs=1e-12)


def test_midpoint_propagator_matches_expm():
    rng = make_rng(1)
    n = rng.standard_normal(3)
    n /= np.linalg.norm(n)
    psi = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    psi /= np.linalg.norm(psi)
    theta, phi = math.acos(n[2]), math.atan2(n[1], n[0])
    dt = 0.05
    U = expm(-1j * zero_field_hamiltonian(theta, phi, D) * dt)
    assert np.allclose(propagate_zero_field(psi, m0_states(n), np.exp(-1j * D * dt)), U @ psi, atol=1e-13)
    gB = np.array([0.01, -0.02, 0.03])
    H = zero_field_hamiltonian(theta, phi, D) + np.tensordot(gB, SPIN, axes=1)
    assert np.allclose(propagate_with_field(psi, m0_states(n), D, gB, dt), expm(-1j * H * dt) @ psi, atol=1e-13)


def test_unitarity_over_many_steps():
    rng = make_rng(2)
    n = rng.standard_normal((100_000, 3))
    v = m0_states(n / np.linalg.norm(n, axis=1, keepdims=True))
    psi = np.array([0.6, 0.8j, 0.0])
    phase = np.exp(-1j * D * 0.05)
    for k in range(v.shape[0]):
        psi = propagate_zero_field(psi, v[k], phase)
    assert abs(np.linalg.norm(psi) - 1.0) < 1e-8


def test_gauge_phase_does_not_enter_propagation():
    rng = make_rng(3)
    n = rng.standard_normal(3)
    n /= np.linalg.norm(n)
    psi = np.array([0.6, 0.0, 0.8j])
    v = m0_states(n)
    phase = np.exp(-1j * 0.05)
    assert np.allclose(propagate_zero_field(psi, v, phase), propagate_zero_field(psi, np.exp(0.9j) * v, phase), atol=1e-15)


def _circle(theta, rate, loops=1.0, spacing=0.5):
    t_end = loops * 2 * math.pi / rate
    times = np.linspace(0.0, t_end, int(math.ceil(t_end / spacing)) + 1)
    return Trajectory.from_angles(times, theta, rate * times)


def test_static_crystal_keeps_eigenstate():
    traj = Trajectory.from_angles(np.linspace(0, 5, 11), 0.8, 0.3)
    psi0 = eigenframe(0.8, 0.3).zero
    out = schrodinger_evolve(SpinState(psi0), traj, D).amplitudes
    assert abs(abs(np.vdot(psi0, out)) - 1.0) < 1e-12


def test_step_guard():
    traj = Trajectory.from_angles(np.linspace(0, 1, 3), 0.8, 0.3)
    with pytest.raises(StepSizeError):
        schrodinger_history(SpinState([0, 1, 0]), traj, D, dt_max=0.1)


@pytest.fixture(scope="module")
def slow_loop():
    theta = math.pi / 4
    traj = _circle(theta, 1e-3 * D)
    f = eigenframe(theta, 0.0)
    psi = (f.zero + f.plus) / math.sqrt(2)
    hist = schrodinger_history(SpinState(psi), traj, D)
    return theta, traj, hist


def test_berry_loop_phase(slow_loop):
    theta, traj, hist = slow_loop
    phase, _ = unwrap_relative_phase(hist, traj, D)
    expected = 2 * math.pi * math.cos(theta)
    assert phase[-1] == pytest.approx(expected, rel=0.01)
    ledger = adiabatic_phase_ledger(traj)[-1]
    assert ledger.geometric_phase == pytest.approx(expected, rel=1e-6)
    assert abs(phase[-1] - ledger.geometric_phase) < 0.01 * expected


def test_adiabatic_limit_population_transfer(slow_loop):
    theta, traj, _ = slow_loop
    hist = schrodinger_history(SpinState(eigenframe(theta, 0.0).zero), traj, D)
    pops = np.array([adiabatic_populations(SpinState(p), f) for p, f in zip(hist, frames_along(traj))])
    assert np.max(np.abs(pops - pops[0])) < 1e-4


def test_gauge_perturbation_leaves_populations():
    traj = _circle(0.9, 2e-2 * D, loops=0.25, spacing=0.25)
    gauge = lambda th, ph: (0.3 * math.sin(th), 1.7 * ph, -0.4 * th)
    ref = eigenframe(0.9, 0.0)
    alt = eigenframe(0.9, 0.0, gauge)
    h_ref = schrodinger_history(SpinState(ref.zero), traj, D)
    h_alt = schrodinger_history(SpinState(alt.zero), traj, D)
    pops_ref = [adiabatic_populations(SpinState(p), f) for p, f in zip(h_ref, frames_along(traj))]
    theta = np.full(len(traj), 0.9)
    phis = 2e-2 * D * traj.times
    pops_alt = [adiabatic_populations(SpinState(p), eigenframe(t, ph, gauge)) for p, t, ph in zip(h_alt, theta, phis)]
    assert np.max(np.abs(np.array(pops_ref) - np.array(pops_alt))) < 1e-8


def test_field_ledger_dynamic_phase():
    traj = _circle(math.pi / 3, 0.1, loops=0.5, spacing=0.1)
    led = adiabatic_phase_ledger(traj, field=[0.0, 0.0, 2.0], gamma=0.5)[-1]
    assert led.dynamic_phase == pytest.approx(0.5 * 2.0 * 0.5 * traj.times[-1], rel=1e-12)
    assert led.total == led.geometric_phase + led.dynamic_phase
