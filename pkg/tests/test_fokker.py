import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from nvtumble.errors import ConvergenceError, StepSizeError, ValidationError
from nvtumble.fokker import (
    FieldConfigDC,
    FieldConfigFC,
    SolverConfig,
    ThetaGrid,
    _bdf2_history,
    _dc_operator,
    envelope_asymptote,
    envelope_excess,
    envelope_from_distribution,
    evolve_fp_dc,
    evolve_fp_fc,
    evolve_fp_geometric,
    fp_envelope,
    l1_distance,
    propagate_mode,
    theta_operator,
)
from nvtumble.signals import fit_exponential_decay

SMALL = SolverConfig(n_theta=32, n_phi=8, n_Phi=16, dt=1e-3)


def test_operator_conserves_and_keeps_sine():
    for n in (16, 64):
        L = theta_operator(n)
        assert np.allclose(L.sum(axis=0), 0.0, atol=1e-9)
        grid = ThetaGrid(n)
        assert np.allclose(L @ grid.stationary(), 0.0, atol=1e-9)
        assert np.allclose(propagate_mode(n, 0, 5.0, grid.stationary()), grid.stationary(), atol=1e-12)


def test_mode_propagator_matches_dense_expm():
    n = 24
    th = ThetaGrid(n).nodes
    A = theta_operator(n) - np.diag(4 * ((np.cos(th) / np.sin(th)) ** 2 + 0.3))
    c0 = np.exp(-((th - 1.0) ** 2))
    assert np.allclose(propagate_mode(n, 2, 0.37, c0, 0.3), expm(0.37 * A) @ c0, atol=1e-10)


def test_probability_conserved_per_step():
    grid = ThetaGrid(64)
    c = np.zeros(grid.n)
    c[10] = 1 / grid.h
    for _ in range(1000):
        prev = c.sum() * grid.h
        c = propagate_mode(grid.n, 0, 1e-3, c)
        assert abs(c.sum() * grid.h - prev) < 1e-8
    A = _dc_operator(32, 2, 0, 0.0, 3.0)
    y0 = np.zeros((32, 5), dtype=complex)
    y0[7, 2] = 1.0
    hist = _bdf2_history(A, y0.ravel(), 1e-3, 200, 1)
    totals = np.array([y.reshape(32, 5)[:, 2].sum().real for y in hist])
    assert np.max(np.abs(np.diff(totals))) < 1e-8


def test_geometric_distribution_properties():
    d = evolve_fp_geometric(1.0, 0.5, SMALL)
    assert d.total_probability() == pytest.approx(1.0, abs=1e-12)
    assert abs(d.mean_phase()) < 1e-12
    assert np.min(d.theta_marginal()) > -1e-12
    vals = d.values
    assert vals.sum() * d.cell_volume() == pytest.approx(1.0, abs=1e-10)
    late = evolve_fp_geometric(1.0, 20.0, SMALL)
    assert np.allclose(late.theta_marginal(), ThetaGrid(SMALL.n_theta).stationary(), atol=1e-8)


def test_fc_at_zero_field_equals_geometric():
    a = evolve_fp_geometric(0.7, 0.3, SMALL)
    b = evolve_fp_fc(0.7, FieldConfigFC(0.0, 0.01), 0.3, SMALL)
    assert np.array_equal(a.modes, b.modes)
    t = np.linspace(0, 1, 5)
    assert np.array_equal(fp_envelope("geometric", t).S_plus, fp_envelope("fc", t, field=FieldConfigFC(0.0, 0.01)).S_plus)


def test_fc_warns_outside_narrowing_regime():
    with pytest.warns(UserWarning):
        FieldConfigFC(1.0, 0.5).validate()
    with pytest.raises(ValidationError):
        FieldConfigFC(-1.0, 0.5).validate()


def test_dc_without_field_matches_2d():
    two = evolve_fp_geometric(1.2, 0.2, SMALL)
    three = evolve_fp_dc(1.2, FieldConfigDC(), 0.2, SMALL)
    assert three.total_probability() == pytest.approx(1.0, abs=1e-12)
    assert l1_distance(two, three.marginalize_phi()) < 1e-3


def test_dc_transverse_field_symmetry():
    # phi -> pi - phi, Phi -> -Phi leaves the dynamics under a field along x unchanged
    d = evolve_fp_dc(1.0, FieldConfigDC(B_x=5.0), 0.2, SMALL)
    v = d.values
    j = (SMALL.n_phi // 2 - np.arange(SMALL.n_phi)) % SMALL.n_phi
    k = (-np.arange(SMALL.n_Phi)) % SMALL.n_Phi
    assert np.allclose(v[:, j][:, :, k], v, atol=1e-10)
    assert not np.allclose(v[:, :, k], v, atol=1e-6)


def test_dc_step_guard():
    with pytest.raises(StepSizeError):
        evolve_fp_dc(1.0, FieldConfigDC(B_z=200.0), 0.1, SMALL)


@pytest.mark.parametrize("bad", [dict(n_theta=5), dict(n_phi=2), dict(dt=0.0)])
def test_solver_config_validation(bad):
    with pytest.raises(ValidationError):
        SolverConfig(**bad).validate()


def test_envelope_initial_values_and_asymptote():
    tr = fp_envelope("geometric", [0.0, 30.0])
    th = ThetaGrid(128).nodes
    w = np.sin(th) / np.sin(th).sum()
    T = math.pi / 2 * np.sin(th)
    assert tr.S_plus[0] == pytest.approx(1.0, abs=1e-12)
    assert tr.S_minus[0] == pytest.approx(float(w @ np.cos(2 * T)) * 0.5 + 0.5, abs=1e-12)
    assert tr.S_plus[1] == pytest.approx(envelope_asymptote(1.0, 128), abs=1e-9)
    assert tr.in_bounds()


def test_envelope_routes_agree():
    # weighted-vector shortcut vs propagating every initial cell
    cfg = SolverConfig(n_theta=48, n_phi=8, n_Phi=8)
    fam = evolve_fp_geometric(None, 0.4, cfg, phase_modes=1)
    direct = envelope_from_distribution(fam, 1.16)
    tr = fp_envelope("geometric", [0.4], 1.16, config=cfg)
    assert direct == pytest.approx((tr.S_plus[0], tr.S_minus[0]), abs=1e-12)
    famdc = evolve_fp_dc(None, FieldConfigDC(B_z=3.0), 0.2, cfg)
    trdc = fp_envelope("dc", [0.0, 0.1, 0.2], 1.0, FieldConfigDC(B_z=3.0), cfg)
    assert envelope_from_distribution(famdc, 1.0) == pytest.approx((trdc.S_plus[-1], trdc.S_minus[-1]), abs=1e-10)


def test_envelope_decay_time_and_refinement():
    t = np.linspace(0, 3, 301)
    tr = fp_envelope("geometric", t, refinement_check=True)
    assert tr.metadata["refinement_delta"] < 1e-3
    assert fit_exponential_decay(t, envelope_excess(tr)) == pytest.approx(0.9, rel=0.05)


def test_refinement_failure_raises():
    coarse = SolverConfig(n_theta=8, n_phi=4, n_Phi=4)
    with pytest.raises(ConvergenceError):
        fp_envelope("geometric", [0.0, 0.2, 0.5], config=coarse, refinement_check=True, refinement_tol=1e-6)


def test_dc_times_must_be_uniform():
    with pytest.raises(ValidationError):
        fp_envelope("dc", [0.0, 0.1, 0.3], field=FieldConfigDC(B_z=1.0))
    with pytest.raises(ValidationError):
        fp_envelope("dc", [0.1, 0.2], field=FieldConfigDC(B_z=1.0))


def test_snapshot_csv(tmp_path):
    d = evolve_fp_geometric(0.5, 0.1, SolverConfig(n_theta=8, n_phi=4, n_Phi=4))
    d.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "theta,Phi,p" and len(lines) == 1 + 8 * 4
    d3 = evolve_fp_dc(0.5, FieldConfigDC(B_z=1.0), 0.1, SolverConfig(n_theta=8, n_phi=4, n_Phi=4))
    d3.to_csv(tmp_path / "s3.csv")
    lines = (tmp_path / "s3.csv").read_text().splitlines()
    assert lines[0] == "theta,phi,Phi,p" and len(lines) == 1 + 8 * 4 * 4


@settings(max_examples=15, deadline=None)
@given(st.floats(0.01, math.pi - 0.01), st.floats(0.0, 2.0), st.floats(0.0, 2.0))
def test_fc_distribution_stays_normalised(theta1, t, beta):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        d = evolve_fp_fc(theta1, FieldConfigFC(math.sqrt(6 * beta / 0.01), 0.01), t, SMALL)
    assert d.total_probability() == pytest.approx(1.0, abs=1e-10)
    assert d.metadata["beta"] == pytest.approx(beta, rel=1e-9, abs=1e-15)
