"""Log transform, twisted drift, ergodicity certificate, classification."""

import csv

import numpy as np
import pytest

import oracles
from riskeig import (
    CertificateReport,
    EigenPair,
    FkEstimate,
    Model,
    Policy,
    ProbeReport,
    SimConfig,
    builtin,
    classify,
    ergodic_identity,
    ergodicity_certificate,
    field_gradient,
    ground_state,
    log_transform,
    make_grid,
    solve_hjb_dirichlet,
    sweep,
    twisted_drift,
    write_field_csv,
)

_ou_cache = {}


def _ou_solution(r=6.0, h=0.02):
    """Shared OU sweep: the certificate tests all reuse one solve."""
    key = (r, h)
    if key not in _ou_cache:
        radii = tuple(v for v in (2.0, 4.0, 6.0) if v <= r)
        res = sweep(builtin("ou_quadratic"), radii, h)
        _ou_cache[key] = res
    return _ou_cache[key]


def _pair(grid, v):
    v = np.asarray(v, dtype=float)
    return EigenPair(0.0, v / v[grid.origin_index], 0.0, 1)


# ---------------------------------------------------------------- log transform

def test_log_transform_constant_eigenfunction():
    g = make_grid(1, 1.0, 0.1)
    psi, grad = log_transform(_pair(g, np.ones(g.n)), g)
    np.testing.assert_allclose(psi, 0.0, atol=0)
    np.testing.assert_allclose(grad, 0.0, atol=0)


def test_log_transform_exponential_gradient():
    g = make_grid(1, 1.0, 0.01)
    psi, grad = log_transform(_pair(g, np.exp(g.nodes[:, 0])), g)
    inner = g.interior_mask(1)
    np.testing.assert_allclose(grad[inner, 0], 1.0, atol=1e-4)


def test_log_transform_quadratic_ansatz_gradient():
    a, _ = oracles.ou_quadratic_rate(1.0, 0.375)
    g = make_grid(1, 2.0, 0.01)
    x = g.nodes[:, 0]
    psi, grad = log_transform(_pair(g, np.exp(a * x**2)), g)
    inner = g.interior_mask(1)
    np.testing.assert_allclose(grad[inner, 0], 2.0 * a * x[inner], atol=5e-4)


def test_field_gradient_2d_separable():
    g = make_grid(2, 1.0, 0.05)
    f = g.nodes[:, 0] ** 2 - 0.5 * g.nodes[:, 1] ** 2
    grad = field_gradient(g, f)
    inner = g.interior_mask(1)
    np.testing.assert_allclose(grad[inner, 0], 2.0 * g.nodes[inner, 0], atol=1e-10)
    np.testing.assert_allclose(grad[inner, 1], -g.nodes[inner, 1], atol=1e-10)


# ---------------------------------------------------------------- twisted drift

def test_twisted_drift_zero_gradient_recovers_base():
    m = builtin("double_well")
    g = make_grid(1, 2.0, 0.1)
    tw = twisted_drift(m, g, Policy.uniform(g), np.zeros((g.n, 1)))
    np.testing.assert_allclose(tw, m.drift(g.nodes, 0.0), atol=0)


def test_twisted_drift_constant_gradient_zero_base():
    m = Model(
        1,
        lambda x, u: np.zeros_like(x),
        lambda x: np.sqrt(2.0) * np.eye(1),  # a = sigma sigma^T = 2
        lambda x, u: np.zeros(len(x)),
        np.array([0.0]),
    )
    g = make_grid(1, 1.0, 0.1)
    tw = twisted_drift(m, g, Policy.uniform(g), np.full((g.n, 1), 0.1))
    np.testing.assert_allclose(tw[:, 0], 0.2, atol=1e-14)


def test_twisted_drift_ou_matches_riccati_slope():
    res = _ou_solution()
    grid, sol = res.grids[-1], res.solutions[-1]
    gs = ground_state(builtin("ou_quadratic"), grid, sol.eigenpair, sol.policy)
    slope = oracles.ou_twisted_slope(1.0, 0.375)
    x = grid.nodes[:, 0]
    window = np.abs(x) <= grid.radius / 2.0
    err = np.max(np.abs(gs.drift[window, 0] - slope * x[window]))
    assert err <= 5e-3


# ------------------------------------------------------------------ certificate

def test_certificate_ou_geometric():
    res = _ou_solution()
    grid, sol = res.grids[-1], res.solutions[-1]
    lam = sol.eigenpair.eigenvalue
    psi, _ = log_transform(sol.eigenpair, grid)
    cert = ergodicity_certificate(
        builtin("ou_quadratic"), grid, lam, psi, gamma=0.1, r_cut=1.0,
        saturation_gap=res.saturation_gap,
    )
    assert cert.classification == "geometric-certified"
    assert cert.delta_hat > 3.0 * res.saturation_gap
    # the auxiliary potential only drops by gamma on a compact set, so the
    # eigenvalue drop is pinched between 0 and gamma
    assert 0.0 < cert.delta_hat < 0.1
    assert cert.drift_check_max <= 1e-9
    assert np.all(cert.lyapunov > 0.0)


def test_certificate_brownian_inconclusive():
    m = Model(
        1,
        lambda x, u: np.zeros_like(x),
        lambda x: np.eye(1),
        lambda x, u: np.zeros(len(x)),
        np.array([0.0]),
    )
    res = sweep(m, (1.0, 2.0, 3.0), 0.02)
    grid, sol = res.grids[-1], res.solutions[-1]
    psi, _ = log_transform(sol.eigenpair, grid)
    cert = ergodicity_certificate(
        m, grid, sol.eigenpair.eigenvalue, psi, gamma=0.1, r_cut=1.0,
        saturation_gap=res.saturation_gap,
    )
    assert cert.classification == "inconclusive"


def test_certificate_rejects_nonpositive_gamma():
    res = _ou_solution()
    grid, sol = res.grids[-1], res.solutions[-1]
    psi, _ = log_transform(sol.eigenpair, grid)
    with pytest.raises(ValueError):
        ergodicity_certificate(
            builtin("ou_quadratic"), grid, sol.eigenpair.eigenvalue, psi,
            gamma=0.0, r_cut=1.0,
        )


def test_certificate_delta_stable_under_refinement():
    res_h = _ou_solution()
    res_f = sweep(builtin("ou_quadratic"), (2.0, 4.0, 6.0), 0.01)
    deltas = []
    for res in (res_h, res_f):
        grid, sol = res.grids[-1], res.solutions[-1]
        psi, _ = log_transform(sol.eigenpair, grid)
        cert = ergodicity_certificate(
            builtin("ou_quadratic"), grid, sol.eigenpair.eigenvalue, psi,
            gamma=0.1, r_cut=1.0, saturation_gap=res.saturation_gap,
        )
        deltas.append(cert.delta_hat)
    assert abs(deltas[0] - deltas[1]) <= 5.0 * 0.02


# --------------------------------------------------------------- classification

def _cert(label):
    return CertificateReport(
        classification=label, delta_hat=0.0, lambda_base=0.0, lambda_bumped=0.0,
        gamma=0.1, r_cut=1.0, noise_floor=0.0, drift_check_max=0.0, checked_nodes=1,
    )


def test_classify_certificate_wins():
    assert classify(_cert("geometric-certified")) == "geometric-certified"


def test_classify_exit_check_promotes_to_recurrent():
    good = FkEstimate(value=1.01, stderr=0.01, paths_used=100, truncated_fraction=0.0)
    assert classify(_cert("inconclusive"), exit_check=good) == "recurrent-certified"


def test_classify_biased_exit_check_ignored():
    bad = FkEstimate(value=1.5, stderr=0.01, paths_used=100, truncated_fraction=0.0)
    assert classify(_cert("inconclusive"), exit_check=bad) == "inconclusive"


def test_classify_truncated_exit_check_ignored():
    lossy = FkEstimate(value=1.0, stderr=0.01, paths_used=100, truncated_fraction=0.2)
    assert classify(_cert("inconclusive"), exit_check=lossy) == "inconclusive"


def test_classify_failed_probe_suggests_transience():
    probe = ProbeReport(
        lambda_base=0.0, lambda_bumped=0.0, gap=0.0, strict=False,
        threshold=1e-6, saturation_gap=0.0,
    )
    assert classify(_cert("inconclusive"), probe=probe) == "transient-suspected"


def test_classify_strict_probe_stays_inconclusive():
    probe = ProbeReport(
        lambda_base=0.0, lambda_bumped=0.1, gap=0.1, strict=True,
        threshold=1e-6, saturation_gap=0.0,
    )
    assert classify(_cert("inconclusive"), probe=probe) == "inconclusive"


def test_ground_state_validates_classification_token():
    res = _ou_solution()
    grid, sol = res.grids[-1], res.solutions[-1]
    gs = ground_state(builtin("ou_quadratic"), grid, sol.eigenpair, sol.policy)
    with pytest.raises(ValueError):
        gs.classification = "certainly-fine"


# -------------------------------------------------------------- ergodic identity

def test_identity_constant_potential_exact():
    """f = c0 has a constant ground state: the identity collapses to mu(c0)=c0."""
    c0 = 0.4
    m = Model(
        1,
        lambda x, u: -x,
        lambda x: np.eye(1),
        lambda x, u: np.full(len(x), c0),
        np.array([0.0]),
    )
    g = make_grid(1, 4.0, 0.1)
    rep = ergodic_identity(
        m, g, lam=c0, psi=np.zeros(g.n),
        cfg=SimConfig(dt=0.01, horizon=5.0, paths=64, seed=4),
    )
    assert rep.mu_f == pytest.approx(c0, abs=1e-12)
    assert rep.half_mu_G == pytest.approx(0.0, abs=1e-12)
    assert rep.abs_gap <= 1e-12


def test_identity_ou_within_error_bars():
    res = _ou_solution()
    grid, sol = res.grids[-1], res.solutions[-1]
    psi, _ = log_transform(sol.eigenpair, grid)
    rep = ergodic_identity(
        builtin("ou_quadratic"), grid, sol.eigenpair.eigenvalue, psi,
        cfg=SimConfig(dt=0.004, horizon=25.0, paths=2000, seed=99),
        threads=4,
    )
    mu_f, half_g, lam = oracles.ou_identity_terms(1.0, 0.375)
    assert rep.abs_gap <= 3.0 * rep.stderr
    assert rep.mu_f == pytest.approx(mu_f, abs=4.0 * rep.stderr_f)
    assert rep.half_mu_G == pytest.approx(half_g, abs=4.0 * rep.stderr_G)
    assert rep.truncated_fraction == 0.0


# ------------------------------------------------------------------- CSV export

def test_write_field_csv_splits_vector_columns(tmp_path):
    g = make_grid(2, 1.0, 0.5)
    path = tmp_path / "fields.csv"
    write_field_csv(path, g, {
        "psi": np.arange(g.n, dtype=float),
        "grad": np.ones((g.n, 2)),
    })
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x1", "x2", "psi", "grad_1", "grad_2"]
    assert len(rows) == g.n + 1
