"""Principal curve/surface fitting: solver oracles, chart behavior, limits."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from kvil.constraints import Thresholds
from kvil.errors import InsufficientData, OutOfChart
from kvil.manifolds import (LinearManifold, ManifoldVariability,
                            NonlinearConstraint, PrincipalManifold,
                            _clamped_knots, _gcv, _penalized_solve,
                            _penalty_gram, _penalty_matrix, classify_nonlinear,
                            default_lambda_grid, fit_pme,
                            nonlinear_variability)

TH = Thresholds()


def _arc_points(rng, n=24, radius=1.0, half_angle=np.deg2rad(60), sigma=0.005):
    theta = np.linspace(-half_angle, half_angle, n)
    theta += rng.uniform(-0.2, 0.2, n) * (theta[1] - theta[0])
    pts = radius * np.stack([np.sin(theta), np.cos(theta), np.zeros(n)], axis=1)
    return pts + rng.normal(scale=sigma, size=pts.shape), theta


def test_penalty_matrix_matches_direct_quadrature():
    for lo, hi, nb in ((0.0, 1.0, 6), (-2.3, 4.7, 8), (0.1, 0.9, 4), (-5.0, 5.0, 10)):
        knots = _clamped_knots(lo, hi, nb)
        for deriv in (0, 1, 2):
            direct = _penalty_gram(knots, 3, deriv)
            cached = _penalty_matrix(knots, deriv=deriv)
            assert_allclose(cached, direct, rtol=1e-12, atol=1e-12 * np.abs(direct).max())


def test_penalized_solve_matches_normal_equations():
    rng = np.random.default_rng(0)
    knots = _clamped_knots(0.0, 1.0, 8)
    u = rng.uniform(0.0, 1.0, 40)
    from kvil._accel import bspline_design3
    B = bspline_design3(u, knots, 0)
    P = _penalty_matrix(knots)
    X = rng.normal(size=(40, 3))
    for lam in (1e-4, 1e-1, 1e2):
        C, tr_h, rss = _penalized_solve(B, P, lam, X)
        direct = np.linalg.solve(B.T @ B + lam * P, B.T @ X)
        assert_allclose(C, direct, atol=1e-6 * np.abs(direct).max())
        H = B @ np.linalg.solve(B.T @ B + lam * P, B.T)
        assert tr_h == pytest.approx(np.trace(H), rel=1e-4)
        assert rss == pytest.approx(((X - B @ C) ** 2).sum(), rel=1e-9)


def test_penalized_solve_curvature_monotone_in_lambda():
    rng = np.random.default_rng(1)
    knots = _clamped_knots(0.0, 1.0, 8)
    from kvil._accel import bspline_design3
    B = bspline_design3(rng.uniform(0.0, 1.0, 60), knots, 0)
    P = _penalty_matrix(knots)
    X = rng.normal(size=(60, 3))
    prev_curv, prev_rss = np.inf, -np.inf
    for lam in 10.0 ** np.arange(-4, 5):
        C, _, rss = _penalized_solve(B, P, lam, X)
        curv = float(np.einsum("ic,ij,jc->", C, P, C))
        assert curv <= prev_curv + 1e-9
        assert rss >= prev_rss - 1e-9
        prev_curv, prev_rss = curv, rss


def test_gcv_guards_near_interpolation():
    assert _gcv(1e-8, 11, 9.0) == np.inf       # tr(H) > n - 3
    assert _gcv(1e-8, 11, 11.0) == np.inf
    finite = _gcv(1.0, 11, 5.0)
    assert np.isfinite(finite) and finite > 0
    # More smoothing at equal residual is always preferred.
    assert _gcv(1.0, 20, 4.0) < _gcv(1.0, 20, 8.0)


def test_fit_pme_arc_recovers_circle():
    rng = np.random.default_rng(2)
    sigma = 0.005
    pts, theta = _arc_points(rng, sigma=sigma)
    m = fit_pme(pts, 1)
    assert m.residual_rms <= 2.0 * sigma
    u = m.project_batch(pts)[:, 0]
    # Chart order must follow the arc (monotone in the true angle).
    assert np.all(np.diff(u[np.argsort(theta)]) > 0) or \
        np.all(np.diff(u[np.argsort(theta)]) < 0)
    # Foot points sit on the unit circle to within a few noise sigmas.
    feet = m._eval_unchecked(u[:, None])
    radii = np.linalg.norm(feet - [0.0, 0.0, 0.0], axis=1)
    assert np.abs(radii - 1.0).max() < 4.0 * sigma + 5e-3


def test_fit_pme_stress_orthogonal_to_tangent():
    rng = np.random.default_rng(3)
    pts, _ = _arc_points(rng, sigma=0.02)
    m = fit_pme(pts, 1)
    u = m.project_batch(pts)
    feet = m._eval_unchecked(u)
    for i in range(len(pts)):
        stress = pts[i] - feet[i]
        if np.linalg.norm(stress) < 1e-9:
            continue
        tangent = m.jacobian(u[i])[:, 0]
        cosine = abs(stress @ tangent) / (
            np.linalg.norm(stress) * np.linalg.norm(tangent))
        assert cosine < 1e-4


def test_fit_pme_projection_beats_random_probes():
    rng = np.random.default_rng(4)
    pts, _ = _arc_points(rng, sigma=0.02)
    m = fit_pme(pts, 1)
    lo, hi = m.hull[0]
    queries = pts[::4] + rng.normal(scale=0.05, size=pts[::4].shape)
    for q in queries:
        u = m.project_batch(q[None])[0]
        best = ((q - m._eval_unchecked(u[None])[0]) ** 2).sum()
        probes = rng.uniform(lo, hi, (200, 1))
        d2 = ((q - m._eval_unchecked(probes)) ** 2).sum(axis=1)
        assert best <= d2.min() + 1e-10


def test_fit_pme_deterministic():
    rng = np.random.default_rng(5)
    pts, _ = _arc_points(rng)
    a = fit_pme(pts, 1)
    b = fit_pme(pts.copy(), 1)
    assert a.coef.tobytes() == b.coef.tobytes()
    assert a.lam == b.lam
    assert a.knots[0].tobytes() == b.knots[0].tobytes()


def test_fit_pme_huge_lambda_collapses_to_pca_line():
    rng = np.random.default_rng(6)
    pts, _ = _arc_points(rng, sigma=0.01)
    phi = max(np.linalg.norm(a - b) for a in pts for b in pts)
    m = fit_pme(pts, 1, lambda_grid=[1e9 * phi * phi])
    centered = pts - pts.mean(axis=0)
    _, _, vt = np.linalg.svd(centered)
    pca_dir = vt[0]
    lo, hi = m.hull[0]
    span = m._eval_unchecked(np.array([[hi]]))[0] - m._eval_unchecked(np.array([[lo]]))[0]
    direction = span / np.linalg.norm(span)
    angle = np.arccos(np.clip(abs(direction @ pca_dir), -1.0, 1.0))
    assert angle < 0.01


def test_fit_pme_huge_lambda_collapses_to_pca_plane():
    rng = np.random.default_rng(7)
    uv = rng.uniform(-1.0, 1.0, (30, 2))
    pts = np.stack([uv[:, 0], uv[:, 1], 0.2 * (uv ** 2).sum(axis=1)], axis=1)
    pts += rng.normal(scale=0.01, size=pts.shape)
    phi = max(np.linalg.norm(a - b) for a in pts for b in pts)
    m = fit_pme(pts, 2, lambda_grid=[1e9 * phi * phi])
    centered = pts - pts.mean(axis=0)
    _, _, vt = np.linalg.svd(centered)
    u0 = m.chart_center
    jac = m.jacobian(u0)
    normal = np.cross(jac[:, 0], jac[:, 1])
    normal /= np.linalg.norm(normal)
    angle = np.arccos(np.clip(abs(normal @ vt[2]), -1.0, 1.0))
    assert angle < 0.01


def test_fit_pme_surface_fits_paraboloid():
    rng = np.random.default_rng(8)
    uv = rng.uniform(-1.0, 1.0, (40, 2))
    sigma = 0.01
    pts = np.stack([uv[:, 0], uv[:, 1], 0.3 * (uv ** 2).sum(axis=1)], axis=1)
    pts += rng.normal(scale=sigma, size=pts.shape)
    m = fit_pme(pts, 2)
    assert m.dim == 2
    assert m.residual_rms <= 3.0 * sigma
    u = m.project_batch(pts)
    feet = m._eval_unchecked(u)
    for i in range(0, len(pts), 5):
        stress = pts[i] - feet[i]
        if np.linalg.norm(stress) < 1e-9:
            continue
        jac = m.jacobian(u[i])
        for col in jac.T:
            cosine = abs(stress @ col) / (
                np.linalg.norm(stress) * np.linalg.norm(col))
            assert cosine < 1e-3


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(9)
    pts, _ = _arc_points(rng)
    m = fit_pme(pts, 1)
    lo, hi = m.hull[0]
    eps = 1e-6 * (hi - lo)
    for u0 in np.linspace(lo + 5 * eps, hi - 5 * eps, 7):
        jac = m.jacobian([u0])[:, 0]
        fd = (m._eval_unchecked(np.array([[u0 + eps]]))[0]
              - m._eval_unchecked(np.array([[u0 - eps]]))[0]) / (2 * eps)
        assert_allclose(jac, fd, rtol=1e-4, atol=1e-8)


def test_extrapolation_is_tangent_linear_beyond_knots():
    rng = np.random.default_rng(10)
    pts, _ = _arc_points(rng, half_angle=np.deg2rad(50))
    m = fit_pme(pts, 1)
    knots = m.knots[0]
    hi_k = knots[-m.degree - 1]
    lo_h, hi_h = m._margin()
    delta = min(0.8 * (hi_h[0] - hi_k), 0.1 * (hi_k - knots[m.degree]))
    assert delta > 0
    f_edge = m._eval_unchecked(np.array([[hi_k]]))[0]
    tangent = m.jacobian([hi_k])[:, 0]
    f_out = m._eval_unchecked(np.array([[hi_k + delta]]))[0]
    assert_allclose(f_out, f_edge + delta * tangent, atol=1e-10)


def test_reconstruct_raises_outside_inflated_hull():
    rng = np.random.default_rng(11)
    pts, _ = _arc_points(rng)
    m = fit_pme(pts, 1)
    lo, hi = m.hull[0]
    width = hi - lo
    inside = m.reconstruct([hi + 0.19 * width])
    assert np.isfinite(inside).all()
    with pytest.raises(OutOfChart):
        m.reconstruct([hi + 0.25 * width])
    with pytest.raises(OutOfChart):
        m.reconstruct([lo - 0.25 * width])


def test_fit_pme_input_gates():
    rng = np.random.default_rng(12)
    with pytest.raises(InsufficientData):
        fit_pme(rng.normal(size=(10, 3)), 1)
    with pytest.raises(InsufficientData):
        fit_pme(rng.normal(size=(20, 3)), 3)
    with pytest.raises(InsufficientData):
        fit_pme(np.zeros((12, 3)), 1)


def test_manifold_round_trip_through_dict():
    rng = np.random.default_rng(13)
    pts, _ = _arc_points(rng)
    m = fit_pme(pts, 1)
    back = PrincipalManifold.from_dict(m.to_dict())
    probe = np.linspace(m.hull[0, 0], m.hull[0, 1], 9)[:, None]
    assert_allclose(back._eval_unchecked(probe), m._eval_unchecked(probe), atol=0)


def test_nonlinear_variability_against_linear_oracle():
    rng = np.random.default_rng(14)
    axis = np.array([1.0, 0.0, 0.0])
    manifold = LinearManifold(anchor=np.zeros(3), basis=axis[None, :])
    along = rng.uniform(-1.0, 1.0, 16)
    perp = rng.normal(scale=0.01, size=16)
    pts = np.outer(along, axis) + np.outer(perp, [0.0, 1.0, 0.0])
    phi = 2.0
    var = nonlinear_variability(manifold, pts, phi)
    expect_par = np.std(np.abs(along - along.mean()), ddof=1) / phi
    expect_perp = np.std(np.abs(perp), ddof=1) / phi
    assert var.eta_par == pytest.approx(expect_par, rel=1e-9)
    assert var.eta_perp == pytest.approx(expect_perp, rel=1e-9)


def test_classify_nonlinear_gates():
    ok = ManifoldVariability(eta_perp=0.5 * TH.xi1, eta_par=2.0 * TH.xi2)
    assert classify_nonlinear(ok, TH, 1) == "p2c"
    assert classify_nonlinear(ok, TH, 2) == "p2S"
    loose = ManifoldVariability(eta_perp=2.0 * TH.xi1, eta_par=2.0 * TH.xi2)
    assert classify_nonlinear(loose, TH, 1) is None
    flat = ManifoldVariability(eta_perp=0.5 * TH.xi1, eta_par=0.5 * TH.xi2)
    assert classify_nonlinear(flat, TH, 1) is None


def test_nonlinear_constraint_kind_dim_consistency():
    rng = np.random.default_rng(15)
    pts, _ = _arc_points(rng)
    m = fit_pme(pts, 1)
    NonlinearConstraint("p2c", m, 0, 0, 0)
    with pytest.raises(ValueError):
        NonlinearConstraint("p2S", m, 0, 0, 0)


def test_linear_manifold_chart_interface():
    rng = np.random.default_rng(16)
    basis = np.array([[0.6, 0.8, 0.0], [-0.8, 0.6, 0.0]])
    plane = LinearManifold(anchor=np.array([1.0, 2.0, 3.0]), basis=basis)
    assert plane.dim == 2
    pts = rng.normal(size=(10, 3))
    u = plane.project_batch(pts)
    feet = plane.reconstruct(u)
    # Feet are the orthogonal projections onto the plane.
    normal = np.cross(basis[0], basis[1])
    for p, f in zip(pts, feet):
        assert abs((f - plane.anchor) @ normal) < 1e-12
        assert_allclose(np.cross(p - f, normal), np.zeros(3), atol=1e-12)
    assert_allclose(plane.jacobian(u[0]), basis.T, atol=0)
    assert_allclose(plane.chart_center, np.zeros(2), atol=0)


def test_default_lambda_grid_scales_with_phi():
    grid = default_lambda_grid(2.0)
    assert len(grid) == 7
    assert grid[0] == pytest.approx(1e-4 * 4.0)
    assert grid[-1] == pytest.approx(1e2 * 4.0)
    assert np.all(np.diff(grid) > 0)
