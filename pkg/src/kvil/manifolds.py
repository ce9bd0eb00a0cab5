"""Principal manifold estimation: curvature-penalized curves and surfaces.

A manifold of intrinsic dimension d (1 or 2) is a B-spline map f: R^d -> R^3
fitted to N demo positions by alternating two steps: project the points onto
the current manifold, then refit a penalized least-squares spline of the
three coordinates over the projection parameters. The penalty is the
integrated squared second derivative (thin-plate energy for surfaces), so
large smoothing weights collapse the fit onto the PCA line/plane. The weight
lambda is chosen on a grid by generalized cross-validation.

Solving uses the Demmler-Reinsch decomposition, which stays numerically
stable across the whole lambda range (including the near-infinite weights
used to check the PCA limit).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _accel
from .errors import FitDiverged, InsufficientData, OutOfChart

DEGREE = 3
_DENSE_1D = 512
_DENSE_2D = 32
_REFINE_STEPS = 20
_HULL_MARGIN = 0.2


# ---------------------------------------------------------------------------
# B-spline basis with polynomial extension outside the knot range


def _clamped_knots(lo: float, hi: float, n_basis: int, degree: int = DEGREE) -> np.ndarray:
    if hi - lo < 1e-12:
        hi = lo + 1e-12
    interior = n_basis - degree - 1
    inner = np.linspace(lo, hi, interior + 2)[1:-1] if interior > 0 else np.empty(0)
    return np.concatenate([
        np.full(degree + 1, lo), inner, np.full(degree + 1, hi),
    ])


def _bspline_design(u: np.ndarray, knots: np.ndarray, degree: int = DEGREE,
                    deriv: int = 0) -> np.ndarray:
    """Dense design matrix of the deriv-th derivative of the basis at u.

    Evaluation outside the knot range continues the boundary polynomial
    segment, which is what extrapolated reconstruction relies on. The build
    is hot (fitting and projection call it in tight loops) and lives in the
    accelerated kernel module.
    """
    if degree != DEGREE:
        raise ValueError("only cubic bases are supported")
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    return _accel.bspline_design3(u, knots, deriv)


_GAUSS4 = np.polynomial.legendre.leggauss(4)
_PENALTY_CACHE: dict = {}


def _penalty_gram(knots: np.ndarray, degree: int, deriv: int) -> np.ndarray:
    a, b = knots[degree], knots[-degree - 1]
    breaks = np.unique(knots[(knots >= a) & (knots <= b)])
    gx, gw = _GAUSS4
    lo = breaks[:-1]
    hi = breaks[1:]
    keep = hi - lo > 1e-14
    lo, hi = lo[keep], hi[keep]
    half = 0.5 * (hi - lo)
    pts = (0.5 * (lo + hi))[:, None] + half[:, None] * gx[None, :]
    D = _bspline_design(pts.ravel(), knots, degree, deriv)
    w = (half[:, None] * gw[None, :]).ravel()
    return (D * w[:, None]).T @ D


def _penalty_matrix(knots: np.ndarray, degree: int = DEGREE, deriv: int = 2) -> np.ndarray:
    """Gram matrix of deriv-th basis derivatives: P_ij = integral B_i^(r) B_j^(r).

    Clamped uniform knots are affine images of a canonical [0, 1] vector,
    so the Gram matrix is a cached canonical one scaled by a span power;
    the alternating fit rebuilds knots every pass and this keeps the
    quadrature out of the hot loop.
    """
    n_basis = len(knots) - degree - 1
    key = (n_basis, degree, deriv)
    base = _PENALTY_CACHE.get(key)
    if base is None:
        base = _penalty_gram(_clamped_knots(0.0, 1.0, n_basis, degree),
                             degree, deriv)
        _PENALTY_CACHE[key] = base
    span = max(float(knots[-degree - 1] - knots[degree]), 1e-12)
    return base * span ** (1 - 2 * deriv)


def _penalized_solve(B: np.ndarray, P: np.ndarray, lam: float, X: np.ndarray):
    """Solve (B^T B + lam P) C = B^T X via Demmler-Reinsch.

    Returns coefficients C, the effective degrees of freedom tr(H), and the
    residual sum of squares.
    """
    n_basis = B.shape[1]
    G = B.T @ B
    jitter = 1e-10 * max(np.trace(G) / n_basis, 1e-12)
    L = np.linalg.cholesky(G + jitter * np.eye(n_basis))
    Linv = np.linalg.inv(L)
    M = Linv @ P @ Linv.T
    M = 0.5 * (M + M.T)
    s, U = np.linalg.eigh(M)
    s = np.clip(s, 0.0, None)
    shrink = 1.0 / (1.0 + lam * s)
    # Modes penalized beyond machine relevance are cut exactly so the
    # huge-lambda limit degenerates to the penalty null space (an affine
    # fit) instead of leaking a u-dependent curvature jitter.
    shrink[lam * s > 1e12] = 0.0
    rhs = U.T @ (Linv @ (B.T @ X))
    C = Linv.T @ (U @ (shrink[:, None] * rhs))
    tr_h = float(shrink.sum())
    resid = X - B @ C
    rss = float((resid ** 2).sum())
    return C, tr_h, rss


def _gcv(rss: float, n: int, tr_h: float) -> float:
    # a fit needs a few residual degrees of freedom before its stress
    # statistics mean anything; near-interpolation must never win the grid
    if tr_h > n - 3:
        return float("inf")
    denom = 1.0 - tr_h / n
    return (rss / n) / (denom * denom)


# ---------------------------------------------------------------------------
# Manifold containers


@dataclass
class PrincipalManifold:
    """Fitted d-dimensional spline manifold with chart bookkeeping.

    hull holds the per-axis parameter range of the training projections;
    reconstruction is valid on the hull inflated by 20% per side and raises
    OutOfChart beyond it. chart_center is the mean training projection, used
    to center chart coordinates before norms are taken.
    """

    dim: int
    degree: int
    knots: tuple            # (knots_u,) or (knots_u, knots_v)
    coef: np.ndarray        # (n_basis_total, 3)
    lam: float
    residual_rms: float
    curvature_energy: float
    hull: np.ndarray        # (d, 2)
    chart_center: np.ndarray  # (d,)

    def _margin(self):
        width = self.hull[:, 1] - self.hull[:, 0]
        pad = _HULL_MARGIN * np.maximum(width, 1e-12)
        return self.hull[:, 0] - pad, self.hull[:, 1] + pad

    def _check_chart(self, u: np.ndarray):
        lo, hi = self._margin()
        if (u < lo - 1e-12).any() or (u > hi + 1e-12).any():
            raise OutOfChart(f"parameter {u} outside inflated hull")

    def _axis_design(self, vals: np.ndarray, axis: int, deriv: int) -> np.ndarray:
        """Per-axis design rows with tangent-linear extension beyond the
        knot range, so extrapolated reconstruction follows the boundary
        tangent instead of the end polynomial."""
        knots = self.knots[axis]
        lo = knots[self.degree]
        hi = knots[-self.degree - 1]
        clipped = np.clip(vals, lo, hi)
        delta = vals - clipped
        if deriv == 0:
            D = _bspline_design(clipped, knots, self.degree, 0)
            outside = delta != 0.0
            if outside.any():
                D1 = _bspline_design(clipped[outside], knots, self.degree, 1)
                D[outside] += delta[outside, None] * D1
            return D
        if deriv == 1:
            return _bspline_design(clipped, knots, self.degree, 1)
        D2 = _bspline_design(clipped, knots, self.degree, 2)
        D2[delta != 0.0] = 0.0
        return D2

    def _design(self, u: np.ndarray, deriv=None):
        if deriv is None:
            deriv = (0,) * self.dim
        u = np.atleast_2d(np.asarray(u, dtype=np.float64))
        if self.dim == 1:
            return self._axis_design(u[:, 0], 0, deriv[0])
        Du = self._axis_design(u[:, 0], 0, deriv[0])
        Dv = self._axis_design(u[:, 1], 1, deriv[1])
        return (Du[:, :, None] * Dv[:, None, :]).reshape(u.shape[0], -1)

    def reconstruct(self, u) -> np.ndarray:
        """Evaluate f at chart coordinates u (shape (d,) or (n, d))."""
        u_arr = np.atleast_2d(np.asarray(u, dtype=np.float64).reshape(-1, self.dim))
        for row in u_arr:
            self._check_chart(row)
        pts = self._design(u_arr) @ self.coef
        return pts[0] if np.asarray(u).ndim <= 1 else pts

    def _eval_unchecked(self, u_arr: np.ndarray) -> np.ndarray:
        return self._design(u_arr) @ self.coef

    def jacobian(self, u) -> np.ndarray:
        """Differential of f at u: (3, d) matrix of tangent vectors."""
        u_arr = np.asarray(u, dtype=np.float64).reshape(1, self.dim)
        if self.dim == 1:
            col = (self._design(u_arr, deriv=(1,)) @ self.coef)[0]
            return col.reshape(3, 1)
        fu = (self._design(u_arr, deriv=(1, 0)) @ self.coef)[0]
        fv = (self._design(u_arr, deriv=(0, 1)) @ self.coef)[0]
        return np.stack([fu, fv], axis=1)

    def project(self, x) -> np.ndarray:
        """Chart coordinates of the closest manifold point (argmin distance)."""
        return self.project_batch(np.asarray(x, dtype=np.float64).reshape(1, 3))[0]

    def project_batch(self, points: np.ndarray, warm=None) -> np.ndarray:
        """Closest-point chart coordinates for a batch of queries.

        Cold path: dense parameter scan then bracketed/Gauss-Newton
        refinement. A `warm` seed (chart coords per point, e.g. from the
        previous fitting iteration) switches to pure local refinement,
        which keeps foot points on a continuous path during alternation.
        """
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        lo, hi = self._margin()
        if warm is not None:
            return self._gn_refine(pts, np.asarray(warm, dtype=np.float64).copy(), lo, hi)
        if self.dim == 1:
            return self._project_curve(pts, lo[0], hi[0])
        return self._project_surface(pts, lo, hi)

    def _gn_refine(self, pts, u, lo, hi, steps=_REFINE_STEPS):
        """Damped Gauss-Newton descent of ||x - f(u)||^2, any dim."""
        u = np.clip(u.reshape(len(pts), self.dim), lo, hi)
        best_u = u.copy()
        best_d2 = ((pts - self._eval_unchecked(u)) ** 2).sum(axis=1)
        for _ in range(steps):
            F = self._eval_unchecked(u)
            r = pts - F
            if self.dim == 1:
                fu = self._design(u, deriv=(1,)) @ self.coef
                du = (fu * r).sum(axis=1) / ((fu * fu).sum(axis=1) + 1e-12)
                u_new = np.clip(u + du[:, None], lo, hi)
                step_sz = np.abs(du).max()
            else:
                fu = self._design(u, deriv=(1, 0)) @ self.coef
                fv = self._design(u, deriv=(0, 1)) @ self.coef
                a11 = (fu * fu).sum(axis=1) + 1e-12
                a12 = (fu * fv).sum(axis=1)
                a22 = (fv * fv).sum(axis=1) + 1e-12
                g1 = (fu * r).sum(axis=1)
                g2 = (fv * r).sum(axis=1)
                det = a11 * a22 - a12 * a12
                det = np.where(np.abs(det) < 1e-300, 1.0, det)
                du = (a22 * g1 - a12 * g2) / det
                dv = (a11 * g2 - a12 * g1) / det
                u_new = np.stack([
                    np.clip(u[:, 0] + du, lo[0], hi[0]),
                    np.clip(u[:, 1] + dv, lo[1], hi[1]),
                ], axis=1)
                step_sz = max(np.abs(du).max(), np.abs(dv).max())
            nd2 = ((pts - self._eval_unchecked(u_new)) ** 2).sum(axis=1)
            improved = nd2 < best_d2
            best_d2 = np.where(improved, nd2, best_d2)
            best_u = np.where(improved[:, None], u_new, best_u)
            if step_sz < 1e-13:
                break
            u = u_new
        return best_u

    def _project_curve(self, pts, lo, hi):
        """Dense scan then lockstep golden-section refinement, one bracket
        per query point."""
        grid = np.linspace(lo, hi, _DENSE_1D)
        curve = self._eval_unchecked(grid[:, None])
        d2 = ((pts[:, None, :] - curve[None, :, :]) ** 2).sum(axis=2)
        best = np.argmin(d2, axis=1)
        step = grid[1] - grid[0]
        a = np.clip(grid[best] - step, lo, hi)
        b = np.clip(grid[best] + step, lo, hi)
        inv_phi = (np.sqrt(5.0) - 1.0) / 2.0

        def dist2(params):
            return ((pts - self._eval_unchecked(params[:, None])) ** 2).sum(axis=1)

        c = b - inv_phi * (b - a)
        d = a + inv_phi * (b - a)
        fc = dist2(c)
        fd = dist2(d)
        for _ in range(_REFINE_STEPS):
            left = fc < fd
            a_n = np.where(left, a, c)
            b_n = np.where(left, d, b)
            c_n = np.where(left, b_n - inv_phi * (b_n - a_n), d)
            d_n = np.where(left, c, a_n + inv_phi * (b_n - a_n))
            # One fresh evaluation per point per step: the new c on the
            # left branch, the new d on the right branch.
            f_fresh = dist2(np.where(left, c_n, d_n))
            fc_n = np.where(left, f_fresh, fd)
            fd_n = np.where(left, fc, f_fresh)
            a, b, c, d, fc, fd = a_n, b_n, c_n, d_n, fc_n, fd_n
        return (0.5 * (a + b))[:, None]

    def _project_surface(self, pts, lo, hi):
        """Dense grid seed then batched Gauss-Newton refinement."""
        gu = np.linspace(lo[0], hi[0], _DENSE_2D)
        gv = np.linspace(lo[1], hi[1], _DENSE_2D)
        UU, VV = np.meshgrid(gu, gv, indexing="ij")
        grid = np.stack([UU.ravel(), VV.ravel()], axis=1)
        surf = self._eval_unchecked(grid)
        d2 = ((pts[:, None, :] - surf[None, :, :]) ** 2).sum(axis=2)
        seed = grid[np.argmin(d2, axis=1)].copy()
        return self._gn_refine(pts, seed, lo, hi)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "degree": self.degree,
            "knots": [k.tolist() for k in self.knots],
            "coef": self.coef.tolist(),
            "lam": self.lam,
            "residual_rms": self.residual_rms,
            "curvature_energy": self.curvature_energy,
            "hull": self.hull.tolist(),
            "chart_center": self.chart_center.tolist(),
        }

    @staticmethod
    def from_dict(doc: dict) -> "PrincipalManifold":
        return PrincipalManifold(
            dim=int(doc["dim"]),
            degree=int(doc["degree"]),
            knots=tuple(np.asarray(k, dtype=np.float64) for k in doc["knots"]),
            coef=np.asarray(doc["coef"], dtype=np.float64),
            lam=float(doc["lam"]),
            residual_rms=float(doc["residual_rms"]),
            curvature_energy=float(doc["curvature_energy"]),
            hull=np.asarray(doc["hull"], dtype=np.float64),
            chart_center=np.asarray(doc["chart_center"], dtype=np.float64),
        )


@dataclass(frozen=True)
class ManifoldVariability:
    eta_perp: float
    eta_par: float


@dataclass(frozen=True)
class NonlinearConstraint:
    kind: str
    manifold: PrincipalManifold
    frame_id: int
    time: int
    keypoint_id: int

    def __post_init__(self):
        expect = {1: "p2c", 2: "p2S"}[self.manifold.dim]
        if self.kind != expect:
            raise ValueError(f"kind {self.kind} does not match dim {self.manifold.dim}")


# ---------------------------------------------------------------------------
# Fitting


def default_lambda_grid(phi: float) -> list:
    return [10.0 ** e * phi * phi for e in range(-4, 3)]


def _n_basis_for(n_points: int, dim: int) -> int:
    if dim == 1:
        return int(np.clip(n_points // 3 + 2, 4, 10))
    return int(np.clip(round(np.sqrt(n_points / 2)) + 2, 4, 5))


def fit_pme(points, d: int, lambda_grid=None, n_basis: int | None = None,
            max_iter: int = 50) -> PrincipalManifold:
    """Fit a principal curve (d=1) or surface (d=2) to N >= 11 positions.

    For each lambda on the grid, alternates projection and penalized spline
    refit until the mean ambient foot-point shift drops below 1e-6 of the
    point-cloud scale (or 50 iterations); the grid winner minimizes GCV.
    Raises FitDiverged when the shift stops decreasing for 10 consecutive
    iterations while still above the convergence threshold.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = pts.shape[0]
    if n < 11:
        raise InsufficientData(f"principal manifolds need >= 11 points, got {n}")
    if d not in (1, 2):
        raise InsufficientData(f"intrinsic dimension must be 1 or 2, got {d}")

    diff = pts[:, None, :] - pts[None, :, :]
    phi_local = float(np.sqrt((diff ** 2).sum(axis=2)).max())
    if phi_local <= 0:
        raise InsufficientData("all points coincide")
    if lambda_grid is None:
        lambda_grid = default_lambda_grid(phi_local)
    nb = n_basis if n_basis is not None else _n_basis_for(n, d)

    center = pts.mean(axis=0)
    _, _, Vt = np.linalg.svd(pts - center)
    # Deterministic principal-axis signs.
    axes = Vt[:d].copy()
    for i in range(d):
        j = int(np.argmax(np.abs(axes[i])))
        if axes[i, j] < 0:
            axes[i] = -axes[i]
    u_init = (pts - center) @ axes.T   # (n, d)

    best = None
    last_err = None
    for lam in lambda_grid:
        try:
            fitted = _fit_single_lambda(pts, d, float(lam), nb, u_init, phi_local, max_iter)
        except FitDiverged as err:
            last_err = err
            continue
        if best is None or fitted[0] < best[0]:
            best = fitted
    if best is None:
        raise last_err if last_err is not None else FitDiverged("empty smoothing grid")
    _, manifold = best
    return manifold


def _fit_single_lambda(pts, d, lam, nb, u_init, phi_local, max_iter):
    n = pts.shape[0]
    u = u_init.copy()
    prev_feet = None
    prev_shift = np.inf
    stall = 0
    tol = 1e-6 * phi_local
    state = None

    for it in range(max_iter):
        state = _refit(pts, u, d, lam, nb)
        manifold = state["manifold"]
        # The refit chart equals the chart u was expressed in, so u is a
        # valid warm seed; warm projection keeps feet on a continuous path
        # across iterations instead of re-seeding basins from a grid.
        u_proj = manifold.project_batch(pts, warm=None if it == 0 else u)
        feet = manifold._eval_unchecked(u_proj)
        # Chart gauge fixing seeds the next refit only; convergence is
        # measured on ambient foot points, which reparameterization leaves
        # untouched. Curves use arc length; surfaces are centered and
        # rotated onto their chart principal axes so knot spans stop
        # drifting with the chart.
        u = _arclength_values(manifold, u_proj) if d == 1 else _axis_aligned_chart(u_proj)
        if prev_feet is not None:
            shift = float(np.linalg.norm(feet - prev_feet, axis=1).mean())
            if shift < tol:
                prev_feet = feet
                break
            # Divergence = shift failing to decrease iteration over
            # iteration ten times in a row; bounded wobble instead runs to
            # the iteration cap and keeps the final refit.
            if shift < prev_shift - 1e-15:
                stall = 0
            else:
                stall += 1
                if stall >= 10:
                    raise FitDiverged(
                        f"projection shift stalled at {shift:.3e} (lambda={lam:.3e})"
                    )
            prev_shift = shift
        prev_feet = feet

    # Final refit on the converged parameters, then score.
    state = _refit(pts, u, d, lam, nb)
    manifold = state["manifold"]
    u = manifold.project_batch(pts)
    manifold.hull = np.stack([u.min(axis=0), u.max(axis=0)], axis=1)
    manifold.chart_center = u.mean(axis=0)
    feet = manifold._eval_unchecked(u)
    manifold.residual_rms = float(np.sqrt(((pts - feet) ** 2).sum(axis=1).mean()))
    gcv = _gcv(state["rss"], n, state["tr_h"])
    return gcv, manifold


def _refit(pts, u, d, lam, nb):
    if d == 1:
        lo, hi = float(u[:, 0].min()), float(u[:, 0].max())
        knots = _clamped_knots(lo, hi, nb)
        B = _bspline_design(u[:, 0], knots)
        P = _penalty_matrix(knots)
        C, tr_h, rss = _penalized_solve(B, P, lam, pts)
        manifold = PrincipalManifold(
            dim=1, degree=DEGREE, knots=(knots,), coef=C, lam=lam,
            residual_rms=float(np.sqrt(rss / len(pts))),
            curvature_energy=float(np.einsum("ic,ij,jc->", C, P, C)),
            hull=np.array([[lo, hi]]), chart_center=u.mean(axis=0),
        )
        return {"manifold": manifold, "tr_h": tr_h, "rss": rss}

    lo = u.min(axis=0)
    hi = u.max(axis=0)
    ku = _clamped_knots(float(lo[0]), float(hi[0]), nb)
    kv = _clamped_knots(float(lo[1]), float(hi[1]), nb)
    Bu = _bspline_design(u[:, 0], ku)
    Bv = _bspline_design(u[:, 1], kv)
    B = (Bu[:, :, None] * Bv[:, None, :]).reshape(len(u), -1)
    P2u = _penalty_matrix(ku, deriv=2)
    P1u = _penalty_matrix(ku, deriv=1)
    P0u = _penalty_matrix(ku, deriv=0)
    P2v = _penalty_matrix(kv, deriv=2)
    P1v = _penalty_matrix(kv, deriv=1)
    P0v = _penalty_matrix(kv, deriv=0)
    # Thin-plate energy: f_uu^2 + 2 f_uv^2 + f_vv^2 integrated.
    P = np.kron(P2u, P0v) + 2.0 * np.kron(P1u, P1v) + np.kron(P0u, P2v)
    C, tr_h, rss = _penalized_solve(B, P, lam, pts)
    manifold = PrincipalManifold(
        dim=2, degree=DEGREE, knots=(ku, kv), coef=C, lam=lam,
        residual_rms=float(np.sqrt(rss / len(pts))),
        curvature_energy=float(np.einsum("ic,ij,jc->", C, P, C)),
        hull=np.stack([lo, hi], axis=1), chart_center=u.mean(axis=0),
    )
    return {"manifold": manifold, "tr_h": tr_h, "rss": rss}


def _arclength_values(manifold: PrincipalManifold, u: np.ndarray) -> np.ndarray:
    """Map curve parameters to cumulative arc length.

    Keeps the chart metric close to isometric so chart-space distances and
    gradients carry ambient meaning.
    """
    (lo,), (hi,) = manifold._margin()
    grid = np.linspace(lo, hi, 256)
    curve = manifold._eval_unchecked(grid[:, None])
    seg = np.linalg.norm(np.diff(curve, axis=0), axis=1)
    arclen = np.concatenate([[0.0], np.cumsum(seg)])
    # Projections can land in the inflated margin; covering it keeps the
    # reparameterization smooth there instead of clamping at the knot ends.
    return np.interp(u[:, 0], grid, arclen)[:, None]


def _axis_aligned_chart(u: np.ndarray) -> np.ndarray:
    """Center a 2-d chart and rotate it onto its principal axes.

    A rigid chart move (the spline gauge freedom) that keeps distances
    intact while making the knot spans deterministic functions of the
    projected shape.
    """
    x = u - u.mean(axis=0)
    _, _, vt = np.linalg.svd(x, full_matrices=False)
    axes = vt.copy()
    for i in range(axes.shape[0]):
        j = int(np.argmax(np.abs(axes[i])))
        if axes[i, j] < 0:
            axes[i] = -axes[i]
    return x @ axes.T


def nonlinear_variability(manifold: PrincipalManifold, points, phi: float) -> ManifoldVariability:
    """Tangential and orthogonal variability of points about a manifold.

    eta_par spreads the chart coordinates (centered at the chart mean before
    norms are taken); eta_perp spreads the stress-vector lengths. Both are
    normalized by the object's spatial scale.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    u = manifold.project_batch(pts)
    feet = manifold._eval_unchecked(u)
    stress_len = np.linalg.norm(pts - feet, axis=1)
    centered = u - u.mean(axis=0)
    par_norm = np.linalg.norm(centered, axis=1)
    var = lambda v: float(v.var(ddof=1)) if len(v) > 1 else 0.0
    return ManifoldVariability(
        eta_perp=float(np.sqrt(var(stress_len)) / phi),
        eta_par=float(np.sqrt(var(par_norm)) / phi),
    )


def classify_nonlinear(var: ManifoldVariability, th, d: int):
    """p2c/p2S when orthogonal spread is invariant and tangential spread is
    intentional; None otherwise."""
    if var.eta_perp < th.xi1 and var.eta_par > th.xi2:
        return "p2c" if d == 1 else "p2S"
    return None


# ---------------------------------------------------------------------------
# Linear manifolds share the chart interface so the controller can treat
# every constraint kind uniformly.


@dataclass(frozen=True)
class LinearManifold:
    """Line (d=1) or plane (d=2) through an anchor, orthonormal basis rows."""

    anchor: np.ndarray
    basis: np.ndarray  # (d, 3)

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def chart_center(self) -> np.ndarray:
        return np.zeros(self.dim)

    def project(self, x) -> np.ndarray:
        return self.project_batch(np.asarray(x, dtype=np.float64).reshape(1, 3))[0]

    def project_batch(self, points, warm=None) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return (pts - self.anchor) @ self.basis.T

    def reconstruct(self, u) -> np.ndarray:
        u_arr = np.asarray(u, dtype=np.float64)
        return self.anchor + u_arr @ self.basis

    def _eval_unchecked(self, u_arr) -> np.ndarray:
        return self.reconstruct(u_arr)

    def jacobian(self, u) -> np.ndarray:
        return self.basis.T.copy()
