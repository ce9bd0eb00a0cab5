"""Via-point movement primitives over a decreasing canonical phase.

A primitive decomposes a trajectory into an elementary start-to-goal ramp
plus a shape residual regressed on squared-exponential kernel features of
the phase x, which falls linearly from 1 to 0. The regression uses
endpoint-anchored features B(x) = psi(x) - (1-x) psi(0) - x psi(1), which
vanish at both phase endpoints: rollouts then start exactly at y0 and end
exactly at g for any adapted endpoints, with no reliance on kernel decay.
Weight statistics across demos give the usual Gaussian weight model; the
mean rollout uses the weight mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RankDeficient

DEFAULT_KERNELS = 20
_RIDGE = 1e-8


def kernel_centers(n_k: int) -> np.ndarray:
    return np.linspace(0.05, 0.95, n_k)


def kernel_width(n_k: int) -> float:
    """One shared width, kernel std 1.8x the center spacing.

    Strongly overlapping kernels keep the ridge regression smooth enough
    to reconstruct demo shapes to well under 1e-3 of their range; narrow
    kernels (crossing near half activation) leave visible ripple between
    centers.
    """
    delta = 0.9 / (n_k - 1)
    return 1.0 / (2.0 * (1.8 * delta) ** 2)


def phase_grid(steps: int) -> np.ndarray:
    """Canonical phase samples, linearly decreasing 1 -> 0 inclusive."""
    return np.linspace(1.0, 0.0, steps)


@dataclass
class CanonicalClock:
    """Linear phase generator for rollouts and online control.

    x starts at 1 and decreases to 0 over `duration` seconds in steps of
    `dt`, clamping at 0 afterwards (the regulation window).
    """

    duration: float
    dt: float

    def __post_init__(self):
        if self.duration <= 0 or self.dt <= 0:
            raise ValueError("duration and dt must be positive")
        self._t = 0.0

    @property
    def x(self) -> float:
        return max(0.0, 1.0 - self._t / self.duration)

    def step(self) -> float:
        self._t += self.dt
        return self.x

    def finished(self) -> bool:
        return self._t >= self.duration


@dataclass
class VMPModel:
    """Kernel count, placement constants, and per-dimension weight stats."""

    n_kernels: int
    centers: np.ndarray      # (n_k,)
    width: float
    mu_w: np.ndarray         # (dim, n_k)
    sigma_w: np.ndarray      # (dim, n_k, n_k)
    dim: int

    def __post_init__(self):
        if self.n_kernels < 2:
            raise ValueError("need at least 2 kernels")
        if self.mu_w.shape != (self.dim, self.n_kernels):
            raise ValueError("weight mean shape mismatch")
        if self.sigma_w.shape != (self.dim, self.n_kernels, self.n_kernels):
            raise ValueError("weight covariance shape mismatch")
        for d in range(self.dim):
            s = self.sigma_w[d]
            if not np.allclose(s, s.T, atol=1e-9):
                raise ValueError("weight covariance must be symmetric")

    def features(self, x) -> np.ndarray:
        x_arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
        return _raw_features(x_arr, self.centers, self.width)

    def shape_term(self, x) -> np.ndarray:
        """B(x)^T mu_w for each phase sample: (len(x), dim)."""
        return _anchored_features(self, np.atleast_1d(np.asarray(x, dtype=np.float64))) @ self.mu_w.T

    def to_dict(self) -> dict:
        return {
            "n_kernels": self.n_kernels,
            "width": self.width,
            "dim": self.dim,
            "mu_w": self.mu_w.tolist(),
            "sigma_w": self.sigma_w.tolist(),
        }

    @staticmethod
    def from_dict(doc: dict) -> "VMPModel":
        n_k = int(doc["n_kernels"])
        return VMPModel(
            n_kernels=n_k,
            centers=kernel_centers(n_k),
            width=float(doc["width"]),
            mu_w=np.asarray(doc["mu_w"], dtype=np.float64),
            sigma_w=np.asarray(doc["sigma_w"], dtype=np.float64),
            dim=int(doc["dim"]),
        )


def _raw_features(x: np.ndarray, centers: np.ndarray, width: float) -> np.ndarray:
    return np.exp(-width * (x[:, None] - centers[None, :]) ** 2)


def fit_vmp(trajectories, n_kernels: int = DEFAULT_KERNELS) -> VMPModel:
    """Fit weight statistics from N demos of shape (N, T, dim).

    Each demo's residual is taken against the elementary ramp built from
    that demo's own endpoints, so residuals vanish exactly at x in {0, 1};
    the residual is ridge-regressed on the endpoint-anchored kernel
    features.
    """
    trajs = np.asarray(trajectories, dtype=np.float64)
    if trajs.ndim == 2:
        trajs = trajs[None, :, :]
    if trajs.ndim != 3:
        raise ValueError("trajectories must be (N, T, dim)")
    n, t_steps, dim = trajs.shape
    if t_steps < n_kernels:
        raise ValueError(f"need T >= {n_kernels} samples, got {t_steps}")

    centers = kernel_centers(n_kernels)
    width = kernel_width(n_kernels)
    x = phase_grid(t_steps)
    psi = _raw_features(x, centers, width)
    psi0 = _raw_features(np.array([0.0]), centers, width)[0]
    psi1 = _raw_features(np.array([1.0]), centers, width)[0]
    anchored = psi - np.outer(1.0 - x, psi0) - np.outer(x, psi1)
    gram = anchored.T @ anchored + _RIDGE * np.eye(n_kernels)

    weights = np.empty((n, dim, n_kernels))
    for m in range(n):
        y0 = trajs[m, 0]
        g = trajs[m, -1]
        elementary = g[None, :] + x[:, None] * (y0 - g)[None, :]
        residual = trajs[m] - elementary
        w = np.linalg.solve(gram, anchored.T @ residual)
        if not np.isfinite(w).all():
            raise RankDeficient("kernel regression produced non-finite weights")
        weights[m] = w.T

    mu_w = weights.mean(axis=0)
    sigma_w = np.zeros((dim, n_kernels, n_kernels))
    if n > 1:
        centered = weights - mu_w[None, :, :]
        for d in range(dim):
            sigma_w[d] = np.einsum("mi,mj->ij", centered[:, d], centered[:, d]) / (n - 1)
    return VMPModel(n_kernels=n_kernels, centers=centers, width=width,
                    mu_w=mu_w, sigma_w=sigma_w, dim=dim)


def rollout(model: VMPModel, y0, g, steps: int) -> np.ndarray:
    """Mean trajectory from y0 to g over `steps` phase samples.

    The anchored features vanish at both phase endpoints, so the first
    sample equals y0 and the last equals g to machine precision for any
    adapted endpoints.
    """
    if steps < 2:
        raise ValueError("need at least 2 rollout steps")
    return rollout_at(model, y0, g, phase_grid(steps))


def rollout_at(model: VMPModel, y0, g, x) -> np.ndarray:
    """Evaluate the adapted mean trajectory at arbitrary phases x."""
    y0 = np.asarray(y0, dtype=np.float64).reshape(model.dim)
    g = np.asarray(g, dtype=np.float64).reshape(model.dim)
    x_arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
    elem = g[None, :] + x_arr[:, None] * (y0 - g)[None, :]
    return elem + model.shape_term(x_arr)


def _anchored_features(model: VMPModel, x: np.ndarray) -> np.ndarray:
    """Features of the endpoint-anchored form y = h_elem + B(x)^T w.

    B(x) = psi(x) - (1-x) psi(0) - x psi(1); B vanishes at both endpoints,
    which is what makes rollouts exact at y0 and g regardless of weights.
    """
    psi = model.features(x)
    psi0 = model.features(np.array([0.0]))[0]
    psi1 = model.features(np.array([1.0]))[0]
    return psi - (1.0 - x)[:, None] * psi0[None, :] - x[:, None] * psi1[None, :]


def rollout_with_viapoints(model: VMPModel, y0, g, steps: int,
                           viapoints) -> np.ndarray:
    """Rollout passing through (phase, value) via-points exactly.

    When every per-dimension weight covariance is nonsingular the weight
    distribution is conditioned on the via-point observations in the
    endpoint-anchored feature space, which leaves y0 and g untouched.
    With degenerate covariance (e.g. a single demo) the elementary
    trajectory is instead shifted piecewise-linearly through the
    via-points.
    """
    if steps < 2:
        raise ValueError("need at least 2 rollout steps")
    y0 = np.asarray(y0, dtype=np.float64).reshape(model.dim)
    g = np.asarray(g, dtype=np.float64).reshape(model.dim)
    vias = [(float(xv), np.asarray(yv, dtype=np.float64).reshape(model.dim))
            for xv, yv in viapoints]
    for xv, _ in vias:
        if not 0.0 < xv < 1.0:
            raise ValueError("via-point phase must lie strictly inside (0, 1)")

    nonsingular = all(
        np.linalg.eigvalsh(model.sigma_w[d]).min()
        > 1e-12 * max(1.0, np.abs(model.sigma_w[d]).max())
        for d in range(model.dim)
    )
    x = phase_grid(steps)
    if nonsingular:
        mu = model.mu_w.copy()
        sigma = model.sigma_w.copy()
        for xv, yv in vias:
            b = _anchored_features(model, np.array([xv]))[0]
            h_elem = g + xv * (y0 - g)
            for d in range(model.dim):
                s2 = b @ sigma[d] @ b
                if s2 <= 1e-15 * max(1.0, np.abs(sigma[d]).max()):
                    continue  # constraint direction already pinned
                gain = sigma[d] @ b / s2
                mu[d] = mu[d] + gain * (yv[d] - h_elem[d] - b @ mu[d])
                sigma[d] = sigma[d] - np.outer(gain, b @ sigma[d])
        anchored = _anchored_features(model, x)
        elem = g[None, :] + x[:, None] * (y0 - g)[None, :]
        return elem + anchored @ mu.T

    base = rollout(model, y0, g, steps)
    knots_x = [1.0] + [xv for xv, _ in sorted(vias, reverse=True)] + [0.0]
    shifts = [np.zeros(model.dim)]
    for xv, yv in sorted(vias, reverse=True):
        base_at = rollout_at(model, y0, g, np.array([xv]))[0]
        shifts.append(yv - base_at)
    shifts.append(np.zeros(model.dim))
    correction = np.empty((steps, model.dim))
    for d in range(model.dim):
        correction[:, d] = np.interp(-x, -np.asarray(knots_x),
                                     [s[d] for s in shifts])
    return base + correction


def project_orthogonal(manifold, trajectory: np.ndarray) -> np.ndarray:
    """Orthogonal offset profile of a 3D trajectory relative to a manifold.

    Magnitude of the stress vector per time step; a signed value is used
    only when the manifold has a one-dimensional, consistently orientable
    normal space (a plane), with the sign taken along its fixed normal.
    """
    traj = np.asarray(trajectory, dtype=np.float64).reshape(-1, 3)
    u = manifold.project_batch(traj)
    feet = manifold._eval_unchecked(u) if hasattr(manifold, "_eval_unchecked") \
        else manifold.reconstruct(u)
    stress = traj - feet
    mags = np.linalg.norm(stress, axis=1)
    basis = getattr(manifold, "basis", None)
    if basis is not None and basis.shape[0] == 2:
        normal = np.cross(basis[0], basis[1])
        normal /= np.linalg.norm(normal)
        j = int(np.argmax(np.abs(normal)))
        if normal[j] < 0:
            normal = -normal
        return stress @ normal
    return mags
