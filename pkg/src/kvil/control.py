"""Keypoint-based admittance control.

Each keypoint pulls on the slave body through a virtual spring-damper
toward its moving target; keypoints with line/plane/curve/surface
constraints additionally feel a density force steering them along the
manifold toward demonstrated target regions. A priority projection stops
density forces from disturbing point constraints. Forces aggregate into a
wrench at a virtual tool center point, which drives a two-layer admittance
chain: a compliant virtual pose anchored at a reference, tracked by the
simulated body.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateRadius, InsufficientTargets, NumericalBlowup
from .geometry import matrix_to_rotvec, rotvec_to_matrix

_RADIUS_FLOOR = 1e-9
_BLOWUP = 1e6


@dataclass(frozen=True)
class ControllerGains:
    """Gain set for keypoint springs, density steering, and admittance."""

    kp_bar: float = 400.0      # keypoint spring stiffness
    kd_bar: float = 40.0       # keypoint spring damping
    g1: float = 5.0            # density gradient scale
    g2: float = 5.0            # density chord scale
    kp_tilde: float = 100.0    # virtual admittance stiffness
    kd_tilde: float = 20.0     # virtual admittance damping
    km_tilde: float = 1.0      # wrench admittance scale
    kp_track: float = 900.0    # body tracking stiffness
    kd_track: float = 60.0     # body tracking damping
    h_c: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("kp_bar", "kd_bar", "g1", "g2", "kp_tilde", "kd_tilde",
                     "km_tilde", "kp_track", "kd_track"):
            if getattr(self, name) < 0:
                raise ValueError(f"gain {name} must be non-negative")
        object.__setattr__(self, "h_c",
                           np.asarray(self.h_c, dtype=np.float64).reshape(3))

    def one_shot_schedule(self, count: int) -> list:
        """Per-keypoint (kp, kd) with stiffness ratios 10:2:1 and critical
        damping kd = 2 sqrt(kp), strongest spring first."""
        ratios = [10.0, 2.0, 1.0]
        base = self.kp_bar / 10.0
        out = []
        for l in range(count):
            kp = base * ratios[min(l, len(ratios) - 1)]
            out.append((kp, 2.0 * np.sqrt(kp)))
        return out

    def insertion_preset(self) -> "ControllerGains":
        """Soft, heavily damped virtual system for tight-clearance tasks."""
        return replace(self, kp_tilde=0.4, kd_tilde=40.0)


def attraction_force(k, k_dot, k_star, k_star_dot,
                     kp: float, kd: float) -> np.ndarray:
    """Virtual spring-damper pull of one keypoint toward its target."""
    k = np.asarray(k, dtype=np.float64)
    return kp * (np.asarray(k_star, np.float64) - k) \
        + kd * (np.asarray(k_star_dot, np.float64) - np.asarray(k_dot, np.float64))


def reconstruct_target(manifold, k, offset: float, warm=None):
    """Moving attractor for a non-point keypoint.

    The target sits at the keypoint's foot point on the manifold, pushed
    back out along the current unit stress direction by the primitive's
    remaining orthogonal offset. On the manifold the direction degenerates
    and the target is the foot point itself. Returns (target, foot, u).
    """
    k = np.asarray(k, dtype=np.float64).reshape(3)
    u = manifold.project_batch(k[None], warm=warm)[0]
    foot = manifold._eval_unchecked(np.atleast_2d(u))[0]
    stress = k - foot
    norm = np.linalg.norm(stress)
    if norm < 1e-12:
        return foot.copy(), foot, u
    return foot + offset * (stress / norm), foot, u


@dataclass(frozen=True)
class DensityModel:
    """KDE over demonstrated chart targets plus their mean.

    peak is the largest density value over the samples themselves; forces
    use the peak-normalized density so their magnitude is independent of
    how tightly the demonstrations cluster.
    """

    samples: np.ndarray      # (N, d)
    bandwidth: np.ndarray    # (d,)
    mean: np.ndarray         # (d,)
    peak: float = 1.0

    def density(self, u) -> float:
        u = np.asarray(u, dtype=np.float64).reshape(-1)
        z = (u[None, :] - self.samples) / self.bandwidth[None, :]
        norm = self.samples.shape[0] * np.prod(
            self.bandwidth * np.sqrt(2.0 * np.pi))
        return float(np.exp(-0.5 * (z ** 2).sum(axis=1)).sum() / norm)

    def gradient(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64).reshape(-1)
        z = (u[None, :] - self.samples) / self.bandwidth[None, :]
        w = np.exp(-0.5 * (z ** 2).sum(axis=1))
        norm = self.samples.shape[0] * np.prod(
            self.bandwidth * np.sqrt(2.0 * np.pi))
        return -(w[:, None] * z / self.bandwidth[None, :]).sum(axis=0) / norm

    def scaled_gradient(self, u) -> np.ndarray:
        """Bandwidth-scaled gradient of the peak-normalized density.

        Dimensionless and bounded (single-kernel slope tops out near 0.61),
        so gradient forces stay finite no matter how concentrated the
        demonstrated targets are.
        """
        return self.bandwidth * self.gradient(u) / self.peak


def fit_density(targets) -> DensityModel:
    """Silverman-bandwidth KDE over demonstrated chart coordinates."""
    u = np.asarray(targets, dtype=np.float64)
    if u.ndim == 1:
        u = u[:, None]
    n, d = u.shape
    if n < 2:
        raise InsufficientTargets("density estimation needs at least 2 targets")
    if d not in (1, 2):
        raise ValueError("chart dimension must be 1 or 2")
    sigma = u.std(axis=0, ddof=1)
    factor = (4.0 / ((d + 2.0) * n)) ** (1.0 / (d + 4.0))
    scale = max(np.abs(u).max(), 1.0)
    bandwidth = np.maximum(sigma * factor, 1e-12 * scale)
    model = DensityModel(samples=u, bandwidth=bandwidth, mean=u.mean(axis=0))
    peak = max(model.density(s) for s in u)
    return DensityModel(samples=u, bandwidth=bandwidth, mean=u.mean(axis=0),
                        peak=peak)


def density_force_components(model: DensityModel, manifold, k, g1: float,
                             g2: float, u=None):
    """Gradient and chord steering candidates at keypoint position k.

    Both are chart vectors pushed to the ambient tangent space through the
    manifold Jacobian at the foot point: the (normalized, bounded) density
    gradient scaled by g1, and the unit chord toward the mean demonstrated
    target scaled by g2.
    """
    k = np.asarray(k, dtype=np.float64).reshape(3)
    if u is None:
        u = manifold.project_batch(k[None])[0]
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    jac = manifold.jacobian(u)                      # (3, d)
    f1 = g1 * (jac @ model.scaled_gradient(u))
    delta = model.mean - u
    dn = np.linalg.norm(delta)
    f2 = g2 * (jac @ (delta / dn)) if dn > 1e-12 else np.zeros(3)
    return f1, f2


def density_force(model: DensityModel, manifold, k,
                  g1: float, g2: float, u=None) -> np.ndarray:
    """Along-manifold steering force: the larger-norm candidate wins."""
    f1, f2 = density_force_components(model, manifold, k, g1, g2, u=u)
    return f1 if np.linalg.norm(f1) >= np.linalg.norm(f2) else f2


def priority_project(f_sigma, k1, k2, kind: str, plane_normal=None) -> np.ndarray:
    """Shield a point constraint at k1 from the density force at k2.

    The density force may only move k2 on the sphere around k1 of radius
    ||k2 - k1||. Line-like constraints lose the radial component; plane-like
    constraints keep only the component along the intersection of the
    sphere's tangent plane with the (locally linearized) constraint plane.
    """
    f = np.asarray(f_sigma, dtype=np.float64).reshape(3)
    r = np.asarray(k2, dtype=np.float64) - np.asarray(k1, dtype=np.float64)
    radius = np.linalg.norm(r)
    if radius < _RADIUS_FLOOR:
        raise DegenerateRadius("priority sphere radius is numerically zero")
    n_sphere = r / radius
    if kind in ("p2l", "p2c"):
        return f - (f @ n_sphere) * n_sphere
    if kind in ("p2P", "p2S"):
        if plane_normal is None:
            raise ValueError("plane-like priority projection needs a normal")
        n_plane = np.asarray(plane_normal, dtype=np.float64).reshape(3)
        axis = np.cross(n_sphere, n_plane)
        norm = np.linalg.norm(axis)
        if norm < 1e-12:
            return np.zeros(3)  # plane tangent to sphere: no free direction
        axis /= norm
        return (f @ axis) * axis
    raise ValueError(f"priority projection undefined for kind {kind!r}")


def aggregate_wrench(positions, forces):
    """Sum keypoint forces into a wrench at the virtual tool center point."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(forces, dtype=np.float64).reshape(-1, 3)
    centroid = pos.mean(axis=0)
    force = f.sum(axis=0)
    torque = np.cross(pos - centroid, f).sum(axis=0)
    return force, torque, centroid


@dataclass
class BodyState:
    """Virtual admittance pose and the body tracking it."""

    p_v: np.ndarray
    R_v: np.ndarray
    v_v: np.ndarray
    w_v: np.ndarray
    p: np.ndarray
    R: np.ndarray
    v: np.ndarray
    w: np.ndarray

    @staticmethod
    def at_rest(p0, R0) -> "BodyState":
        p0 = np.asarray(p0, dtype=np.float64).reshape(3)
        R0 = np.asarray(R0, dtype=np.float64).reshape(3, 3)
        return BodyState(p0.copy(), R0.copy(), np.zeros(3), np.zeros(3),
                         p0.copy(), R0.copy(), np.zeros(3), np.zeros(3))


def admittance_step(state: BodyState, force, torque, anchor_p, anchor_R,
                    gains: ControllerGains, dt: float) -> BodyState:
    """One semi-implicit Euler step of the two-layer admittance chain.

    The virtual pose is sprung toward the anchor and deflected by the
    wrench; the body is driven toward the virtual pose by the tracking
    spring-damper. Orientation uses rotation-vector errors and exponential
    increments.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    force = np.asarray(force, dtype=np.float64).reshape(3)
    torque = np.asarray(torque, dtype=np.float64).reshape(3)

    acc_v = gains.kp_tilde * (anchor_p - state.p_v) \
        - gains.kd_tilde * state.v_v + gains.km_tilde * force
    rot_err_v = matrix_to_rotvec(anchor_R @ state.R_v.T)
    alp_v = gains.kp_tilde * rot_err_v \
        - gains.kd_tilde * state.w_v + gains.km_tilde * torque
    v_v = state.v_v + acc_v * dt
    w_v = state.w_v + alp_v * dt
    p_v = state.p_v + v_v * dt
    R_v = rotvec_to_matrix(w_v * dt) @ state.R_v

    acc = gains.kp_track * (p_v - state.p) \
        + gains.kd_track * (v_v - state.v) + gains.h_c
    rot_err = matrix_to_rotvec(R_v @ state.R.T)
    alp = gains.kp_track * rot_err + gains.kd_track * (w_v - state.w)
    v = state.v + acc * dt
    w = state.w + alp * dt
    p = state.p + v * dt
    R = rotvec_to_matrix(w * dt) @ state.R

    new = BodyState(p_v, R_v, v_v, w_v, p, R, v, w)
    for arr in (p_v, v_v, w_v, p, v, w):
        if not np.isfinite(arr).all() or np.abs(arr).max() > _BLOWUP:
            raise NumericalBlowup("admittance state exceeded stability bound")
    return new
