"""Rigid-body geometry, trajectory containers, and trajectory conditioning.

Points are plain float64 numpy arrays of shape (3,); point sets are (P, 3).
2D tasks are represented as 3D with z identically zero, so there is a single
code path for both.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometry, EmptySequence, UnitError

_ORTHONORMAL_TOL = 1e-9


def as_points(obj) -> np.ndarray:
    """Coerce to a float64 (P, 3) array and check finiteness."""
    pts = np.asarray(obj, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(1, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (P, 3) point array, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise UnitError("non-finite coordinates in point set")
    return pts


@dataclass(frozen=True)
class RigidTransform:
    """Rotation plus translation, applied as x -> R @ x + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if np.abs(R.T @ R - np.eye(3)).max() > _ORTHONORMAL_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > _ORTHONORMAL_TOL:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return self after other: (self ∘ other)(x) = self(other(x))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )


@dataclass(frozen=True)
class Trajectory:
    """Corresponded point trajectories, indexed [demo n][time t][candidate h].

    data has shape (N, T, H, 3) and is rectangular by construction: every
    demo shares the same T and H after resampling.
    """

    data: np.ndarray
    n_demos: int = field(init=False)
    n_steps: int = field(init=False)
    n_candidates: int = field(init=False)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 4 or arr.shape[3] != 3:
            raise ValueError(f"expected (N, T, H, 3) array, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise UnitError("non-finite trajectory entries")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "n_demos", arr.shape[0])
        object.__setattr__(self, "n_steps", arr.shape[1])
        object.__setattr__(self, "n_candidates", arr.shape[2])


def align_rigid(source, target) -> RigidTransform:
    """Least-squares rigid alignment mapping source points onto target points.

    Returns argmin over rigid transforms of sum ||target_q - T(source_q)||^2,
    solved in closed form by SVD of the cross-covariance (orthogonal
    Procrustes with reflection correction, no scale).

    Raises DegenerateGeometry when the source points are collinear or
    coincident, since the in-plane rotation is then not unique.
    """
    src = as_points(source)
    tgt = as_points(target)
    if src.shape != tgt.shape:
        raise ValueError("source and target must have matching shapes")
    if src.shape[0] < 3:
        raise ValueError("need at least 3 point pairs")

    src_mean = src.mean(axis=0)
    tgt_mean = tgt.mean(axis=0)
    H = (src - src_mean).T @ (tgt - tgt_mean)
    U, sing, Vt = np.linalg.svd(H)

    # Collinear or coincident source: second moment rank < 2.
    spread = np.linalg.svd(src - src_mean, compute_uv=False)
    if spread[0] < 1e-12 or spread[1] < 1e-9 * spread[0]:
        raise DegenerateGeometry("source points collinear or coincident")

    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    t = tgt_mean - R @ src_mean
    return RigidTransform(R, t)


def resample_normalize(raw: list, T: int) -> Trajectory:
    """Resample variable-length demos onto T uniform phase values in [0, 1].

    raw is a list of per-demo arrays shaped (T_i, H, 3). Each demo is linearly
    reinterpolated; first and last samples are preserved exactly.
    """
    if T < 2:
        raise ValueError("T must be >= 2")
    if not raw:
        raise EmptySequence("no demos to resample")
    out = []
    H = None
    for seq in raw:
        arr = np.asarray(seq, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"demo must be (T_i, H, 3), got {arr.shape}")
        if arr.shape[0] < 2:
            raise EmptySequence("demo has fewer than 2 samples")
        if H is None:
            H = arr.shape[1]
        elif arr.shape[1] != H:
            raise ValueError("demos disagree on candidate count")
        t_i = arr.shape[0]
        # Fractional source indices for each target phase; endpoints exact.
        pos = np.linspace(0.0, t_i - 1.0, T)
        lo = np.floor(pos).astype(int)
        lo = np.minimum(lo, t_i - 2)
        frac = (pos - lo)[:, None, None]
        out.append(arr[lo] * (1.0 - frac) + arr[lo + 1] * frac)
    return Trajectory(np.stack(out, axis=0))


def smooth(traj: Trajectory, window: int) -> Trajectory:
    """Per-coordinate centered moving average along time, reflected boundary.

    window must be odd; window=1 is the identity.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be odd and >= 1")
    if window == 1:
        return traj
    half = window // 2
    data = traj.data
    if data.shape[1] < 2:
        return traj
    padded = np.pad(data, ((0, 0), (half, half), (0, 0), (0, 0)), mode="reflect")
    T = data.shape[1]
    acc = np.zeros_like(data)
    for i in range(window):
        acc += padded[:, i:i + T]
    return Trajectory(acc / window)


def rotvec_to_matrix(v: np.ndarray) -> np.ndarray:
    """Rodrigues exponential of a rotation vector."""
    v = np.asarray(v, dtype=np.float64).reshape(3)
    angle = np.linalg.norm(v)
    if angle < 1e-12:
        K = skew(v)
        return np.eye(3) + K + 0.5 * (K @ K)
    axis = v / angle
    K = skew(axis)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def matrix_to_rotvec(R: np.ndarray) -> np.ndarray:
    """Logarithm of a rotation matrix as a rotation vector."""
    R = np.asarray(R, dtype=np.float64)
    cos_angle = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    angle = np.arccos(cos_angle)
    if angle < 1e-9:
        return 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if np.pi - angle < 1e-6:
        # Near pi the off-diagonal form degenerates; use the symmetric part.
        A = 0.5 * (R + np.eye(3))
        axis = np.sqrt(np.clip(np.diag(A), 0.0, None))
        k = int(np.argmax(axis))
        axis = A[:, k] / max(axis[k], 1e-12)
        axis = axis / np.linalg.norm(axis)
        return angle * axis
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return angle / (2.0 * np.sin(angle)) * w


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])
