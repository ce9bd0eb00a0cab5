"""Linear principal-constraint estimation.

Slave candidates are expressed in every master local frame; the spread of a
candidate's N demo positions at a fixed (frame, time) is summarized by the
spatial variability eta: square roots of covariance eigenvalues divided by
the slave's spatial scale, so classification is object-size-free. Small
leading spread means the demos pin the candidate to a point; one or two
small trailing components with large leading spread mean a line or plane.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .errors import NotOneShot
from .geometry import Trajectory

P2P, P2L, P2PLANE, P2C, P2S = "p2p", "p2l", "p2P", "p2c", "p2S"

LINEAR_KINDS = (P2P, P2L, P2PLANE)
NONLINEAR_KINDS = (P2C, P2S)


@dataclass(frozen=True)
class Thresholds:
    """Lower/upper variability thresholds: below xi1 counts as invariant,
    above xi2 counts as intentionally varied."""

    xi1: float = 0.02
    xi2: float = 0.10

    def __post_init__(self):
        if not (0.0 < self.xi1 < self.xi2):
            raise ValueError("need 0 < xi1 < xi2")


@dataclass(frozen=True)
class FrameLocalTensor:
    """Frame-local slave positions indexed [frame j][candidate k][time t][demo n]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 5 or v.shape[4] != 3:
            raise ValueError(f"expected (J, K, T, N, 3), got {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("non-finite frame-local values")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class SpatialVariability:
    eta: np.ndarray
    frame: int = -1
    candidate: int = -1
    time: int = -1

    def __post_init__(self):
        e = np.asarray(self.eta, dtype=np.float64).reshape(-1)
        if (e < 0).any() or (np.diff(e) > 1e-12).any():
            raise ValueError("eta must be non-negative and non-increasing")
        object.__setattr__(self, "eta", e)


@dataclass(frozen=True)
class LinearConstraint:
    """A point/line/plane restriction in a local frame.

    anchor is the mean frame-local position over demos; basis holds the
    leading covariance eigenvectors spanning the allowed directions
    (0 for p2p, 1 for p2l, 2 for p2P).
    """

    kind: str
    anchor: np.ndarray
    basis: np.ndarray  # (d, 3), possibly d = 0
    frame_id: int
    time: int
    keypoint_id: int

    def __post_init__(self):
        if self.kind not in LINEAR_KINDS:
            raise ValueError(f"not a linear constraint kind: {self.kind}")
        basis = np.asarray(self.basis, dtype=np.float64).reshape(-1, 3)
        d = {P2P: 0, P2L: 1, P2PLANE: 2}[self.kind]
        if basis.shape[0] != d:
            raise ValueError(f"{self.kind} needs {d} basis vectors")
        if d > 0:
            gram = basis @ basis.T
            if np.abs(gram - np.eye(d)).max() > 1e-9:
                raise ValueError("basis vectors must be orthonormal")
        object.__setattr__(self, "basis", basis)
        object.__setattr__(
            self, "anchor", np.asarray(self.anchor, dtype=np.float64).reshape(3)
        )


@dataclass(frozen=True)
class Selection:
    """One (candidate, frame, time) passing a constraint criterion."""

    candidate: int
    frame: int
    time: int
    kind: str
    score: float


def express_in_frames(slave: Trajectory, rotations, translations) -> FrameLocalTensor:
    """Map slave candidate world positions into every master frame.

    rotations: (N, T, J, 3, 3), translations: (N, T, J, 3); arrays shaped
    (T, J, ...) or (J, ...) broadcast across the missing leading axes.
    Output values[j, k, t, n] = R[n,t,j]^T @ (p[n,t,k] - tr[n,t,j]).
    """
    data = slave.data
    N, T, K = data.shape[0], data.shape[1], data.shape[2]
    R = np.asarray(rotations, dtype=np.float64)
    tr = np.asarray(translations, dtype=np.float64)
    if R.ndim == 3:
        R = R[None, None]
    elif R.ndim == 4:
        R = R[None]
    if tr.ndim == 2:
        tr = tr[None, None]
    elif tr.ndim == 3:
        tr = tr[None]
    R = np.broadcast_to(R, (N, T) + R.shape[2:])
    tr = np.broadcast_to(tr, (N, T) + tr.shape[2:])
    J = R.shape[2]

    out = np.empty((J, K, T, N, 3))
    for t in range(T):
        diff = data[:, t, None, :, :] - tr[:, t, :, None, :]      # (N, J, K, 3)
        out[:, :, t] = np.einsum("njab,njka->jknb", R[:, t], diff)
    return FrameLocalTensor(out)


def infer_dimension(points: np.ndarray, tol: float = 1e-9) -> int:
    """Task dimension: 2 when every z coordinate is (numerically) zero."""
    pts = np.asarray(points, dtype=np.float64)
    return 2 if np.abs(pts[..., 2]).max() <= tol else 3


def one_shot_extract(tensor: FrameLocalTensor, time: int | None = None):
    """Distance-criteria extraction from a single demonstration.

    Selects the frame closest on average to all slave candidates at the
    final time step, then the candidates closest to / farthest from that
    frame's origin, plus (3D) the candidate farthest from both. Emits D
    point constraints that together fully determine the slave pose.
    Ties break toward the lowest candidate index.
    """
    vals = tensor.values
    J, K, T, N, _ = vals.shape
    if N != 1:
        raise NotOneShot(f"one-shot extraction needs exactly 1 demo, got {N}")
    t = T - 1 if time is None else time
    pos = vals[:, :, t, 0, :]                      # (J, K, 3)
    dist = np.linalg.norm(pos, axis=2)             # (J, K)

    frame = int(np.argmin(dist.mean(axis=1)))
    d_frame = dist[frame]
    k1 = int(np.argmin(d_frame))
    k2 = int(np.argmax(d_frame))

    dim = infer_dimension(vals)
    keypoints = [k1, k2]
    if dim == 3:
        p = pos[frame]
        d_k1 = np.linalg.norm(p - p[k1], axis=1)
        d_k2 = np.linalg.norm(p - p[k2], axis=1)
        k3 = int(np.argmax(np.minimum(d_k1, d_k2)))
        keypoints.append(k3)

    constraints = [
        LinearConstraint(
            kind=P2P,
            anchor=pos[frame, k],
            basis=np.zeros((0, 3)),
            frame_id=frame,
            time=t,
            keypoint_id=k,
        )
        for k in keypoints
    ]
    return keypoints, constraints


def pca_variability(positions: np.ndarray, phi: float,
                    frame: int = -1, candidate: int = -1, time: int = -1) -> SpatialVariability:
    """Spatial variability of N demo positions: sqrt of sample-covariance
    eigenvalues over the spatial scale, sorted descending."""
    pts = np.asarray(positions, dtype=np.float64)
    if pts.shape[0] < 2:
        raise ValueError("need at least 2 positions")
    if phi <= 0:
        raise ValueError("scale must be positive")
    cov = np.cov(pts.T, ddof=1)
    eig = np.clip(np.linalg.eigvalsh(cov)[::-1], 0.0, None)
    return SpatialVariability(np.sqrt(eig) / phi, frame, candidate, time)


def classify_linear(eta, th: Thresholds, N: int, max_components: int = 3):
    """Constraint kind from sorted variability, or None.

    Point when the leading spread is already invariant; line when one free
    direction remains and is intentionally varied (needs N > 2); plane when
    two free directions remain (needs N > 3). max_components=2 disables the
    plane test for planar (z == 0) tasks.
    """
    e = eta.eta if isinstance(eta, SpatialVariability) else np.asarray(eta, dtype=np.float64)
    if e[0] < th.xi1:
        return P2P
    if N > 2 and e[1] < th.xi1 and e[0] > th.xi2:
        return P2L
    if max_components > 2 and N > 3 and e[2] < th.xi1 and e[1] > th.xi2:
        return P2PLANE
    return None


def build_linear_constraint(positions: np.ndarray, kind: str,
                            frame_id: int, time: int, keypoint_id: int) -> LinearConstraint:
    """Anchor and basis for a classified candidate: mean position plus the
    leading covariance eigenvectors (deterministic sign convention)."""
    pts = np.asarray(positions, dtype=np.float64)
    anchor = pts.mean(axis=0)
    d = {P2P: 0, P2L: 1, P2PLANE: 2}[kind]
    if d == 0:
        basis = np.zeros((0, 3))
    else:
        cov = np.cov(pts.T, ddof=1)
        w, V = np.linalg.eigh(cov)
        order = np.argsort(w)[::-1]
        basis = V[:, order[:d]].T
        # Fix eigenvector signs: largest-magnitude component positive.
        for i in range(d):
            j = int(np.argmax(np.abs(basis[i])))
            if basis[i, j] < 0:
                basis[i] = -basis[i]
    return LinearConstraint(kind, anchor, basis, frame_id, time, keypoint_id)


def scan_linear(tensor: FrameLocalTensor, phi: float, th: Thresholds,
                max_components: int = 3, time_stride: int = 1) -> list:
    """Sweep every (frame, candidate, time) and collect linear selections.

    The variability sweep runs on the accelerated kernel; classification is
    the same threshold chain as classify_linear, vectorized. The selection
    score is the leading variability component.
    """
    vals = tensor.values[:, :, ::time_stride]
    J, K, T, N, _ = vals.shape
    eta = _accel.eta_sweep(vals, phi)              # (J, K, T, 3)

    is_p2p = eta[..., 0] < th.xi1
    is_p2l = (~is_p2p) & (N > 2) & (eta[..., 1] < th.xi1) & (eta[..., 0] > th.xi2)
    is_plane = (
        (~is_p2p) & (~is_p2l) & (max_components > 2) & (N > 3)
        & (eta[..., 2] < th.xi1) & (eta[..., 1] > th.xi2)
    )

    selections = []
    for kind, mask in ((P2P, is_p2p), (P2L, is_p2l), (P2PLANE, is_plane)):
        js, ks, ts = np.nonzero(mask)
        scores = eta[js, ks, ts, 0]
        for j, k, t, s in zip(js, ks, ts, scores):
            selections.append(
                Selection(candidate=int(k), frame=int(j), time=int(t) * time_stride,
                          kind=kind, score=float(s))
            )
    return selections
