"""Linear constraint estimation against brute-force covariance oracles."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from kvil.constraints import (FrameLocalTensor, Selection, Thresholds,
                              build_linear_constraint, classify_linear,
                              express_in_frames, infer_dimension,
                              one_shot_extract, pca_variability, scan_linear)
from kvil.errors import NotOneShot
from kvil.geometry import Trajectory, rotvec_to_matrix

TH = Thresholds()


def test_thresholds_ordering():
    with pytest.raises(ValueError):
        Thresholds(xi1=0.1, xi2=0.1)
    with pytest.raises(ValueError):
        Thresholds(xi1=-0.1, xi2=0.2)


def test_pca_variability_matches_eigen_oracle():
    rng = np.random.default_rng(0)
    for _ in range(30):
        pts = rng.normal(size=(rng.integers(2, 12), 3)) * rng.uniform(0.1, 5.0)
        phi = rng.uniform(0.5, 4.0)
        var = pca_variability(pts, phi)
        centered = pts - pts.mean(axis=0)
        cov = centered.T @ centered / (pts.shape[0] - 1)
        expect = np.sqrt(np.clip(np.sort(np.linalg.eigvalsh(cov))[::-1], 0, None)) / phi
        assert_allclose(var.eta, expect, atol=1e-12)
    with pytest.raises(ValueError):
        pca_variability(pts[:1], 1.0)
    with pytest.raises(ValueError):
        pca_variability(pts, 0.0)


def test_classify_linear_threshold_chain():
    lo, hi = 0.5 * TH.xi1, 2.0 * TH.xi2
    mid = 0.5 * (TH.xi1 + TH.xi2)
    assert classify_linear([lo, lo, lo], TH, N=2) == "p2p"
    assert classify_linear([hi, lo, lo], TH, N=3) == "p2l"
    assert classify_linear([hi, lo, lo], TH, N=2) is None       # too few demos
    assert classify_linear([mid, lo, lo], TH, N=5) is None      # lead not varied
    assert classify_linear([hi, hi, lo], TH, N=4) == "p2P"
    assert classify_linear([hi, hi, lo], TH, N=3) is None
    assert classify_linear([hi, mid, lo], TH, N=9) is None      # middle in gray zone
    assert classify_linear([hi, hi, lo], TH, N=9, max_components=2) is None
    assert classify_linear([hi, hi, hi], TH, N=9) is None


def test_express_in_frames_oracle():
    rng = np.random.default_rng(1)
    N, T, K, J = 2, 3, 4, 5
    data = rng.normal(size=(N, T, K, 3))
    R = np.stack([[rotvec_to_matrix(rng.normal(size=3)) for _ in range(J)]
                  for _ in range(N * T)]).reshape(N, T, J, 3, 3)
    tr = rng.normal(size=(N, T, J, 3))
    tensor = express_in_frames(Trajectory(data), R, tr)
    assert tensor.shape == (J, K, T, N, 3)
    for n in range(N):
        for t in range(T):
            for j in range(J):
                for k in range(K):
                    expect = R[n, t, j].T @ (data[n, t, k] - tr[n, t, j])
                    assert_allclose(tensor.values[j, k, t, n], expect, atol=1e-12)


def test_express_in_frames_broadcasts_static_frames():
    rng = np.random.default_rng(2)
    data = rng.normal(size=(2, 3, 4, 3))
    R = np.stack([rotvec_to_matrix(rng.normal(size=3)) for _ in range(5)])
    tr = rng.normal(size=(5, 3))
    static = express_in_frames(Trajectory(data), R, tr)
    full = express_in_frames(
        Trajectory(data),
        np.broadcast_to(R, (2, 3, 5, 3, 3)).copy(),
        np.broadcast_to(tr, (2, 3, 5, 3)).copy())
    assert_allclose(static.values, full.values, atol=0)


def test_frame_local_tensor_validation():
    with pytest.raises(ValueError):
        FrameLocalTensor(np.zeros((2, 3, 4, 5)))
    with pytest.raises(ValueError):
        FrameLocalTensor(np.full((1, 1, 1, 1, 3), np.nan))


def test_infer_dimension():
    assert infer_dimension(np.zeros((4, 3))) == 2
    pts = np.zeros((4, 3))
    pts[2, 2] = 0.5
    assert infer_dimension(pts) == 3


def test_build_linear_constraint_anchor_and_basis():
    rng = np.random.default_rng(3)
    axis = np.array([0.6, 0.8, 0.0])
    pts = np.outer(np.linspace(-2, 2, 7), axis) + [1.0, 0.0, 2.0]
    pts += rng.normal(scale=1e-4, size=pts.shape)
    c = build_linear_constraint(pts, "p2l", 0, 0, 0)
    assert_allclose(c.anchor, pts.mean(axis=0), atol=1e-12)
    assert abs(c.basis[0] @ axis) > 1.0 - 1e-6
    assert c.basis[0][np.argmax(np.abs(c.basis[0]))] > 0  # sign convention
    p = build_linear_constraint(pts, "p2p", 1, 2, 3)
    assert p.basis.shape == (0, 3)
    pl = build_linear_constraint(rng.normal(size=(9, 3)) * [1, 1, 1e-4], "p2P", 0, 0, 0)
    normal = np.cross(pl.basis[0], pl.basis[1])
    assert abs(normal[2]) / np.linalg.norm(normal) > 1.0 - 1e-6


def _planted_tensor(rng, kinds):
    """One candidate per requested kind, spread shaped to that kind."""
    J, T, N = 2, 4, 6
    K = len(kinds)
    vals = np.zeros((J, K, T, N, 3))
    for k, kind in enumerate(kinds):
        center = rng.normal(size=3)
        for j in range(J):
            for t in range(T):
                if kind == "p2p":
                    spread = rng.normal(scale=1e-3, size=(N, 3))
                elif kind == "p2l":
                    spread = np.outer(np.linspace(-0.4, 0.4, N), [1.0, 0, 0])
                    spread += rng.normal(scale=1e-3, size=(N, 3))
                elif kind == "p2P":
                    ang = 2 * np.pi * np.arange(N) / N
                    spread = 0.4 * np.stack([np.cos(ang), np.sin(ang),
                                             np.zeros(N)], axis=1)
                    spread += rng.normal(scale=1e-3, size=(N, 3))
                else:
                    spread = rng.normal(scale=0.3, size=(N, 3))
                vals[j, k, t] = center + spread
    return FrameLocalTensor(vals)


def test_scan_linear_matches_pointwise_classification():
    rng = np.random.default_rng(4)
    tensor = _planted_tensor(rng, ["p2p", "p2l", "p2P", "free"])
    phi = 1.0
    sels = scan_linear(tensor, phi, TH)
    got = {(s.frame, s.candidate, s.time): s.kind for s in sels}
    J, K, T, N, _ = tensor.shape
    expect = {}
    for j in range(J):
        for k in range(K):
            for t in range(T):
                var = pca_variability(tensor.values[j, k, t], phi)
                kind = classify_linear(var, TH, N)
                if kind is not None:
                    expect[(j, k, t)] = kind
    assert got == expect
    assert {s.kind for s in sels} == {"p2p", "p2l", "p2P"}
    for s in sels:
        var = pca_variability(tensor.values[s.frame, s.candidate, s.time], phi)
        assert s.score == pytest.approx(var.eta[0], abs=1e-9)


def test_scan_linear_time_stride():
    rng = np.random.default_rng(5)
    tensor = _planted_tensor(rng, ["p2p"])
    sels = scan_linear(tensor, 1.0, TH, time_stride=2)
    assert {s.time for s in sels} == {0, 2}


def test_one_shot_extract_distance_criteria():
    rng = np.random.default_rng(6)
    J, K = 3, 8
    vals = rng.normal(size=(J, K, 5, 1, 3))
    tensor = FrameLocalTensor(vals)
    keypoints, constraints = one_shot_extract(tensor)
    pos = vals[:, :, -1, 0, :]
    dist = np.linalg.norm(pos, axis=2)
    frame = int(np.argmin(dist.mean(axis=1)))
    k1 = int(np.argmin(dist[frame]))
    k2 = int(np.argmax(dist[frame]))
    d1 = np.linalg.norm(pos[frame] - pos[frame, k1], axis=1)
    d2 = np.linalg.norm(pos[frame] - pos[frame, k2], axis=1)
    k3 = int(np.argmax(np.minimum(d1, d2)))
    assert keypoints == [k1, k2, k3]
    for kp, c in zip(keypoints, constraints):
        assert c.kind == "p2p" and c.frame_id == frame and c.keypoint_id == kp
        assert_allclose(c.anchor, pos[frame, kp], atol=0)


def test_one_shot_extract_planar_yields_two_keypoints():
    rng = np.random.default_rng(7)
    vals = rng.normal(size=(2, 6, 4, 1, 3))
    vals[..., 2] = 0.0
    keypoints, constraints = one_shot_extract(FrameLocalTensor(vals))
    assert len(keypoints) == 2 and len(constraints) == 2


def test_one_shot_extract_rejects_multi_demo():
    with pytest.raises(NotOneShot):
        one_shot_extract(FrameLocalTensor(np.zeros((1, 2, 3, 2, 3))))


def test_selection_is_plain_record():
    s = Selection(candidate=1, frame=2, time=3, kind="p2p", score=0.5)
    assert (s.candidate, s.frame, s.time, s.kind, s.score) == (1, 2, 3, "p2p", 0.5)
