"""Demonstration file IO, canonical shapes, role assignment, local frames."""

import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from kvil.demos import (DemonstrationSet, ObjectRecord, assign_roles,
                        build_frame_bank, compute_canonical_shape,
                        detect_frames, detect_frames_batch,
                        load_demonstration_set, load_scene,
                        write_demonstration_set, write_scene)
from kvil.errors import (DegenerateObject, InsufficientCandidates,
                         MissingCorrespondence, ParseError, SchemaError,
                         UnitError)
from kvil.geometry import Trajectory, rotvec_to_matrix


def _demo_set(rng, n=3, t=8, p=6, p2=4):
    a = rng.normal(size=(n, t, p, 3))
    b = rng.normal(size=(n, t, p2, 3))
    return DemonstrationSet(objects=(
        ObjectRecord("a", tuple(range(p)), Trajectory(a)),
        ObjectRecord("b", tuple(range(100, 100 + p2)), Trajectory(b)),
    ))


def test_object_record_validation():
    traj = Trajectory(np.zeros((1, 2, 3, 3)))
    with pytest.raises(SchemaError):
        ObjectRecord("x", (1, 1, 2), traj)
    with pytest.raises(SchemaError):
        ObjectRecord("x", (1, 2), traj)


def test_demonstration_set_validation():
    t1 = Trajectory(np.zeros((2, 4, 3, 3)))
    t2 = Trajectory(np.zeros((3, 4, 3, 3)))
    with pytest.raises(SchemaError):
        DemonstrationSet(objects=())
    with pytest.raises(SchemaError):
        DemonstrationSet(objects=(ObjectRecord("a", (0, 1, 2), t1),
                                  ObjectRecord("b", (0, 1, 2), t2)))
    with pytest.raises(SchemaError):
        DemonstrationSet(objects=(ObjectRecord("a", (0, 1, 2), t1),
                                  ObjectRecord("a", (3, 4, 5), t1)))
    ds = DemonstrationSet(objects=(ObjectRecord("a", (0, 1, 2), t1),))
    assert (ds.demo_count, ds.time_steps) == (2, 4)
    assert ds.object_named("a").name == "a"
    with pytest.raises(KeyError):
        ds.object_named("zzz")


def test_write_read_round_trip_is_faithful(tmp_path):
    rng = np.random.default_rng(0)
    ds = _demo_set(rng)
    path = tmp_path / "demos.json"
    write_demonstration_set(ds, str(path))
    back = load_demonstration_set(str(path))
    for a, b in zip(ds.objects, back.objects):
        assert a.name == b.name and a.descriptor_ids == b.descriptor_ids
        assert_allclose(a.trajectory.data, b.trajectory.data, rtol=0, atol=0)
    # Byte stability: a second write emits the identical document.
    path2 = tmp_path / "demos2.json"
    write_demonstration_set(back, str(path2))
    assert path.read_bytes() == path2.read_bytes()


def test_load_resamples_ragged_demos(tmp_path):
    ramps = []
    for t_raw in (5, 9):
        tau = np.linspace(0.0, 1.0, t_raw)[:, None, None]
        ramps.append((np.array([[1.0, 0.0, 2.0]]) * tau).tolist())
    doc = {"version": 1, "time_steps": 7,
           "objects": [{"name": "a", "descriptor_ids": [0],
                        "demos": ramps}]}
    path = tmp_path / "ragged.json"
    path.write_text(json.dumps(doc))
    ds = load_demonstration_set(str(path))
    assert ds.time_steps == 7
    tau = np.linspace(0.0, 1.0, 7)[:, None]
    for n in range(2):
        assert_allclose(ds.objects[0].trajectory.data[n, :, 0],
                        np.array([1.0, 0.0, 2.0]) * tau, atol=1e-12)


def test_load_rejects_malformed_documents(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("not json")
    with pytest.raises(ParseError):
        load_demonstration_set(str(path))
    path.write_text(json.dumps([1, 2]))
    with pytest.raises(ParseError):
        load_demonstration_set(str(path))
    path.write_text(json.dumps({"version": 2, "time_steps": 1, "objects": []}))
    with pytest.raises(SchemaError):
        load_demonstration_set(str(path))
    doc = {"version": 1, "time_steps": 1,
           "objects": [{"name": "a", "descriptor_ids": [0],
                        "demos": [[[[0.0, 0.0, np.inf]]]]}]}
    path.write_text(json.dumps(doc))
    with pytest.raises(UnitError):
        load_demonstration_set(str(path))


def test_scene_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    objs = {"plate": ((0, 1, 2, 3), rng.normal(size=(4, 3))),
            "stick": ((10, 11), rng.normal(size=(2, 3)))}
    path = tmp_path / "scene.json"
    write_scene(objs, str(path))
    back = load_scene(str(path))
    assert set(back) == {"plate", "stick"}
    for name in objs:
        ids, pos = objs[name]
        bids, bpos = back[name]
        assert tuple(bids) == ids
        assert_allclose(bpos, pos, atol=0)


def test_load_scene_rejects_multistep(tmp_path):
    ds = _demo_set(np.random.default_rng(2))
    path = tmp_path / "multi.json"
    write_demonstration_set(ds, str(path))
    with pytest.raises(SchemaError):
        load_scene(str(path))


def test_canonical_shape_max_pairwise_distance():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(9, 3))
    traj = Trajectory(np.broadcast_to(pts, (2, 4, 9, 3)).copy())
    canon = compute_canonical_shape(ObjectRecord("a", tuple(range(9)), traj))
    brute = max(np.linalg.norm(pts[i] - pts[j])
                for i in range(9) for j in range(9))
    assert canon.spatial_scale == pytest.approx(brute, rel=1e-12)
    assert_allclose(canon.positions, pts, atol=0)


def test_canonical_shape_degenerate():
    traj = Trajectory(np.zeros((1, 2, 1, 3)))
    with pytest.raises(DegenerateObject):
        compute_canonical_shape(ObjectRecord("a", (0,), traj))
    traj = Trajectory(np.zeros((1, 2, 3, 3)))
    with pytest.raises(DegenerateObject):
        compute_canonical_shape(ObjectRecord("a", (0, 1, 2), traj))


def test_assign_roles_lowest_temporal_variance_is_master():
    rng = np.random.default_rng(4)
    static = np.broadcast_to(rng.normal(size=(5, 3)), (3, 10, 5, 3)).copy()
    static += rng.normal(scale=1e-3, size=static.shape)
    moving = rng.normal(size=(3, 10, 4, 3)).cumsum(axis=1)
    ds = DemonstrationSet(objects=(
        ObjectRecord("mov", tuple(range(4)), Trajectory(moving)),
        ObjectRecord("sta", tuple(range(10, 15)), Trajectory(static)),
    ))
    assert assign_roles(ds) == ["slave", "master"]
    with pytest.raises(ValueError):
        assign_roles(DemonstrationSet(objects=(ds.objects[0],)))


def test_frame_bank_nearest_neighbors():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(8, 3))
    traj = Trajectory(np.broadcast_to(pts, (1, 2, 8, 3)).copy())
    obj = ObjectRecord("m", tuple(range(50, 58)), traj)
    canon = compute_canonical_shape(obj)
    bank = build_frame_bank(obj, canon, 4)
    assert bank.frame_count == 8 and bank.neighborhood_size == 4
    for j in range(8):
        d = np.linalg.norm(pts - pts[j], axis=1)
        expect = np.argsort(d, kind="stable")[:4]
        assert list(bank.neighbor_indices[j]) == list(expect)
        assert bank.neighbor_ids[j, 0] == 50 + j  # own candidate first
        assert_allclose(bank.reference_positions[j], pts[expect], atol=0)
    with pytest.raises(InsufficientCandidates):
        build_frame_bank(obj, canon, 9)
    with pytest.raises(InsufficientCandidates):
        build_frame_bank(obj, canon, 2)


def test_detect_frames_recovers_planted_pose():
    rng = np.random.default_rng(6)
    pts = rng.normal(size=(10, 3))
    traj = Trajectory(np.broadcast_to(pts, (1, 1, 10, 3)).copy())
    obj = ObjectRecord("m", tuple(range(10)), traj)
    canon = compute_canonical_shape(obj)
    bank = build_frame_bank(obj, canon, 5)
    R = rotvec_to_matrix(rng.normal(size=3))
    t = rng.normal(size=3)
    moved = pts @ R.T + t
    frames = detect_frames(bank, {i: moved[i] for i in range(10)})
    for fr in frames:
        assert_allclose(fr.rotation, R, atol=1e-9)
        assert_allclose(fr.translation, t, atol=1e-9)
    with pytest.raises(MissingCorrespondence):
        detect_frames(bank, {i: moved[i] for i in range(9)})


def test_detect_frames_batch_matches_sequential():
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(12, 3))
    traj = Trajectory(np.broadcast_to(pts, (1, 1, 12, 3)).copy())
    obj = ObjectRecord("m", tuple(range(12)), traj)
    canon = compute_canonical_shape(obj)
    bank = build_frame_bank(obj, canon, 6)
    # Non-rigid batch: independent noisy observations stress the solver.
    obs = pts[None, None] + rng.normal(scale=0.05, size=(3, 4, 12, 3))
    R, t = detect_frames_batch(bank, obs)
    assert R.shape == (3, 4, 12, 3, 3) and t.shape == (3, 4, 12, 3)
    for n in range(3):
        for s in range(4):
            frames = detect_frames(bank, {i: obs[n, s, i] for i in range(12)})
            for j, fr in enumerate(frames):
                assert_allclose(R[n, s, j], fr.rotation, atol=1e-9)
                assert_allclose(t[n, s, j], fr.translation, atol=1e-9)
