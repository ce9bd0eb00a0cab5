"""Task representation: the sparse learned model written to disk.

One file captures everything reproduction needs in a new scene: object
roles, canonical shapes, the master's local-frame bank, and one entry per
keypoint holding its descriptor, constraint, owning frame, subgoal time,
and movement-primitive weights. Format is versioned JSON ("kvil-task/1")
written with sorted keys so identical models serialize byte-identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import vmp as vmp_mod
from .constraints import P2P, FrameLocalTensor, LinearConstraint, Selection
from .demos import CanonicalShape, FrameBank
from .errors import SchemaError
from .manifolds import LinearManifold, NonlinearConstraint, PrincipalManifold

FORMAT_VERSION = "kvil-task/1"


@dataclass(frozen=True)
class Keypoint:
    """One learned subgoal: a constrained slave candidate in one frame.

    chart_targets holds the demonstrated subgoal positions in the
    constraint's chart coordinates (N, d); the reproduction controller
    builds its density model from them. Point constraints have none.
    """

    descriptor_id: int
    candidate: int
    frame: int
    time: int
    constraint: object            # LinearConstraint | NonlinearConstraint
    vmp: vmp_mod.VMPModel
    score: float
    chart_targets: np.ndarray | None = None

    def __post_init__(self):
        if self.constraint.frame_id != self.frame:
            raise ValueError("constraint frame disagrees with keypoint frame")
        if self.constraint.keypoint_id != self.candidate:
            raise ValueError("constraint candidate disagrees with keypoint")
        if self.chart_targets is not None:
            ct = np.asarray(self.chart_targets, dtype=np.float64)
            object.__setattr__(self, "chart_targets",
                               ct.reshape(ct.shape[0], -1))


@dataclass(frozen=True)
class TaskRepresentation:
    master: str
    slave: str
    canonical_master: CanonicalShape
    canonical_slave: CanonicalShape
    frame_bank: FrameBank
    duration: int                 # demo time steps
    keypoints: tuple

    def __post_init__(self):
        kps = tuple(self.keypoints)
        if not kps:
            raise ValueError("a task needs at least one keypoint")
        times = [kp.time for kp in kps]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("keypoints must be ordered by non-decreasing time")
        object.__setattr__(self, "keypoints", kps)


def constraint_manifold(constraint):
    """Uniform manifold view of a constraint for projection work.

    p2p has no free directions and no manifold; callers handle it as a
    plain target point.
    """
    if isinstance(constraint, NonlinearConstraint):
        return constraint.manifold
    if constraint.kind == P2P:
        raise ValueError("a point constraint has no manifold")
    return LinearManifold(constraint.anchor, constraint.basis)


def keypoint_training_profile(kp_constraint, local_traj: np.ndarray) -> np.ndarray:
    """Per-demo VMP training signal for one keypoint.

    p2p trains on the full 3D frame-local trajectory; every other kind
    trains on the scalar orthogonal offset from the constraint manifold.
    local_traj: (N, T, 3) -> (N, T, 3) or (N, T, 1).
    """
    if kp_constraint.kind == P2P:
        return local_traj
    manifold = constraint_manifold(kp_constraint)
    n, t_steps, _ = local_traj.shape
    prof = np.empty((n, t_steps, 1))
    for m in range(n):
        prof[m, :, 0] = vmp_mod.project_orthogonal(manifold, local_traj[m])
    return prof


def assemble_task(selections, constraints, tensor: FrameLocalTensor,
                  bank: FrameBank, master: str, slave: str,
                  canonical_master: CanonicalShape,
                  canonical_slave: CanonicalShape,
                  descriptor_ids, n_kernels: int = vmp_mod.DEFAULT_KERNELS
                  ) -> TaskRepresentation:
    """Build the final model from sparse selections and their constraints.

    selections and constraints run in parallel; each keypoint's movement
    primitive is trained on the frame-local trajectory up to its subgoal
    time (kernel count shrinks for early subgoals so T >= N_k holds).
    """
    sels = list(selections)
    cons = list(constraints)
    if len(sels) != len(cons):
        raise ValueError("selections and constraints must pair up")
    vals = tensor.values
    keypoints = []
    for sel, con in sorted(zip(sels, cons), key=lambda p: (p[0].time, p[0].candidate)):
        local = vals[sel.frame, sel.candidate, : sel.time + 1]   # (t+1, N, 3)
        local = np.swapaxes(local, 0, 1)                         # (N, t+1, 3)
        profile = keypoint_training_profile(con, local)
        n_k = max(2, min(n_kernels, profile.shape[1]))
        model = vmp_mod.fit_vmp(profile, n_kernels=n_k)
        chart = None
        if con.kind != P2P and local.shape[0] >= 2:
            manifold = constraint_manifold(con)
            chart = manifold.project_batch(local[:, -1])         # (N, d)
        keypoints.append(Keypoint(
            descriptor_id=int(descriptor_ids[sel.candidate]),
            candidate=sel.candidate,
            frame=sel.frame,
            time=sel.time,
            constraint=con,
            vmp=model,
            score=sel.score,
            chart_targets=chart,
        ))
    return TaskRepresentation(
        master=master, slave=slave,
        canonical_master=canonical_master, canonical_slave=canonical_slave,
        frame_bank=bank, duration=int(tensor.values.shape[2]),
        keypoints=tuple(keypoints),
    )


# ---------------------------------------------------------------------------
# Serialization


def _constraint_to_dict(con) -> dict:
    if isinstance(con, NonlinearConstraint):
        return {
            "kind": con.kind,
            "manifold": con.manifold.to_dict(),
            "frame_id": con.frame_id,
            "time": con.time,
            "keypoint_id": con.keypoint_id,
        }
    return {
        "kind": con.kind,
        "anchor": con.anchor.tolist(),
        "basis": con.basis.tolist(),
        "frame_id": con.frame_id,
        "time": con.time,
        "keypoint_id": con.keypoint_id,
    }


def _constraint_from_dict(doc: dict):
    if "manifold" in doc:
        return NonlinearConstraint(
            kind=doc["kind"],
            manifold=PrincipalManifold.from_dict(doc["manifold"]),
            frame_id=int(doc["frame_id"]),
            time=int(doc["time"]),
            keypoint_id=int(doc["keypoint_id"]),
        )
    return LinearConstraint(
        kind=doc["kind"],
        anchor=np.asarray(doc["anchor"], dtype=np.float64),
        basis=np.asarray(doc["basis"], dtype=np.float64).reshape(-1, 3),
        frame_id=int(doc["frame_id"]),
        time=int(doc["time"]),
        keypoint_id=int(doc["keypoint_id"]),
    )


def task_to_dict(task: TaskRepresentation) -> dict:
    return {
        "version": FORMAT_VERSION,
        "roles": {"master": task.master, "slave": task.slave},
        "canonical": {
            "master": {
                "positions": task.canonical_master.positions.tolist(),
                "spatial_scale": task.canonical_master.spatial_scale,
            },
            "slave": {
                "positions": task.canonical_slave.positions.tolist(),
                "spatial_scale": task.canonical_slave.spatial_scale,
            },
        },
        "frame_bank": {
            "neighbor_ids": task.frame_bank.neighbor_ids.tolist(),
            "neighbor_indices": task.frame_bank.neighbor_indices.tolist(),
            "reference_positions": task.frame_bank.reference_positions.tolist(),
        },
        "duration": task.duration,
        "keypoints": [
            {
                "descriptor_id": kp.descriptor_id,
                "candidate": kp.candidate,
                "frame": kp.frame,
                "time": kp.time,
                "constraint": _constraint_to_dict(kp.constraint),
                "vmp": kp.vmp.to_dict(),
                "score": kp.score,
                "chart_targets": None if kp.chart_targets is None
                else kp.chart_targets.tolist(),
            }
            for kp in task.keypoints
        ],
    }


def task_from_dict(doc: dict) -> TaskRepresentation:
    if doc.get("version") != FORMAT_VERSION:
        raise SchemaError(f"unsupported task format: {doc.get('version')!r}")
    can = doc["canonical"]
    keypoints = tuple(
        Keypoint(
            descriptor_id=int(k["descriptor_id"]),
            candidate=int(k["candidate"]),
            frame=int(k["frame"]),
            time=int(k["time"]),
            constraint=_constraint_from_dict(k["constraint"]),
            vmp=vmp_mod.VMPModel.from_dict(k["vmp"]),
            score=float(k["score"]),
            chart_targets=None if k.get("chart_targets") is None
            else np.asarray(k["chart_targets"], dtype=np.float64),
        )
        for k in doc["keypoints"]
    )
    return TaskRepresentation(
        master=doc["roles"]["master"],
        slave=doc["roles"]["slave"],
        canonical_master=CanonicalShape(
            positions=np.asarray(can["master"]["positions"], dtype=np.float64),
            spatial_scale=float(can["master"]["spatial_scale"]),
        ),
        canonical_slave=CanonicalShape(
            positions=np.asarray(can["slave"]["positions"], dtype=np.float64),
            spatial_scale=float(can["slave"]["spatial_scale"]),
        ),
        frame_bank=FrameBank(
            neighbor_ids=np.asarray(doc["frame_bank"]["neighbor_ids"], dtype=np.int64),
            neighbor_indices=np.asarray(doc["frame_bank"]["neighbor_indices"], dtype=np.int64),
            reference_positions=np.asarray(
                doc["frame_bank"]["reference_positions"], dtype=np.float64
            ),
        ),
        duration=int(doc["duration"]),
        keypoints=keypoints,
    )


def write_task(task: TaskRepresentation, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(task_to_dict(task), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_task(path: str) -> TaskRepresentation:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"task file is not valid JSON: {exc}") from exc
    return task_from_dict(doc)
