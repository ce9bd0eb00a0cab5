"""Demonstration ingestion: file IO, canonical shapes, roles, local frames.

The demonstration file is a single UTF-8 JSON document:

    { "version": 1, "time_steps": T,
      "objects": [ { "name": str, "descriptor_ids": [int; P],
                     "demos": [ [ [ [x,y,z]; P ]; T_raw ]; N ] } ] }

Units are meters. T_raw may vary per demo before resampling; within one demo
every object must share the same T_raw. A scene file for reproduction uses
the same structure with a single demo and a single time step.

Loading is faithful by default (no resampling or smoothing when the stored
demos already share the file's time_steps), so write -> read -> write is
byte-stable. The extraction pipeline passes explicit time_steps and
smooth_window instead.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateGeometry,
    DegenerateObject,
    InsufficientCandidates,
    MissingCorrespondence,
    ParseError,
    SchemaError,
    UnitError,
)
from .geometry import RigidTransform, Trajectory, align_rigid, resample_normalize, smooth


@dataclass(frozen=True)
class ObjectRecord:
    """One object's corresponded candidate trajectories across all demos."""

    name: str
    descriptor_ids: tuple
    trajectory: Trajectory

    def __post_init__(self):
        ids = tuple(int(i) for i in self.descriptor_ids)
        if len(set(ids)) != len(ids):
            raise SchemaError(f"duplicate descriptor IDs on object {self.name!r}")
        if len(ids) != self.trajectory.n_candidates:
            raise SchemaError(
                f"object {self.name!r}: {len(ids)} descriptor IDs for "
                f"{self.trajectory.n_candidates} candidates"
            )
        object.__setattr__(self, "descriptor_ids", ids)

    @property
    def candidate_count(self) -> int:
        return self.trajectory.n_candidates


@dataclass(frozen=True)
class DemonstrationSet:
    objects: tuple
    demo_count: int = field(init=False)
    time_steps: int = field(init=False)

    def __post_init__(self):
        objs = tuple(self.objects)
        if not objs:
            raise SchemaError("demonstration set has no objects")
        n = objs[0].trajectory.n_demos
        t = objs[0].trajectory.n_steps
        for o in objs:
            if o.trajectory.n_demos != n or o.trajectory.n_steps != t:
                raise SchemaError("objects disagree on demo count or time steps")
        names = [o.name for o in objs]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate object names")
        object.__setattr__(self, "objects", objs)
        object.__setattr__(self, "demo_count", n)
        object.__setattr__(self, "time_steps", t)

    def object_named(self, name: str) -> ObjectRecord:
        for o in self.objects:
            if o.name == name:
                return o
        raise KeyError(name)


@dataclass(frozen=True)
class CanonicalShape:
    """Candidate positions at the first time step of the first demo."""

    positions: np.ndarray
    spatial_scale: float


@dataclass(frozen=True)
class FrameBank:
    """Per master candidate j: its Q nearest canonical neighbors.

    reference_positions are expressed in the canonical frame, so the detected
    frame of candidate j is the rigid transform mapping references onto the
    observed neighbor positions.
    """

    neighbor_ids: np.ndarray        # (J, Q) descriptor IDs
    neighbor_indices: np.ndarray    # (J, Q) candidate indices into the master
    reference_positions: np.ndarray  # (J, Q, 3)

    @property
    def frame_count(self) -> int:
        return self.neighbor_ids.shape[0]

    @property
    def neighborhood_size(self) -> int:
        return self.neighbor_ids.shape[1]


# ---------------------------------------------------------------------------
# File IO


def _parse_document(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("top level must be a JSON object")
    for key in ("version", "time_steps", "objects"):
        if key not in doc:
            raise ParseError(f"missing top-level key {key!r}")
    return doc


def load_demonstration_set(
    path: str,
    time_steps: int | None = None,
    smooth_window: int = 1,
) -> DemonstrationSet:
    """Load and validate a demonstration file.

    When time_steps is given (or demos are ragged), every demo is linearly
    resampled onto that many uniform phase values; smooth_window > 1 then
    applies a centered moving average. The defaults leave stored samples
    untouched.
    """
    doc = _parse_document(path)
    if doc["version"] != 1:
        raise SchemaError(f"unsupported version {doc['version']!r}")
    if not isinstance(doc["objects"], list) or not doc["objects"]:
        raise SchemaError("objects must be a non-empty list")
    file_T = doc["time_steps"]
    if not isinstance(file_T, int) or file_T < 1:
        raise SchemaError("time_steps must be a positive integer")

    raw_objects = []
    n_demos = None
    for entry in doc["objects"]:
        if not isinstance(entry, dict):
            raise SchemaError("each object must be a JSON object")
        for key in ("name", "descriptor_ids", "demos"):
            if key not in entry:
                raise SchemaError(f"object missing key {key!r}")
        ids = entry["descriptor_ids"]
        demos = entry["demos"]
        if not isinstance(demos, list) or not demos:
            raise SchemaError("demos must be a non-empty list")
        if n_demos is None:
            n_demos = len(demos)
        elif len(demos) != n_demos:
            raise SchemaError("objects disagree on demo count")
        P = len(ids)
        if P < 1:
            raise SchemaError("object has no candidates")
        parsed = []
        for demo in demos:
            arr = np.asarray(demo, dtype=np.float64)
            if arr.ndim != 3 or arr.shape[1] != P or arr.shape[2] != 3:
                raise SchemaError(
                    f"demo array must be (T_raw, {P}, 3), got {arr.shape}"
                )
            if not np.isfinite(arr).all():
                raise UnitError("non-finite coordinates in demonstration")
            parsed.append(arr)
        raw_objects.append((str(entry["name"]), ids, parsed))

    # Within each demo, all objects must share the same raw length.
    for n in range(n_demos):
        lengths = {obj[2][n].shape[0] for obj in raw_objects}
        if len(lengths) != 1:
            raise SchemaError(f"objects disagree on time steps in demo {n}")

    lengths = {obj[2][n].shape[0] for obj in raw_objects for n in range(n_demos)}
    target = time_steps
    if target is None and lengths != {file_T}:
        target = file_T

    records = []
    for name, ids, parsed in raw_objects:
        if target is None:
            traj = Trajectory(np.stack(parsed, axis=0))
        else:
            traj = resample_normalize(parsed, target)
        if smooth_window > 1:
            traj = smooth(traj, smooth_window)
        records.append(ObjectRecord(name=name, descriptor_ids=ids, trajectory=traj))
    return DemonstrationSet(objects=tuple(records))


def write_demonstration_set(demos: DemonstrationSet, path: str) -> None:
    doc = {
        "version": 1,
        "time_steps": demos.time_steps,
        "objects": [
            {
                "name": obj.name,
                "descriptor_ids": list(obj.descriptor_ids),
                "demos": obj.trajectory.data.tolist(),
            }
            for obj in demos.objects
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"))
        fh.write("\n")


def load_scene(path: str) -> dict:
    """Load a scene file: mapping object name -> (descriptor_ids, positions)."""
    ds = load_demonstration_set(path)
    if ds.demo_count != 1 or ds.time_steps != 1:
        raise SchemaError("scene file must contain exactly one demo and one time step")
    return {
        obj.name: (obj.descriptor_ids, obj.trajectory.data[0, 0])
        for obj in ds.objects
    }


def write_scene(objects: dict, path: str) -> None:
    """Write a scene file from mapping name -> (descriptor_ids, (P, 3) positions)."""
    doc = {
        "version": 1,
        "time_steps": 1,
        "objects": [
            {
                "name": name,
                "descriptor_ids": [int(i) for i in ids],
                "demos": [[np.asarray(pos, dtype=np.float64).tolist()]],
            }
            for name, (ids, pos) in objects.items()
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"))
        fh.write("\n")


# ---------------------------------------------------------------------------
# Preprocessing


def compute_canonical_shape(obj: ObjectRecord) -> CanonicalShape:
    """Canonical shape: positions at demo 0 / time 0; scale = max pair distance."""
    if obj.candidate_count < 2:
        raise DegenerateObject("need at least 2 candidates for a spatial scale")
    pos = obj.trajectory.data[0, 0].copy()
    diff = pos[:, None, :] - pos[None, :, :]
    phi = float(np.sqrt((diff ** 2).sum(axis=2)).max())
    if phi <= 0.0:
        raise DegenerateObject("all candidates coincide; spatial scale is zero")
    return CanonicalShape(positions=pos, spatial_scale=phi)


def assign_roles(demos: DemonstrationSet) -> list:
    """Label each object master or slave.

    The master is the object with the lowest temporal variance of its
    candidate trajectories (mean over candidates, coordinates, and demos);
    ties break toward the lowest object index.
    """
    if len(demos.objects) < 2:
        raise ValueError("need at least 2 objects to assign roles")
    variances = []
    for obj in demos.objects:
        per_series = obj.trajectory.data.var(axis=1)  # (N, H, 3)
        variances.append(float(per_series.mean()))
    master = int(np.argmin(variances))
    return ["master" if i == master else "slave" for i in range(len(demos.objects))]


def build_frame_bank(master: ObjectRecord, canonical: CanonicalShape, Q: int) -> FrameBank:
    """Per master candidate, record its Q nearest canonical neighbors."""
    P = master.candidate_count
    if Q > P:
        raise InsufficientCandidates(f"Q={Q} exceeds candidate count {P}")
    if Q < 3:
        raise InsufficientCandidates("frame neighborhoods need Q >= 3")
    pos = canonical.positions
    d2 = ((pos[:, None, :] - pos[None, :, :]) ** 2).sum(axis=2)
    # Stable sort keeps ties in candidate-index order for determinism.
    order = np.argsort(d2, axis=1, kind="stable")[:, :Q]
    ids = np.asarray(master.descriptor_ids, dtype=np.int64)[order]
    refs = pos[order]
    return FrameBank(neighbor_ids=ids, neighbor_indices=order, reference_positions=refs)


def detect_frames(bank: FrameBank, observed: dict) -> list:
    """Detect every local frame from one observation (descriptor ID -> point).

    Frame j is the rigid transform aligning the bank's reference positions
    onto the observed neighbor positions.
    """
    frames = []
    for j in range(bank.frame_count):
        try:
            obs = np.array([observed[int(i)] for i in bank.neighbor_ids[j]], dtype=np.float64)
        except KeyError as exc:
            raise MissingCorrespondence(f"frame {j}: missing descriptor {exc}") from exc
        frames.append(align_rigid(bank.reference_positions[j], obs))
    return frames


def detect_frames_batch(bank: FrameBank, observations: np.ndarray):
    """Vectorized frame detection for a batch of master observations.

    observations: (..., P, 3) master candidate positions in bank candidate
    order. Returns rotations (..., J, 3, 3) and translations (..., J, 3).
    """
    obs = np.asarray(observations, dtype=np.float64)
    refs = bank.reference_positions                     # (J, Q, 3)
    ref_spread = np.linalg.svd(refs - refs.mean(axis=1, keepdims=True), compute_uv=False)
    if (ref_spread[:, 0] < 1e-12).any() or (
        ref_spread[:, 1] < 1e-9 * ref_spread[:, 0]
    ).any():
        raise DegenerateGeometry("a frame neighborhood is collinear or coincident")

    gathered = obs[..., bank.neighbor_indices, :]       # (..., J, Q, 3)
    ref_c = refs - refs.mean(axis=1, keepdims=True)
    obs_mean = gathered.mean(axis=-2, keepdims=True)
    obs_c = gathered - obs_mean
    H = np.einsum("jqa,...jqb->...jab", ref_c, obs_c)
    U, _, Vt = np.linalg.svd(H)
    det = np.linalg.det(U) * np.linalg.det(Vt)
    D = np.zeros(H.shape[:-2] + (3, 3))
    D[..., 0, 0] = 1.0
    D[..., 1, 1] = 1.0
    D[..., 2, 2] = np.sign(det) + (det == 0)
    R = np.einsum("...ba,...bc,...dc->...ad", Vt, D, U)
    t = obs_mean[..., 0, :] - np.einsum("...jab,jb->...ja", R, refs.mean(axis=1))
    return R, t
