"""Synthetic demonstration generator with analytic ground truth.

Builds multi-demo point-trajectory sets where a designated slave candidate
lands on a known geometric manifold (point, line, plane, circle, sphere) in
master-local coordinates, while the remaining candidates are kept
unclassifiable by construction: wide orientation cones and length scaling
spray them across all three directions, and start poses are spread far
enough that no early-time constraint can fire.

The generator also builds reproduction scenes: a fresh global rigid motion
of a demonstrated configuration, with the slave restarted from the
demonstrated start distribution so the learned primitives stay in range.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .demos import DemonstrationSet, ObjectRecord
from .errors import SpecIncompatible
from .geometry import Trajectory, rotvec_to_matrix

KINDS = ("p2p", "p2l", "p2P", "p2c", "p2S", "oneshot", "insert")

_MIN_DEMOS = {"p2p": 2, "p2l": 3, "p2P": 4, "p2c": 11, "p2S": 11,
              "insert": 3, "oneshot": 1}

# master plate: an irregular ring with height wobble, so every candidate
# has a distinct, well-conditioned rigid neighborhood
_RING_P = 14
_RING_RADIUS = 0.35
_STICK_LENGTH = 0.5


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Recipe for one synthetic demonstration set."""

    kind: str
    n_demos: int
    pose_variation: float = 0.4     # start spread and stick-direction cone [rad]
    shape_variation: float = 0.2    # half-range of per-demo length scaling
    noise: float = 0.0025           # observation noise sigma [m]
    seed: int = 0
    n_steps: int = 40

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecIncompatible(f"unknown kind {self.kind!r}")
        need = _MIN_DEMOS[self.kind]
        if self.kind == "oneshot":
            if self.n_demos != 1:
                raise SpecIncompatible("kind oneshot needs exactly one demo")
        elif self.n_demos < need:
            raise SpecIncompatible(
                f"kind {self.kind} needs at least {need} demos, "
                f"got {self.n_demos}")
        if self.n_steps < 8:
            raise SpecIncompatible("need at least 8 time steps")


@dataclass(frozen=True)
class GroundTruth:
    """What the generator actually planted, in master-local coordinates."""

    kind: str
    designated: tuple               # slave candidate indices carrying constraints
    kinds: tuple                    # constraint kind per designated candidate
    manifold: dict                  # analytic parameters (center, axis, radius...)
    frame_region: np.ndarray        # master candidates whose frames host the action
    slave_scale: float              # canonical slave spatial scale
    noise_sigma: float
    master_rotations: np.ndarray = field(repr=False)   # (N, 3, 3)
    master_translations: np.ndarray = field(repr=False)  # (N, 3)


def _min_jerk(start: np.ndarray, goal: np.ndarray, n: int) -> np.ndarray:
    tau = np.linspace(0.0, 1.0, n)
    s = 10 * tau ** 3 - 15 * tau ** 4 + 6 * tau ** 5
    return start[None, :] + s[:, None] * (goal - start)[None, :]


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _random_basis(rng: np.random.Generator) -> np.ndarray:
    """Random right-handed orthonormal basis, rows e1, e2, e3."""
    m = rotvec_to_matrix(rng.normal(size=3) * 2.0)
    return m.T


def _cone(rng: np.random.Generator, axis: np.ndarray, half_angle: float) -> np.ndarray:
    """Unit vector at most half_angle away from axis."""
    if half_angle <= 0:
        return axis.copy()
    a = _unit(axis)
    helper = np.array([1.0, 0.0, 0.0])
    if abs(a @ helper) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    e1 = _unit(np.cross(a, helper))
    e2 = np.cross(a, e1)
    ang = rng.uniform(0.0, half_angle)
    az = rng.uniform(0.0, 2 * np.pi)
    return _unit(np.cos(ang) * a
                 + np.sin(ang) * (np.cos(az) * e1 + np.sin(az) * e2))


def _stratified(rng: np.random.Generator, lo: float, hi: float, n: int) -> np.ndarray:
    """Evenly spaced samples with in-cell jitter; spread survives any seed."""
    base = np.linspace(lo, hi, n)
    cell = (hi - lo) / max(n - 1, 1)
    vals = base + rng.uniform(-0.25, 0.25, n) * cell
    return rng.permutation(vals)


def _master_points() -> np.ndarray:
    ang = np.linspace(0.0, 2 * np.pi, _RING_P, endpoint=False)
    pts = np.stack([_RING_RADIUS * np.cos(ang),
                    _RING_RADIUS * np.sin(ang),
                    0.05 * np.sin(3 * ang + 0.7)], axis=1)
    pts[::4, :2] *= 0.85        # break the rotational symmetry
    return pts


def _stick_points(kind: str) -> np.ndarray:
    """Slave candidate layout, unit length, tip at the origin.

    For the manifold kinds the off-tip candidates sit far from the tip so
    orientation scatter sprays them in all directions; keeps them clear of
    both the linear classifier and the surface prefilter.
    """
    if kind in ("p2c", "p2S"):
        return np.array([[0.0, 0.0, 0.0],
                         [0.80, 0.20, 0.0],
                         [0.90, 0.0, 0.20],
                         [1.0, 0.0, 0.0]])
    return np.array([[0.0, 0.0, 0.0],
                     [0.45, 0.10, 0.0],
                     [0.45, 0.0, 0.10],
                     [1.0, 0.0, 0.0]])


def _goal_set(spec: SyntheticTaskSpec, rng: np.random.Generator,
              anchor: np.ndarray, phi: float):
    """Final tip positions on the planted manifold, plus its parameters.

    The spreads are tuned against the variability thresholds: intentional
    directions land well above 0.1 of the slave scale, the circle's sagitta
    and the sphere patch's radial bulge sit between the two thresholds so
    neither a line nor a plane can claim them first.
    """
    n = spec.n_demos
    kind = spec.kind
    if kind in ("p2p", "oneshot", "insert"):
        goals = np.tile(anchor, (n, 1))
        axis = _unit(rng.normal(size=3))
        man = {"type": "point", "anchor": anchor}
        if kind == "insert":
            man = {"type": "point+line", "anchor": anchor, "direction": axis}
        return goals, man, axis
    if kind == "p2l":
        axis = _unit(rng.normal(size=3))
        u = _stratified(rng, -0.22 * phi, 0.22 * phi, n)
        goals = anchor[None, :] + u[:, None] * axis[None, :]
        return goals, {"type": "line", "anchor": anchor, "direction": axis}, axis
    if kind == "p2P":
        # ring layout: both in-plane directions spread for any demo count,
        # where independent coordinate draws can correlate and collapse
        basis = _random_basis(rng)
        e1, e2, normal = basis
        # rigid spin plus small per-point jitter keeps the angular gaps
        # bounded below, so neither in-plane direction can collapse
        ang = 2 * np.pi * (np.arange(n) + rng.uniform(0.0, 1.0)
                           + 0.15 * rng.uniform(-1.0, 1.0, n)) / n
        rad = rng.permutation(_stratified(rng, 0.14 * phi, 0.24 * phi, n))
        goals = (anchor[None, :] + (rad * np.cos(ang))[:, None] * e1
                 + (rad * np.sin(ang))[:, None] * e2)
        man = {"type": "plane", "anchor": anchor, "normal": normal,
               "basis": np.stack([e1, e2])}
        return goals, man, e1
    if kind == "p2c":
        # narrow, large arc: along-arc spread well past the intent
        # threshold while the sagitta stays in the unclassifiable band
        basis = _random_basis(rng)
        e1, e2, normal = basis
        r = 0.45 * phi
        alpha = np.deg2rad(50.0)
        theta = _stratified(rng, -alpha, alpha, n)
        center = anchor - r * e2
        goals = center[None, :] + r * (np.sin(theta)[:, None] * e1
                                       + np.cos(theta)[:, None] * e2)
        man = {"type": "circle", "center": center, "normal": normal,
               "radius": r}
        return goals, man, e1
    # p2S: polar cap, apex at the anchor; same banding as the arc with
    # the radial bulge playing the sagitta's role
    basis = _random_basis(rng)
    e1, e2, e3 = basis
    radius = 0.62 * phi
    beta = np.deg2rad(48.0)
    center = anchor - radius * e3
    psi = _stratified(rng, 0.12 * beta, beta, n)
    az = rng.permutation(
        (2 * np.pi * 0.618) * np.arange(n) + rng.uniform(0, 2 * np.pi))
    goals = center[None, :] + radius * (
        np.sin(psi)[:, None] * (np.cos(az)[:, None] * e1
                                + np.sin(az)[:, None] * e2)
        + np.cos(psi)[:, None] * e3)
    man = {"type": "sphere", "center": center, "radius": radius}
    return goals, man, e1


def generate_synthetic(spec: SyntheticTaskSpec):
    """Build a demonstration set and its ground truth.

    Returns (DemonstrationSet, GroundTruth). All trajectories are worldframe
    with i.i.d. observation noise on every sample of both objects; the
    master sits still within each demo but takes an arbitrary pose per demo.
    """
    rng = np.random.default_rng(spec.seed)
    n, T = spec.n_demos, spec.n_steps
    kind = spec.kind

    master_local = _master_points()
    stick = _stick_points(kind)

    # per-demo slave geometry: length scaling plus an orientation draw;
    # demo 0 defines the canonical shape, so the goal spreads are tuned
    # against its actual scale
    scales = 1.0 + _stratified(rng, -spec.shape_variation,
                               spec.shape_variation, n)
    body0 = stick * np.array([scales[0], 1.0, 1.0]) * _STICK_LENGTH
    pair = body0[:, None, :] - body0[None, :, :]
    phi = float(np.sqrt((pair ** 2).sum(axis=2)).max())

    anchor = np.array([0.05, -0.04, 0.12])
    goals, manifold, line_axis = _goal_set(spec, rng, anchor, phi)
    if kind in ("p2l", "insert"):
        base_dir = line_axis            # stick lies along the planted line
        cone = 0.0
    else:
        base_dir = _unit(np.array([0.55, 0.25, 0.79]))
        cone = max(spec.pose_variation, 0.7) if kind in ("p2c", "p2S") \
            else spec.pose_variation

    start_base = anchor + np.array([0.55, 0.45, 0.50]) * phi
    master_R = np.empty((n, 3, 3))
    master_t = np.empty((n, 3))
    master_world = np.empty((n, T, _RING_P, 3))
    slave_world = np.empty((n, T, len(stick), 3))

    for i in range(n):
        Rm = rotvec_to_matrix(rng.normal(size=3) * spec.pose_variation)
        tm = rng.uniform(-0.4, 0.4, 3)
        master_R[i], master_t[i] = Rm, tm

        d = _cone(rng, base_dir, cone)
        # rolls stay spread for any demo count so off-axis candidates
        # sweep a full ring instead of clumping
        roll = 2 * np.pi * (i + rng.uniform(0.0, 0.8)) / n
        R_body = _frame_about(d, roll)
        body = (stick * np.array([scales[i], 1.0, 1.0])
                * _STICK_LENGTH) @ R_body.T

        start = start_base + rng.uniform(-0.22, 0.22, 3) * phi
        tip_path = _min_jerk(start, goals[i], T)          # master-local
        slave_local = tip_path[:, None, :] + body[None, :, :]

        master_world[i] = (master_local @ Rm.T + tm)[None, :, :]
        slave_world[i] = slave_local @ Rm.T + tm

    master_world += rng.normal(size=master_world.shape) * spec.noise
    slave_world += rng.normal(size=slave_world.shape) * spec.noise

    demos = DemonstrationSet(
        objects=(
            ObjectRecord(name="plate",
                         descriptor_ids=tuple(range(_RING_P)),
                         trajectory=Trajectory(master_world)),
            ObjectRecord(name="stick",
                         descriptor_ids=tuple(100 + i for i in range(len(stick))),
                         trajectory=Trajectory(slave_world)),
        ),
    )

    if kind == "insert":
        designated, kinds = (0, 3), ("p2p", "p2l")
    elif kind == "oneshot":
        designated, kinds = (0,), ("p2p",)
    else:
        designated, kinds = (0,), (kind,)

    gt = GroundTruth(kind=kind, designated=designated, kinds=kinds,
                     manifold=manifold,
                     frame_region=np.arange(_RING_P),
                     slave_scale=phi, noise_sigma=spec.noise,
                     master_rotations=master_R, master_translations=master_t)
    return demos, gt


def _frame_about(direction: np.ndarray, roll: float) -> np.ndarray:
    """Rotation whose first column is the direction, rolled about it."""
    d = _unit(direction)
    helper = np.array([0.0, 0.0, 1.0])
    if abs(d @ helper) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    e2 = _unit(np.cross(helper, d))
    e3 = np.cross(d, e2)
    base = np.stack([d, e2, e3], axis=1)
    c, s = np.cos(roll), np.sin(roll)
    spin = np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    return base @ spin


def make_scene(demos: DemonstrationSet, rng: np.random.Generator,
               scale: float = 1.0, about: int = 0,
               jitter: float = 0.02):
    """One reproduction scene drawn from the demonstrated distribution.

    Takes a random demo's first observation, applies one fresh global rigid
    motion to both objects, then jitters the slave slightly on its own. The
    slave can be rescaled along its principal axis about candidate `about`
    to extrapolate beyond the demonstrated geometry.

    Returns {object name: (descriptor_ids, (P, 3) observed positions)},
    ready for scene binding or a scene file.
    """
    i = int(rng.integers(demos.demo_count))
    Rg = rotvec_to_matrix(rng.normal(size=3) * 0.6)
    tg = rng.uniform(-0.4, 0.4, 3)

    out = {}
    slave_name = demos.objects[-1].name
    for obj in demos.objects:
        pts = obj.trajectory.data[i, 0].copy()
        if obj.name == slave_name:
            if scale != 1.0:
                ref = pts[about]
                v = pts - ref
                centered = pts - pts.mean(axis=0)
                _, _, vt = np.linalg.svd(centered, full_matrices=False)
                axis = vt[0]
                pts = ref + v + (scale - 1.0) * (v @ axis)[:, None] * axis
            dR = rotvec_to_matrix(rng.normal(size=3) * jitter)
            ref = pts[about]
            pts = (pts - ref) @ dR.T + ref + rng.normal(size=3) * jitter
        out[obj.name] = (obj.descriptor_ids, pts @ Rg.T + tg)
    return out
