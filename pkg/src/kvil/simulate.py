"""Kinematic reproduction of a learned task in a novel scene.

The master is observed once (it does not move); its local frames place
each keypoint's constraint in the world. A free-floating rigid slave body
carries the keypoints. Every control step evaluates the keypoint targets
from the movement primitives under a shared canonical clock, assembles
attraction and density forces, and advances the two-layer admittance
chain. After the clock reaches zero the simulation keeps regulating for a
fixed end window, which is what the metrics are computed over.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from . import vmp as vmp_mod
from .constraints import P2L, P2P, P2PLANE, P2S
from .control import (BodyState, ControllerGains, admittance_step,
                      aggregate_wrench, attraction_force, density_force,
                      fit_density, priority_project, reconstruct_target)
from .demos import CanonicalShape, detect_frames
from .errors import NumericalBlowup, SchemaError
from .geometry import RigidTransform, align_rigid, matrix_to_rotvec
from .task import TaskRepresentation, constraint_manifold

END_WINDOW = 2.0
DEFAULT_DT = 1e-3


@dataclass(frozen=True)
class SceneInstance:
    """One reproduction scene: observed master, initial slave placement."""

    observation: dict               # descriptor id -> Vec3
    slave_pose: RigidTransform
    slave_canonical: CanonicalShape
    attachments: np.ndarray         # (L, 3) body-frame keypoint positions

    def __post_init__(self):
        object.__setattr__(
            self, "attachments",
            np.asarray(self.attachments, dtype=np.float64).reshape(-1, 3))


def scene_instance(task: TaskRepresentation, scene_objects: dict) -> SceneInstance:
    """Bind a loaded scene (name -> (descriptor_ids, positions)) to a task.

    The slave's initial pose is the least-squares rigid alignment of its
    canonical shape onto the observed candidates. Keypoints attach at the
    observed candidates' body-frame positions, so a categorical instance
    whose proportions differ from the canonical shape (a longer stick,
    say) still carries its keypoints exactly where they were observed.
    """
    if task.master not in scene_objects or task.slave not in scene_objects:
        raise SchemaError("scene is missing a task object")
    m_ids, m_pos = scene_objects[task.master]
    observation = {int(i): np.asarray(p, dtype=np.float64)
                   for i, p in zip(m_ids, m_pos)}
    s_ids, s_pos = scene_objects[task.slave]
    id_to_row = {int(i): r for r, i in enumerate(s_ids)}
    canon = task.canonical_slave
    order = [id_to_row[kp.descriptor_id] for kp in task.keypoints
             if kp.descriptor_id in id_to_row]
    if len(order) != len(task.keypoints):
        raise SchemaError("scene slave lacks a task keypoint descriptor")
    observed = np.asarray(s_pos, dtype=np.float64)
    if observed.shape[0] != canon.positions.shape[0]:
        raise SchemaError("scene slave candidate count mismatch")
    pose = align_rigid(canon.positions, observed)
    attachments = (observed[order] - pose.translation) @ pose.rotation
    return SceneInstance(observation=observation, slave_pose=pose,
                         slave_canonical=canon, attachments=attachments)


@dataclass
class SimLog:
    """Per-step reproduction record plus the end-window marker."""

    dt: float
    end_start: int                  # first index of the regulation window
    times: np.ndarray               # (S,)
    phases: np.ndarray              # (S,)
    keypoints: np.ndarray           # (S, L, 3) world
    targets: np.ndarray             # (S, L, 3) world
    goals: np.ndarray               # (S, L, 3) world
    body_p: np.ndarray              # (S, 3)
    body_rv: np.ndarray             # (S, 3)
    wrench: np.ndarray              # (S, 6)
    failed: bool = False

    @property
    def steps(self) -> int:
        return self.times.shape[0]


def write_simlog(log: SimLog, path: str) -> None:
    """Newline-delimited records: one header line, then one line per step."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {"record": "header", "dt": log.dt, "end_start": log.end_start,
                  "steps": int(log.steps),
                  "keypoint_count": int(log.keypoints.shape[1]),
                  "failed": log.failed}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i in range(log.steps):
            row = {
                "record": "step", "step": i,
                "t": log.times[i], "x": log.phases[i],
                "k": log.keypoints[i].tolist(),
                "k_star": log.targets[i].tolist(),
                "k_goal": log.goals[i].tolist(),
                "p": log.body_p[i].tolist(),
                "rv": log.body_rv[i].tolist(),
                "wrench": log.wrench[i].tolist(),
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_simlog(path: str) -> SimLog:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("record") != "header":
            raise SchemaError("simulation log lacks a header record")
        rows = [json.loads(line) for line in fh if line.strip()]
    if len(rows) != header["steps"]:
        raise SchemaError("simulation log step count mismatch")
    def col(name):
        return np.array([r[name] for r in rows], dtype=np.float64)
    return SimLog(
        dt=float(header["dt"]), end_start=int(header["end_start"]),
        times=col("t"), phases=col("x"), keypoints=col("k"),
        targets=col("k_star"), goals=col("k_goal"), body_p=col("p"),
        body_rv=col("rv"), wrench=col("wrench"),
        failed=bool(header["failed"]))


class _KeypointRuntime:
    """Per-keypoint precomputed quantities for one scene."""

    def __init__(self, kp, frame: RigidTransform, k0_world: np.ndarray):
        self.kp = kp
        self.R = frame.rotation
        self.t = frame.translation
        self.kind = kp.constraint.kind
        k0_local = self.R.T @ (k0_world - self.t)
        if self.kind == P2P:
            self.manifold = None
            self.density = None
            self.y0 = k0_local
            self.goal_local = kp.constraint.anchor
        else:
            self.manifold = constraint_manifold(kp.constraint)
            self.y0 = np.array([
                vmp_mod.project_orthogonal(self.manifold, k0_local[None])[0]])
            self.goal_local = None
            targets = kp.chart_targets
            self.density = fit_density(targets) if targets is not None \
                and targets.shape[0] >= 2 else None
        self.prev_target = None
        self.warm_u = None

    def local(self, k_world: np.ndarray) -> np.ndarray:
        return self.R.T @ (k_world - self.t)

    def world_point(self, p_local: np.ndarray) -> np.ndarray:
        return self.R @ p_local + self.t

    def target(self, k_world: np.ndarray, x: float):
        """World-space attractor and goal at phase x."""
        if self.kind == P2P:
            y = vmp_mod.rollout_at(self.kp.vmp, self.y0, self.goal_local,
                                   np.array([x]))[0]
            return self.world_point(y), self.world_point(self.goal_local)
        k_local = self.local(k_world)
        offset = vmp_mod.rollout_at(self.kp.vmp, self.y0, np.zeros(1),
                                    np.array([x]))[0, 0]
        warm = None if self.warm_u is None else np.atleast_2d(self.warm_u)
        tgt_local, foot_local, u = reconstruct_target(
            self.manifold, k_local, offset, warm=warm)
        self.warm_u = u
        return self.world_point(tgt_local), self.world_point(foot_local)

    def steering(self, k_world: np.ndarray, gains: ControllerGains):
        """World-space density force and, for plane-like kinds, the local
        constraint normal pushed to world coordinates."""
        if self.density is None:
            return np.zeros(3), None
        k_local = self.local(k_world)
        u = self.manifold.project_batch(
            k_local[None],
            warm=None if self.warm_u is None else np.atleast_2d(self.warm_u))[0]
        f_local = density_force(self.density, self.manifold, k_local,
                                gains.g1, gains.g2, u=u)
        normal = None
        if self.kind in (P2PLANE, P2S):
            jac = self.manifold.jacobian(np.atleast_1d(u))
            n = np.cross(jac[:, 0], jac[:, 1])
            norm = np.linalg.norm(n)
            normal = self.R @ (n / norm) if norm > 1e-12 else None
        return self.R @ f_local, normal


def _phase(i: int, dt: float, duration: float) -> float:
    return max(0.0, 1.0 - (i * dt) / duration)


def simulate_reproduction(task: TaskRepresentation, scene: SceneInstance,
                          gains: ControllerGains | None = None,
                          duration: float = 1.0, dt: float = DEFAULT_DT,
                          end_window: float = END_WINDOW,
                          use_priority: bool = True,
                          per_keypoint_gains=None,
                          force_general: bool = False) -> SimLog:
    """Run one reproduction and log every control step.

    The master frames are detected once (static master). Tasks whose
    keypoints are all p2p have state-independent target trajectories, so
    their integration loop runs on the accelerated kernel; everything else
    takes the general per-step path. per_keypoint_gains optionally holds
    one (kp, kd) pair per keypoint (one-shot schedule).
    """
    gains = gains or ControllerGains()
    frames = detect_frames(task.frame_bank, scene.observation)
    state = BodyState.at_rest(scene.slave_pose.translation,
                              scene.slave_pose.rotation)
    att = scene.attachments
    L = att.shape[0]
    k0_world = (state.R @ att.T).T + state.p
    runtimes = [
        _KeypointRuntime(kp, frames[kp.frame], k0_world[l])
        for l, kp in enumerate(task.keypoints)
    ]
    kp_gains = np.array(
        per_keypoint_gains if per_keypoint_gains is not None
        else [(gains.kp_bar, gains.kd_bar)] * L, dtype=np.float64)

    steps_main = int(round(duration / dt))
    steps_end = int(round(end_window / dt))
    total = steps_main + steps_end
    phases = np.array([_phase(i, dt, duration) for i in range(total + 1)])

    if not force_general and all(rt.kind == P2P for rt in runtimes):
        return _run_p2p_fast(task, scene, state, runtimes, kp_gains, gains,
                             phases, dt, steps_main)

    times = np.arange(total + 1) * dt
    S = total + 1
    log = SimLog(dt=dt, end_start=steps_main, times=times, phases=phases,
                 keypoints=np.zeros((S, L, 3)),
                 targets=np.zeros((S, L, 3)), goals=np.zeros((S, L, 3)),
                 body_p=np.zeros((S, 3)), body_rv=np.zeros((S, 3)),
                 wrench=np.zeros((S, 6)))

    p2p_idx = [l for l, rt in enumerate(runtimes) if rt.kind == P2P]
    try:
        for i in range(S):
            x = phases[i]
            k_world = (state.R @ att.T).T + state.p
            k_dot = state.v + np.cross(state.w, (state.R @ att.T).T)
            forces = np.zeros((L, 3))
            for l, rt in enumerate(runtimes):
                tgt, goal = rt.target(k_world[l], x)
                tgt_dot = np.zeros(3) if rt.prev_target is None \
                    else (tgt - rt.prev_target) / dt
                rt.prev_target = tgt
                f = attraction_force(k_world[l], k_dot[l], tgt, tgt_dot,
                                     kp_gains[l, 0], kp_gains[l, 1])
                if rt.kind != P2P and x > 0.0:
                    # steering acts only while the clock runs; the end
                    # window regulates the geometric constraints alone
                    f_sigma, normal = rt.steering(k_world[l], gains)
                    if use_priority:
                        for m in p2p_idx:
                            f_sigma = priority_project(
                                f_sigma, k_world[m], k_world[l], rt.kind,
                                plane_normal=normal)
                    f = f + f_sigma
                forces[l] = f
                log.targets[i, l] = tgt
                log.goals[i, l] = goal
            force, torque, _ = aggregate_wrench(k_world, forces)
            log.keypoints[i] = k_world
            log.body_p[i] = state.p
            log.body_rv[i] = matrix_to_rotvec(state.R)
            log.wrench[i, :3] = force
            log.wrench[i, 3:] = torque
            if i < S - 1:
                state = admittance_step(state, force, torque,
                                        state.p, state.R, gains, dt)
    except NumericalBlowup:
        log.failed = True
    return log


def _run_p2p_fast(task, scene, state, runtimes, kp_gains, gains,
                  phases, dt, steps_main) -> SimLog:
    """Precompute p2p target trajectories and integrate on the kernel."""
    att = scene.attachments
    L = att.shape[0]
    S = phases.shape[0]
    targets = np.zeros((S, L, 3))
    goals = np.zeros((S, L, 3))
    for l, rt in enumerate(runtimes):
        y = vmp_mod.rollout_at(rt.kp.vmp, rt.y0, rt.goal_local, phases)
        targets[:, l] = (rt.R @ y.T).T + rt.t
        goals[:, l] = rt.world_point(rt.goal_local)
    target_dot = np.zeros_like(targets)
    target_dot[1:] = (targets[1:] - targets[:-1]) / dt

    failed = False
    try:
        k_log, p_log, rv_log, wrench_log = _accel.kac_rollout_p2p(
            att, targets, target_dot, state.p, state.R,
            kp_gains[:, 0].copy(), kp_gains[:, 1].copy(),
            gains.kp_tilde, gains.kd_tilde, gains.km_tilde,
            gains.kp_track, gains.kd_track, dt)
    except NumericalBlowup:
        failed = True
        k_log = np.zeros((S, L, 3))
        p_log = np.zeros((S, 3))
        rv_log = np.zeros((S, 3))
        wrench_log = np.zeros((S, 6))

    return SimLog(dt=dt, end_start=steps_main,
                  times=np.arange(S) * dt, phases=phases,
                  keypoints=k_log, targets=targets, goals=goals,
                  body_p=p_log, body_rv=rv_log, wrench=wrench_log,
                  failed=failed)


# ---------------------------------------------------------------------------
# Metrics


@dataclass(frozen=True)
class Metrics:
    """Per-keypoint accuracy/precision and trial success statistics."""

    accuracy: np.ndarray        # (L,) mean end-window error per keypoint
    precision: np.ndarray       # (L,) RMS about each trial's window mean
    successes: np.ndarray       # (n_trials,) bool
    tolerance: float

    @property
    def success_rate(self) -> float:
        return float(self.successes.mean())

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy.tolist(),
            "precision": self.precision.tolist(),
            "successes": [bool(s) for s in self.successes],
            "success_rate": self.success_rate,
            "tolerance": self.tolerance,
        }


def evaluate(trials, task: TaskRepresentation,
             tolerance: float | None = None) -> Metrics:
    """Regulation metrics over one or more reproduction logs.

    Accuracy: mean over trials of the end-window mean distance between a
    keypoint and its goal. Precision (repeatability): RMS deviation of the
    end-window keypoint positions about their own trial's temporal mean,
    pooled over trials. Success: every keypoint's final goal distance
    within tolerance (default 2e-3 of the slave's spatial scale); failed
    logs never succeed.
    """
    logs = list(trials)
    if not logs:
        raise ValueError("need at least one trial")
    if tolerance is None:
        tolerance = 2e-3 * task.canonical_slave.spatial_scale
    L = logs[0].keypoints.shape[1]
    err = np.zeros((len(logs), L))
    jitter = np.zeros((len(logs), L))
    successes = np.zeros(len(logs), dtype=bool)
    for i, log in enumerate(logs):
        w = slice(log.end_start, log.steps)
        dist = np.linalg.norm(log.goals[w] - log.keypoints[w], axis=2)
        err[i] = dist.mean(axis=0)
        dev = log.keypoints[w] - log.keypoints[w].mean(axis=0, keepdims=True)
        jitter[i] = (dev ** 2).sum(axis=2).mean(axis=0)
        final = np.linalg.norm(log.goals[-1] - log.keypoints[-1], axis=1)
        successes[i] = (not log.failed) and bool((final <= tolerance).all())
    accuracy = err.mean(axis=0)
    precision = np.sqrt(jitter.mean(axis=0))
    return Metrics(accuracy=accuracy, precision=precision,
                   successes=successes, tolerance=float(tolerance))
