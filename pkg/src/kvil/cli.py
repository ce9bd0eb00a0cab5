"""Command line front end: synthesize, extract, reproduce, evaluate.

Four subcommands cover the full loop on file-based artifacts:

    kvil synth      demonstration sets with a planted constraint
    kvil extract    demonstrations -> sparse keypoint task model
    kvil reproduce  task + scene(s) -> per-trial control logs
    kvil eval       control logs -> accuracy/precision/success report

Outputs are deterministic for fixed inputs and seeds, byte for byte.
KVIL_THREADS caps the worker threads reproduction trials fan out over.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .constraints import Thresholds
from .demos import load_demonstration_set, load_scene, write_demonstration_set
from .errors import KvilError
from .extract import ExtractionConfig, extract_task
from .simulate import (evaluate, load_simlog, scene_instance,
                       simulate_reproduction, write_simlog)
from .synth import KINDS, SyntheticTaskSpec, generate_synthetic, make_scene
from .task import load_task, write_task


def _thread_cap() -> int:
    env = os.environ.get("KVIL_THREADS", "")
    if env.strip():
        cap = int(env)
        if cap < 1:
            raise KvilError(f"KVIL_THREADS must be positive, got {env!r}")
        return cap
    return os.cpu_count() or 1


def _cmd_synth(args) -> int:
    spec = SyntheticTaskSpec(kind=args.kind, n_demos=args.n_demos,
                             pose_variation=args.pose_variation,
                             shape_variation=args.shape_variation,
                             noise=args.noise, seed=args.seed,
                             n_steps=args.steps)
    demos, truth = generate_synthetic(spec)
    write_demonstration_set(demos, args.out)
    print(f"wrote {args.out}: {demos.demo_count} demos x {demos.time_steps} "
          f"steps, kinds {'+'.join(truth.kinds)} on slave candidates "
          f"{list(truth.designated)}")
    return 0


def _parse_lambda_grid(text: str):
    if text == "auto":
        return None
    try:
        grid = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise KvilError(f"bad --lambda-grid {text!r}: {exc}") from None
    if not grid:
        raise KvilError("--lambda-grid needs 'auto' or comma-separated values")
    return grid


def _cmd_extract(args) -> int:
    demos = load_demonstration_set(args.demos)
    grid = _parse_lambda_grid(args.lambda_grid)
    config = ExtractionConfig(
        thresholds=Thresholds(xi1=args.xi1, xi2=args.xi2),
        neighborhood=args.neighborhood, n_kernels=args.kernels,
        lambda_grid=grid, lambda_grid_surface=grid)
    task = extract_task(demos, config)
    write_task(task, args.out)
    print(f"wrote {args.out}: {len(task.keypoints)} keypoint(s)")
    print(f"{'descriptor':>10} {'candidate':>9} {'kind':>4} "
          f"{'frame':>5} {'time':>4} {'score':>9}")
    for kp in task.keypoints:
        print(f"{kp.descriptor_id:>10} {kp.candidate:>9} "
              f"{kp.constraint.kind:>4} {kp.frame:>5} {kp.time:>4} "
              f"{kp.score:>9.2e}")
    return 0


def _cmd_reproduce(args) -> int:
    if bool(args.scene) == bool(args.synth_scene):
        raise KvilError("give exactly one of --scene or --synth-scene")
    if args.synth_scene and not args.demos:
        raise KvilError("--synth-scene draws from the demonstrated start "
                        "distribution; give the source with --demos")
    task = load_task(args.task)
    if args.scene:
        fixed = load_scene(args.scene)
        scenes = [fixed] * args.trials
    else:
        demos = load_demonstration_set(args.demos)
        about = task.keypoints[0].candidate
        scenes = [make_scene(demos, np.random.default_rng([args.seed, i]),
                             scale=args.scene_scale, about=about)
                  for i in range(args.trials)]

    def run(i: int):
        bound = scene_instance(task, scenes[i])
        return simulate_reproduction(task, bound, duration=args.duration,
                                     use_priority=not args.no_priority)

    with ThreadPoolExecutor(max_workers=_thread_cap()) as pool:
        logs = list(pool.map(run, range(args.trials)))

    os.makedirs(args.out, exist_ok=True)
    for i, log in enumerate(logs):
        write_simlog(log, os.path.join(args.out, f"trial_{i:03d}.jsonl"))
    shutil.copyfile(args.task, os.path.join(args.out, "task.json"))
    meta = {"trials": args.trials, "seed": args.seed,
            "priority": not args.no_priority, "duration": args.duration,
            "scene": args.scene or "synthetic",
            "scene_scale": args.scene_scale}
    with open(os.path.join(args.out, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    failed = sum(log.failed for log in logs)
    print(f"wrote {args.trials} trial log(s) to {args.out}"
          + (f" ({failed} failed)" if failed else ""))
    return 0


def _cmd_eval(args) -> int:
    task_path = os.path.join(args.logs, "task.json")
    if not os.path.exists(task_path):
        raise KvilError(f"{args.logs} has no task.json; "
                        "point --logs at a reproduction output directory")
    task = load_task(task_path)
    names = sorted(n for n in os.listdir(args.logs)
                   if n.startswith("trial_") and n.endswith(".jsonl"))
    if not names:
        raise KvilError(f"no trial logs under {args.logs}")
    logs = [load_simlog(os.path.join(args.logs, n)) for n in names]
    tolerance = args.tolerance * task.canonical_slave.spatial_scale
    metrics = evaluate(logs, task, tolerance=tolerance)

    print(f"{len(logs)} trial(s), tolerance {tolerance:.3e} "
          f"({args.tolerance:g} of slave scale)")
    print(f"{'keypoint':>8} {'kind':>4} {'accuracy':>11} {'precision':>11}")
    for i, kp in enumerate(task.keypoints):
        print(f"{kp.descriptor_id:>8} {kp.constraint.kind:>4} "
              f"{metrics.accuracy[i]:>11.3e} {metrics.precision[i]:>11.3e}")
    print(f"success rate {metrics.success_rate:.2f} "
          f"({int(metrics.successes.sum())}/{len(logs)})")
    report = os.path.join(args.logs, "metrics.json")
    with open(report, "w", encoding="utf-8") as fh:
        json.dump(metrics.to_dict(), fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    print(f"wrote {report}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="kvil",
        description="keypoint constraint extraction and reproduction")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic demonstration set")
    s.add_argument("--kind", required=True, choices=KINDS)
    s.add_argument("--n-demos", type=int, required=True)
    s.add_argument("--pose-variation", type=float, default=0.4)
    s.add_argument("--shape-variation", type=float, default=0.2)
    s.add_argument("--noise", type=float, default=0.0025,
                   help="observation noise sigma in meters")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--steps", type=int, default=40)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_synth)

    e = sub.add_parser("extract", help="extract the keypoint task model")
    e.add_argument("--demos", required=True)
    e.add_argument("--xi1", type=float, default=0.02)
    e.add_argument("--xi2", type=float, default=0.10)
    e.add_argument("--lambda-grid", default="auto",
                   help="'auto' or comma-separated smoothing values")
    e.add_argument("--neighborhood", type=int, default=50)
    e.add_argument("--kernels", type=int, default=20)
    e.add_argument("--out", required=True)
    e.set_defaults(func=_cmd_extract)

    r = sub.add_parser("reproduce", help="run reproduction trials")
    r.add_argument("--task", required=True)
    r.add_argument("--scene", help="scene file (one demo, one step)")
    r.add_argument("--synth-scene", action="store_true",
                   help="draw scenes from the demonstrated distribution")
    r.add_argument("--demos", help="demonstration file for --synth-scene")
    r.add_argument("--scene-scale", type=float, default=1.0,
                   help="slave rescale along its principal axis")
    r.add_argument("--trials", type=int, default=1)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--duration", type=float, default=1.0)
    r.add_argument("--no-priority", action="store_true",
                   help="aggregate constraint wrenches without shielding")
    r.add_argument("--out", required=True)
    r.set_defaults(func=_cmd_reproduce)

    v = sub.add_parser("eval", help="score reproduction logs")
    v.add_argument("--logs", required=True)
    v.add_argument("--tolerance", type=float, default=2e-3,
                   help="success bound as a fraction of the slave scale")
    v.set_defaults(func=_cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KvilError as exc:
        print(f"kvil: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
