"""End-to-end constraint extraction from a demonstration set.

Wires the stages together: role assignment, canonical shapes, frame bank,
frame-local expression, the dense linear variability sweep (or the one-shot
distance path for a single demo), the nonlinear principal-manifold pass,
hierarchical sparsification, and task assembly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .constraints import (P2P, FrameLocalTensor, Selection, Thresholds,
                          build_linear_constraint, classify_linear,
                          express_in_frames, infer_dimension,
                          one_shot_extract, pca_variability, scan_linear)
from .clustering import sparsify
from .demos import (DemonstrationSet, assign_roles, build_frame_bank,
                    compute_canonical_shape, detect_frames_batch)
from .errors import SpecIncompatible
from .manifolds import (NonlinearConstraint, classify_nonlinear, fit_pme,
                        nonlinear_variability)
from .task import TaskRepresentation, assemble_task

NONLINEAR_MIN_DEMOS = 11


def _representative_frames(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Indices of one frame per duplicate group.

    Dense point neighborhoods often share their neighbor set, which makes
    whole blocks of frames rigidly identical in every demo and step;
    scanning one member of each block is enough.
    """
    J = R.shape[2]
    key = np.concatenate([R.transpose(2, 0, 1, 3, 4).reshape(J, -1),
                          t.transpose(2, 0, 1, 3).reshape(J, -1)], axis=1)
    _, first = np.unique(np.round(key, 9), axis=0, return_index=True)
    return np.sort(first)


@dataclass(frozen=True)
class ExtractionConfig:
    """Tunables for one extraction run."""

    thresholds: Thresholds = Thresholds()
    neighborhood: int = 50          # frame bank size Q, clamped to P
    n_kernels: int = 20
    time_stride: int = 1
    lambda_grid: list | None = None     # None: scale-derived default
    lambda_grid_surface: list | None = None


def _nonlinear_scan(tensor: FrameLocalTensor, phi: float, th: Thresholds,
                    config: ExtractionConfig):
    """Principal-manifold selections at the final time step.

    Runs only where the linear classifier failed, with cheap PCA prefilters
    deciding which manifold dimension is worth a fit: a curve needs the
    third variability component already invariant, a surface merely needs
    it unintentional.
    """
    vals = tensor.values
    J, K, T, N, _ = vals.shape
    if N <= 10:
        return [], {}
    t = T - 1
    surface_grid = config.lambda_grid_surface
    if surface_grid is None:
        # surfaces cost an order more per lambda; a slightly coarser grid
        # loses little because GCV's optimum is flat over decades
        surface_grid = [10.0 ** e * phi * phi for e in range(-3, 2)]
    selections, fits = [], {}
    for j in range(J):
        for k in range(K):
            pts = vals[j, k, t]
            eta = pca_variability(pts, phi, frame=j, candidate=k, time=t).eta
            if classify_linear(eta, th, N) is not None:
                continue
            attempts = []
            if eta[2] < th.xi1:
                attempts.append((1, config.lambda_grid))
            if eta[2] < th.xi2:
                attempts.append((2, surface_grid))
            kind = None
            for d, grid in attempts:
                manifold = fit_pme(pts, d=d, lambda_grid=grid)
                var = nonlinear_variability(manifold, pts, phi)
                kind = classify_nonlinear(var, th, d)
                if kind is not None:
                    break
            if kind is None:
                continue
            selections.append(Selection(candidate=k, frame=j, time=t,
                                        kind=kind, score=var.eta_perp))
            fits[(j, k, t)] = NonlinearConstraint(
                kind=kind, manifold=manifold, frame_id=j, time=t,
                keypoint_id=k)
    return selections, fits


def extract_task(demos: DemonstrationSet,
                 config: ExtractionConfig | None = None) -> TaskRepresentation:
    """Extract the sparse keypoint task model from demonstrations.

    One master (least temporal variance) hosts the frames; the first slave
    carries the keypoints. A single demo takes the one-shot distance path
    (always point constraints); several demos take the variability path,
    with principal manifolds attempted once demos are plentiful.
    """
    config = config or ExtractionConfig()
    roles = assign_roles(demos)
    master = demos.objects[roles.index("master")]
    slave = demos.objects[roles.index("slave")]

    canon_m = compute_canonical_shape(master)
    canon_s = compute_canonical_shape(slave)
    Q = min(config.neighborhood, master.candidate_count)
    bank = build_frame_bank(master, canon_m, Q=Q)
    R, tr = detect_frames_batch(bank, master.trajectory.data)
    tensor = express_in_frames(slave.trajectory, R, tr)

    # classify once per group of rigidly identical frames
    fmap = _representative_frames(R, tr)
    scan_tensor = FrameLocalTensor(tensor.values[fmap])

    N = demos.demo_count
    T = tensor.values.shape[2]
    th = config.thresholds
    if N == 1:
        keypoint_ids, constraints = one_shot_extract(scan_tensor)
        frame = constraints[0].frame_id
        dists = np.linalg.norm(scan_tensor.values[frame, :, T - 1, 0], axis=1)
        constraints = [replace(c, frame_id=int(fmap[c.frame_id]))
                       for c in constraints]
        reps = [Selection(candidate=k, frame=int(fmap[frame]), time=T - 1,
                          kind=P2P, score=float(dists[k]))
                for k in keypoint_ids]
    else:
        max_components = 3 if infer_dimension(scan_tensor.values) == 3 else 2
        selections = scan_linear(scan_tensor, canon_s.spatial_scale, th,
                                 max_components=max_components,
                                 time_stride=config.time_stride)
        nl_selections, nl_fits = _nonlinear_scan(
            scan_tensor, canon_s.spatial_scale, th, config)
        selections = [replace(s, frame=int(fmap[s.frame]))
                      for s in selections + nl_selections]
        nl_fits = {(int(fmap[j]), k, t): replace(c, frame_id=int(fmap[j]))
                   for (j, k, t), c in nl_fits.items()}
        if not selections:
            raise SpecIncompatible(
                "no constraint passed the variability thresholds; "
                "more demos or wider pose variation needed")
        reps = sparsify(selections, total_steps=T, canonical=canon_s,
                        tensor=tensor)
        constraints = []
        for rep in reps:
            key = (rep.frame, rep.candidate, rep.time)
            if rep.kind in ("p2c", "p2S"):
                constraints.append(nl_fits[key])
            else:
                pts = tensor.values[rep.frame, rep.candidate, rep.time]
                constraints.append(build_linear_constraint(
                    pts, kind=rep.kind, frame_id=rep.frame, time=rep.time,
                    keypoint_id=rep.candidate))

    return assemble_task(reps, constraints, tensor, bank,
                         master=master.name, slave=slave.name,
                         canonical_master=canon_m, canonical_slave=canon_s,
                         descriptor_ids=slave.descriptor_ids,
                         n_kernels=config.n_kernels)
