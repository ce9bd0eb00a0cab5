"""Redundancy resolution over dense constraint selections.

A dense variability sweep marks many (candidate, frame, time) triples as
constrained; most are duplicates of the same physical subgoal seen at
adjacent times, at nearby candidates, or from equivalent local frames.
Three passes make them sparse: single-linkage clustering over time, then
over canonical-shape position within each constraint kind, then a
minimum-variability representative per cluster with the closest frame.
"""

from __future__ import annotations

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from .constraints import (LINEAR_KINDS, NONLINEAR_KINDS, FrameLocalTensor,
                          Selection)
from .demos import CanonicalShape

TIME_CUTOFF_FRACTION = 0.05
POSITION_CUTOFF_FRACTION = 0.1

_KIND_ORDER = {k: i for i, k in enumerate(LINEAR_KINDS + NONLINEAR_KINDS)}


def _single_linkage_groups(values: np.ndarray, cutoff: float) -> list:
    """Index groups after single-linkage merging at distance <= cutoff."""
    n = values.shape[0]
    if n == 1:
        return [[0]]
    z = linkage(values.reshape(n, -1), method="single")
    labels = fcluster(z, t=cutoff, criterion="distance")
    groups = {}
    for i, lab in enumerate(labels):
        groups.setdefault(lab, []).append(i)
    return list(groups.values())


def cluster_time(selections, total_steps: int,
                 cutoff_fraction: float = TIME_CUTOFF_FRACTION) -> list:
    """Group selections whose times chain within 0.05 of the demo length.

    Returns clusters ordered by mean time; members keep input order.
    """
    sels = list(selections)
    if not sels:
        raise ValueError("need at least one selection")
    times = np.array([s.time for s in sels], dtype=np.float64)
    groups = _single_linkage_groups(times, cutoff_fraction * total_steps)
    clusters = [[sels[i] for i in g] for g in groups]
    clusters.sort(key=lambda c: np.mean([s.time for s in c]))
    return clusters


def cluster_position(cluster, canonical: CanonicalShape,
                     cutoff_fraction: float = POSITION_CUTOFF_FRACTION) -> list:
    """Split one time cluster by candidate position in the canonical shape.

    Selections are partitioned by constraint kind first; within a kind,
    single-linkage clustering on canonical positions merges candidates
    closer than 0.1 of the spatial scale. Clusters come back in a fixed
    kind order, then by their lowest candidate index.
    """
    sels = list(cluster)
    if not sels:
        raise ValueError("position clustering needs a non-empty cluster")
    by_kind = {}
    for s in sels:
        by_kind.setdefault(s.kind, []).append(s)

    out = []
    cutoff = cutoff_fraction * canonical.spatial_scale
    for kind in sorted(by_kind, key=_KIND_ORDER.__getitem__):
        members = by_kind[kind]
        pos = canonical.positions[[s.candidate for s in members]]
        groups = _single_linkage_groups(pos, cutoff)
        kind_clusters = [[members[i] for i in g] for g in groups]
        kind_clusters.sort(key=lambda c: min(s.candidate for s in c))
        out.extend(kind_clusters)
    return out


def select_representatives(position_clusters) -> list:
    """Keep the lowest-variability selection per cluster (ties: lowest
    candidate index, then frame, then time, for determinism)."""
    if not position_clusters:
        raise ValueError("no clusters to select from")
    return [
        min(c, key=lambda s: (s.score, s.candidate, s.frame, s.time))
        for c in position_clusters
    ]


def resolve_frames(tensor: FrameLocalTensor, candidate: int, time: int,
                   frame_ids) -> int:
    """Pick the frame whose origin sits closest to the keypoint.

    Distance is the mean over demos of the frame-local keypoint norm at
    the selected time; ties break toward the lowest frame id.
    """
    ids = sorted(int(j) for j in frame_ids)
    if not ids:
        raise ValueError("no frames to resolve")
    vals = tensor.values
    dists = [float(np.linalg.norm(vals[j, candidate, time], axis=1).mean())
             for j in ids]
    return ids[int(np.argmin(dists))]


def sparsify(selections, total_steps: int, canonical: CanonicalShape,
             tensor: FrameLocalTensor) -> list:
    """Full redundancy resolution: dense selections to sparse keypoints.

    Time clusters, per-kind position clusters, minimum-score
    representative, then frame resolution among the cluster's frames that
    saw the representative's candidate. Output keypoints appear in time
    order.
    """
    sparse = []
    for tc in cluster_time(selections, total_steps):
        for pc in cluster_position(tc, canonical):
            rep = select_representatives([pc])[0]
            frame_ids = {s.frame for s in pc if s.candidate == rep.candidate}
            frame = resolve_frames(tensor, rep.candidate, rep.time, frame_ids)
            sparse.append(Selection(candidate=rep.candidate, frame=frame,
                                    time=rep.time, kind=rep.kind,
                                    score=rep.score))
    return sparse
