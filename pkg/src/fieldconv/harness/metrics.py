"""Evaluation metrics: accuracy, precision/recall rankings and geodesic
error curves."""

from __future__ import annotations

import numpy as np
from scipy.sparse import csgraph

from ..mesh import TriMesh


def accuracy(pred, target) -> float:
    pred, target = np.asarray(pred), np.asarray(target)
    return float(np.mean(pred == target)) if len(target) else float("nan")


def pr_curve(order, matches) -> tuple[np.ndarray, np.ndarray]:
    """Precision and recall after the top ``r`` retrieved items, r = 1..K.

    ``order`` ranks candidate indices (best first); ``matches`` is the set or
    boolean mask of valid matches. Recall is NaN for an empty match set.
    """
    order = np.asarray(order)
    if isinstance(matches, np.ndarray) and matches.dtype == bool:
        hit = matches[order]
    else:
        hit = np.isin(order, np.fromiter(matches, dtype=np.int64))
    found = np.cumsum(hit)
    r = np.arange(1, len(order) + 1)
    total = hit.sum()
    recall = found / total if total else np.full(len(order), np.nan)
    return found / r, recall


def precision_at_recall(precision, recall, level: float = 0.5) -> float:
    """Precision at the first rank whose recall reaches ``level``."""
    idx = np.flatnonzero(recall >= level - 1e-12)
    return float(precision[idx[0]]) if len(idx) else float("nan")


def match_sets(model_dist: np.ndarray, truth: np.ndarray, radius: float = 0.05) -> np.ndarray:
    """Boolean (S, K) mask: sampled model point ``k`` is a valid match of
    scene sample ``s`` when it lies within ``radius`` of the ground-truth
    image ``truth[s]``. ``model_dist[k, v]`` is the geodesic distance from
    sampled model point ``k`` to model vertex ``v``."""
    return (model_dist[:, truth] <= radius).T


def mean_precision_at_recall(dist: np.ndarray, mask: np.ndarray, level: float = 0.5) -> float:
    """Average over scene points with a nonempty match set; ``dist`` is the
    (S, K) descriptor distance matrix, ties broken by model sample index."""
    vals = []
    for s in range(dist.shape[0]):
        if not mask[s].any():
            continue
        order = np.argsort(dist[s], kind="stable")
        P, R = pr_curve(order, mask[s])
        vals.append(precision_at_recall(P, R, level))
    return float(np.mean(vals)) if vals else float("nan")


def random_baseline(mask: np.ndarray, level: float = 0.5, trials: int = 200, seed: int = 0) -> float:
    """Mean precision at ``level`` recall under uniformly random rankings,
    estimated from ``trials`` seeded permutations per scene point."""
    rng = np.random.default_rng(seed)
    vals = []
    K = mask.shape[1]
    for s in range(mask.shape[0]):
        if not mask[s].any():
            continue
        acc = 0.0
        for _ in range(trials):
            P, R = pr_curve(rng.permutation(K), mask[s])
            acc += precision_at_recall(P, R, level)
        vals.append(acc / trials)
    return float(np.mean(vals)) if vals else float("nan")


def mean_pr_curve(dist: np.ndarray, mask: np.ndarray, levels=None) -> tuple[np.ndarray, np.ndarray]:
    """Precision interpolated at fixed recall levels, averaged over scene
    points with nonempty match sets (for plotting)."""
    levels = np.linspace(0.05, 1.0, 20) if levels is None else np.asarray(levels)
    rows = []
    for s in range(dist.shape[0]):
        if mask[s].any():
            P, R = pr_curve(np.argsort(dist[s], kind="stable"), mask[s])
            rows.append([precision_at_recall(P, R, lv) for lv in levels])
    return levels, (np.mean(rows, axis=0) if rows else np.full(len(levels), np.nan))


def geodesic_from(mesh: TriMesh, sources) -> np.ndarray:
    return csgraph.dijkstra(mesh.edge_graph(), directed=False, indices=np.asarray(sources))


def geodesic_error_curve(mesh: TriMesh, pred, truth, thresholds) -> np.ndarray:
    """Fraction of predictions within each geodesic error threshold on the
    unit-area ``mesh`` (graph distances)."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    D = geodesic_from(mesh, np.unique(truth))
    row = {v: i for i, v in enumerate(np.unique(truth))}
    err = np.array([D[row[t], p] for p, t in zip(pred, truth)])
    return np.array([np.mean(err <= th) for th in thresholds])
