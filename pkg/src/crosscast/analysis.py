"""Query extraction and K-means clustering of per-region query vectors.

Clustering the latest query vector of every region exposes which regions the
attention mechanism treats as similar.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import project_qkv
from .dataset import Dataset
from .detrend import holt_filter
from .embedding import cum_minmax_normalize, segment_embed
from .errors import UsageError
from .model import ForecastModel
from . import autodiff as ad

KMEANS_MAX_ITER = 300


@dataclass
class ClusterAssignment:
    labels: np.ndarray  # region -> cluster id
    centroids: np.ndarray  # (K, d)
    sse: float  # within-cluster sum of squared distances


def extract_queries(model: ForecastModel, dataset: Dataset, last_day: int) -> np.ndarray:
    """One query vector per region from the segment ending at `last_day`."""
    cfg = model.config
    if last_day < cfg.l:
        raise UsageError(f"day {last_day} precedes the first full segment (l={cfg.l})")
    values = dataset.values[:, :last_day]
    if cfg.variant.detrend_on:
        resid = holt_filter(values, model.holt).residuals
    else:
        resid = ad.Node(values)
    seg = resid[:, last_day - cfg.l:last_day]
    feats = dataset.dynamic[:, last_day - cfg.l:last_day] if model.uses_dynamic else None
    ctilde = cum_minmax_normalize(seg)[0] if cfg.variant.normalize_on else seg
    p = segment_embed(ctilde, feats, model.seg_encoder)
    u = dataset.static if model.uses_static else None
    q, _, _ = project_qkv(p, p, u, model.attn)
    return q.value.copy()


def _sse_and_labels(points: np.ndarray, centroids: np.ndarray) -> tuple[float, np.ndarray]:
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    return float(d2[np.arange(len(points)), labels].sum()), labels


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centroids = [points[rng.integers(n)]]
    for _ in range(1, k):
        d2 = ((points[:, None, :] - np.array(centroids)[None, :, :]) ** 2).sum(axis=2).min(axis=1)
        total = d2.sum()
        if total == 0:  # all remaining points coincide with a centroid
            centroids.append(points[rng.integers(n)])
            continue
        centroids.append(points[rng.choice(n, p=d2 / total)])
    return np.array(centroids)


def _lloyd(points: np.ndarray, centroids: np.ndarray) -> ClusterAssignment:
    sse, labels = _sse_and_labels(points, centroids)
    for _ in range(KMEANS_MAX_ITER):
        new_centroids = centroids.copy()
        for c in range(len(centroids)):
            members = points[labels == c]
            if len(members):
                new_centroids[c] = members.mean(axis=0)
        new_sse, new_labels = _sse_and_labels(points, new_centroids)
        assert new_sse <= sse + 1e-9, "Lloyd iteration increased the objective"
        if np.array_equal(new_labels, labels):
            return ClusterAssignment(new_labels, new_centroids, new_sse)
        centroids, labels, sse = new_centroids, new_labels, new_sse
    return ClusterAssignment(labels, centroids, sse)


def kmeans(points, k: int, seed: int, restarts: int = 10) -> ClusterAssignment:
    """K-means++ with Lloyd refinement; best of `restarts` seeded runs."""
    points = np.asarray(points, dtype=np.float64)
    if not 1 <= k <= len(points):
        raise UsageError(f"k={k} out of range for {len(points)} points")
    rng = np.random.default_rng(seed)
    best: ClusterAssignment | None = None
    for _ in range(restarts):
        run = _lloyd(points, _kmeans_pp_init(points, k, rng))
        if best is None or run.sse < best.sse:
            best = run
    return best


def elbow_curve(points, k_max: int, seed: int = 0, restarts: int = 10) -> list[tuple[int, float]]:
    """(K, sse) pairs for K = 1..k_max; non-increasing by construction.

    Besides the random restarts, each K is warm-started from the previous
    K's centroids plus the farthest point, which cannot raise the objective.
    """
    points = np.asarray(points, dtype=np.float64)
    if k_max > len(points):
        raise UsageError(f"k_max={k_max} exceeds {len(points)} points")
    curve: list[tuple[int, float]] = []
    prev: ClusterAssignment | None = None
    for k in range(1, k_max + 1):
        best = kmeans(points, k, seed + k, restarts)
        if prev is not None:
            d2 = ((points[:, None, :] - prev.centroids[None, :, :]) ** 2).sum(axis=2).min(axis=1)
            warm = np.vstack([prev.centroids, points[d2.argmax()]])
            run = _lloyd(points, warm)
            if run.sse < best.sse:
                best = run
        curve.append((k, best.sse))
        prev = best
    return curve
