"""k-means with k-means++ seeding and multi-restart selection by inertia."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class KMeansModel:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    n_iter: int = 0
    inertia_history: list[float] = field(default_factory=list)
    restart: int = 0


def _check_rows(rows, n_clusters):
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("rows must be a 2-D feature matrix")
    if n_clusters < 1:
        raise ValueError("n_clusters must be positive")
    if x.shape[0] < n_clusters:
        raise ValueError(f"need at least {n_clusters} rows, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("rows contain non-finite values")
    return x


def _sq_dists(x, centroids):
    # direct differences keep exactness for duplicated points
    diff = x[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def kmeans_pp_init(rows, n_clusters: int, seed=None) -> np.ndarray:
    """k-means++ seeding.

    The first centroid is a uniformly drawn row; each further centroid is a
    row drawn with probability proportional to its squared distance to the
    nearest centroid chosen so far.
    """
    x = _check_rows(rows, n_clusters)
    rng = np.random.default_rng(seed)
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    closest = np.sum((x - x[chosen[0]]) ** 2, axis=1)
    for _ in range(1, n_clusters):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # every row coincides with a centroid already
            idx = int(rng.integers(n))
        chosen.append(idx)
        closest = np.minimum(closest, np.sum((x - x[idx]) ** 2, axis=1))
    return x[chosen].copy()


def _lloyd(x, centroids, max_iters):
    centroids = centroids.copy()
    m = centroids.shape[0]
    history = []
    labels = None
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        d2 = _sq_dists(x, centroids)
        new_labels = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(len(x)), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        if n_iter == max_iters:
            break
        counts = np.bincount(labels, minlength=m)
        for j in range(m):
            if counts[j]:
                centroids[j] = x[labels == j].mean(axis=0)
        empty = np.flatnonzero(counts == 0)
        if len(empty):
            dist_own = np.sum((x - centroids[labels]) ** 2, axis=1)
            for j in empty:
                far = int(np.argmax(dist_own))
                centroids[j] = x[far]
                labels[far] = j
                dist_own[far] = -1.0
    d2 = _sq_dists(x, centroids)
    labels = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(len(x)), labels].sum())
    return centroids, labels, inertia, n_iter, history


def kmeans(rows, n_clusters: int, seed=None, restarts: int = 10, max_iters: int = 300) -> KMeansModel:
    """Lloyd's algorithm from ``restarts`` k-means++ seedings; lowest inertia wins.

    Empty clusters are re-seeded at the row farthest from its centroid. The
    winner is chosen by ``(inertia, restart index)``.
    """
    x = _check_rows(rows, n_clusters)
    if restarts < 1:
        raise ValueError("restarts must be positive")
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seeds = root.spawn(restarts)
    best = None
    for r, ss in enumerate(seeds):
        init = kmeans_pp_init(x, n_clusters, seed=np.random.default_rng(ss))
        c, lab, inertia, n_iter, hist = _lloyd(x, init, max_iters)
        if best is None or inertia < best.inertia:
            best = KMeansModel(c, lab, inertia, n_iter, hist, restart=r)
    return best


def inertia_of(rows, assignments, n_clusters) -> float:
    """Within-cluster sum of squares of a fixed assignment (centroids = means)."""
    x = np.asarray(rows, dtype=np.float64)
    total = 0.0
    for j in range(n_clusters):
        pts = x[assignments == j]
        if len(pts):
            total += float(np.sum((pts - pts.mean(axis=0)) ** 2))
    return total


def cluster_superpixels(per_image_features, n_clusters: int, seed=None, restarts: int = 10,
                        max_iters: int = 300, normalize: bool = False):
    """One shared k-means over the superpixel rows of every image.

    Returns the per-image label arrays (in input order) and the fitted model.
    """
    blocks = [np.asarray(z, dtype=np.float64) for z in per_image_features]
    if normalize:
        blocks = [z / np.maximum(np.linalg.norm(z, axis=1, keepdims=True), 1e-12) for z in blocks]
    rows = np.concatenate(blocks, axis=0)
    model = kmeans(rows, n_clusters, seed=seed, restarts=restarts, max_iters=max_iters)
    splits = np.cumsum([len(z) for z in blocks])[:-1]
    return np.split(model.assignments, splits), model


def save_centroids(model: KMeansModel, path) -> None:
    np.savetxt(path, model.centroids, fmt="%.17g")
