"""SLIC superpixels and the pixel <-> superpixel bridges (mean pooling, label mapping).

Segmentations are plain integer arrays of shape ``(H, W)`` holding dense
segment ids ``0..K-1``; feature maps are float arrays of shape ``(H, W, d)``.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from scipy import ndimage

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


def _as_feature_map(features) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    if f.ndim == 2:
        f = f[..., None]
    if f.ndim != 3:
        raise ValueError(f"feature map must be (H, W) or (H, W, d), got {f.shape}")
    if f.shape[2] == 0:
        raise ValueError("feature map has zero channels")
    return f


def grid_shape(height: int, width: int, target: int) -> tuple[int, int]:
    """Rows and columns of the initial centroid grid for ``target`` segments."""
    nx = max(1, math.ceil(math.sqrt(target * width / height)))
    ny = max(1, round(target / nx))
    return min(ny, height), min(nx, width)


def grid_segmentation(height: int, width: int, target: int) -> np.ndarray:
    """Rectangular grid partition used to seed SLIC."""
    ny, nx = grid_shape(height, width, target)
    rows = (np.arange(height) * ny) // height
    cols = (np.arange(width) * nx) // width
    return rows[:, None] * nx + cols[None, :]


def num_segments(seg) -> int:
    return int(np.asarray(seg).max()) + 1


def slic(features, target_segments: int = 100, compactness: float = 0.1, max_iters: int = 10):
    """Simple linear iterative clustering over an arbitrary feature map.

    Centroids start on a regular grid with spacing ``S = sqrt(D / target)``.
    Each iteration assigns every pixel inside a ``2S x 2S`` window around a
    centroid to the centroid minimising
    ``sqrt(d_feat**2 + (compactness * d_xy / S)**2)``; ties go to the lower
    centroid index. Iteration stops after ``max_iters`` or when no centroid
    moves by more than 1e-4. Disconnected fragments are then absorbed into
    their largest neighbouring segment and ids are made dense.

    Returns
    -------
    ndarray of int, shape (H, W)
    """
    f = _as_feature_map(features)
    h, w, d = f.shape
    n_pix = h * w
    if target_segments < 1 or target_segments > n_pix:
        raise ValueError(f"target_segments must lie in [1, {n_pix}]")
    if compactness < 0:
        raise ValueError("compactness must be non-negative")
    if not np.all(np.isfinite(f)):
        raise ValueError("features must be finite")

    step = math.sqrt(n_pix / target_segments)
    labels = grid_segmentation(h, w, target_segments)
    ny, nx = grid_shape(h, w, target_segments)
    k = ny * nx
    cy = np.repeat((np.arange(ny) + 0.5) * h / ny - 0.5, nx)
    cx = np.tile((np.arange(nx) + 0.5) * w / nx - 0.5, ny)
    cf = _segment_means(f.reshape(-1, d), labels.ravel(), k)

    spatial_w = (compactness / step) ** 2
    yy, xx = np.mgrid[0:h, 0:w]
    flat_f = f.reshape(-1, d)
    for _ in range(max_iters):
        dist = np.full((h, w), np.inf)
        new_labels = labels.copy()
        for c in range(k):
            y0 = max(0, math.ceil(cy[c] - step))
            y1 = min(h, math.floor(cy[c] + step) + 1)
            x0 = max(0, math.ceil(cx[c] - step))
            x1 = min(w, math.floor(cx[c] + step) + 1)
            if y0 >= y1 or x0 >= x1:
                continue
            diff = f[y0:y1, x0:x1] - cf[c]
            dd = np.einsum("ijk,ijk->ij", diff, diff)
            if spatial_w:
                dd = dd + spatial_w * (
                    (yy[y0:y1, x0:x1] - cy[c]) ** 2 + (xx[y0:y1, x0:x1] - cx[c]) ** 2
                )
            win = dist[y0:y1, x0:x1]
            better = dd < win
            win[better] = dd[better]
            new_labels[y0:y1, x0:x1][better] = c
        labels = new_labels

        counts = np.bincount(labels.ravel(), minlength=k)
        live = counts > 0
        ny_c = np.bincount(labels.ravel(), weights=yy.ravel(), minlength=k)
        nx_c = np.bincount(labels.ravel(), weights=xx.ravel(), minlength=k)
        nf_c = _segment_means(flat_f, labels.ravel(), k)
        new_cy = np.where(live, ny_c / np.maximum(counts, 1), cy)
        new_cx = np.where(live, nx_c / np.maximum(counts, 1), cx)
        new_cf = np.where(live[:, None], nf_c, cf)
        shift = np.sqrt(
            (new_cy - cy) ** 2 + (new_cx - cx) ** 2 + np.sum((new_cf - cf) ** 2, axis=1)
        )
        cy, cx, cf = new_cy, new_cx, new_cf
        if shift.max() < 1e-4:
            break

    return enforce_connectivity(labels)


def _segment_means(flat_features, flat_labels, k):
    counts = np.bincount(flat_labels, minlength=k).astype(np.float64)
    sums = np.stack(
        [np.bincount(flat_labels, weights=flat_features[:, j], minlength=k)
         for j in range(flat_features.shape[1])],
        axis=1,
    )
    return sums / np.maximum(counts, 1.0)[:, None]


def relabel_dense(seg) -> np.ndarray:
    """Renumber ids to ``0..K-1`` in raster order of first appearance."""
    seg = np.asarray(seg)
    _, first, inverse = np.unique(seg.ravel(), return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return rank[inverse].reshape(seg.shape)


def _connected_components(seg):
    comp = np.empty(seg.shape, dtype=np.int64)
    owner, sizes = [], []
    offset = 0
    for lab in np.unique(seg):
        cc, n = ndimage.label(seg == lab, structure=FOUR_CONNECTED)
        sel = cc > 0
        comp[sel] = cc[sel] - 1 + offset
        sizes.extend(np.bincount(cc[sel] - 1, minlength=n).tolist())
        owner.extend([lab] * n)
        offset += n
    return comp, np.array(owner), np.array(sizes)


def _adjacency(comp, n):
    pairs = []
    for a, b in ((comp[:, :-1], comp[:, 1:]), (comp[:-1, :], comp[1:, :])):
        diff = a != b
        pairs.append(np.stack([a[diff], b[diff]], axis=1))
    pairs = np.concatenate(pairs)
    neighbours = [set() for _ in range(n)]
    for a, b in np.unique(pairs, axis=0):
        neighbours[a].add(int(b))
        neighbours[b].add(int(a))
    return neighbours


def enforce_connectivity(seg) -> np.ndarray:
    """Make every segment 4-connected.

    For each id the largest connected piece is kept; every other fragment is
    merged, smallest first, into the largest adjacent region.
    """
    seg = np.asarray(seg)
    comp, owner, sizes = _connected_components(seg)
    n = len(sizes)
    kept = np.zeros(n, dtype=bool)
    for lab in np.unique(owner):
        idx = np.flatnonzero(owner == lab)
        kept[idx[np.argmax(sizes[idx])]] = True
    if kept.all():
        return relabel_dense(seg)

    neighbours = _adjacency(comp, n)
    parent = np.arange(n)
    members = {i: {i} for i in range(n)}
    group_size = sizes.astype(np.int64).copy()
    group_kept = kept.copy()

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    while True:
        roots = [r for r in members if not group_kept[r]]
        if not roots:
            break
        r = min(roots, key=lambda g: (group_size[g], min(members[g])))
        adj = set()
        for m in members[r]:
            adj.update(find(x) for x in neighbours[m])
        adj.discard(r)
        if not adj:
            raise RuntimeError("isolated fragment without neighbours")
        target = min(adj, key=lambda g: (-group_size[g], min(members[g])))
        parent[r] = target
        members[target] |= members.pop(r)
        group_size[target] += group_size[r]
        group_kept[target] = group_kept[target] or group_kept[r]

    roots = np.array([find(i) for i in range(n)])
    return relabel_dense(roots[comp])


def is_connected_partition(seg) -> bool:
    """Dense ids, each segment non-empty and 4-connected."""
    seg = np.asarray(seg)
    k = num_segments(seg)
    if seg.min() != 0 or np.any(np.bincount(seg.ravel(), minlength=k) == 0):
        return False
    for lab in range(k):
        _, n = ndimage.label(seg == lab, structure=FOUR_CONNECTED)
        if n != 1:
            return False
    return True


def pool(features, seg) -> np.ndarray:
    """Mean feature of each superpixel: row ``k`` averages the pixels of segment ``k``.

    Normalisation is by the segment's own pixel count.
    """
    f = _as_feature_map(features)
    seg = np.asarray(seg)
    if seg.shape != f.shape[:2]:
        raise ValueError(f"shape mismatch: features {f.shape[:2]} vs segmentation {seg.shape}")
    return _segment_means(f.reshape(-1, f.shape[2]), seg.ravel(), num_segments(seg))


def map_labels(seg, labels) -> np.ndarray:
    """Broadcast one label per superpixel to every pixel it contains."""
    seg = np.asarray(seg)
    labels = np.asarray(labels)
    if labels.ndim != 1 or len(labels) != num_segments(seg):
        raise ValueError(f"expected {num_segments(seg)} segment labels, got {labels.shape}")
    return labels[seg]


def majority_labels(seg, pixel_labels, num_classes: int) -> np.ndarray:
    """Most frequent pixel label inside each segment (ties to the lower class)."""
    seg = np.asarray(seg)
    k = num_segments(seg)
    counts = np.zeros((k, num_classes), dtype=np.int64)
    np.add.at(counts, (seg.ravel(), np.asarray(pixel_labels).ravel()), 1)
    return np.argmax(counts, axis=1)


def save_segmentation(seg, path) -> None:
    """16-bit PGM of segment ids plus a ``.txt`` sidecar holding K."""
    seg = np.asarray(seg)
    k = num_segments(seg)
    if k > 65536:
        raise ValueError("too many segments for a 16-bit PGM")
    path = Path(path)
    h, w = seg.shape
    header = f"P5\n{w} {h}\n65535\n".encode("ascii")
    path.write_bytes(header + seg.astype(">u2").tobytes())
    path.with_suffix(".txt").write_text(f"num_segments {k}\n")


def load_segmentation(path) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    parts = data.split(maxsplit=4)
    w, h = int(parts[1]), int(parts[2])
    raw = np.frombuffer(data[-2 * w * h :], dtype=">u2").reshape(h, w).astype(np.int64)
    meta = path.with_suffix(".txt").read_text().split()
    if int(meta[1]) != num_segments(raw):
        raise ValueError(f"{path}: sidecar segment count disagrees with the id map")
    return raw
