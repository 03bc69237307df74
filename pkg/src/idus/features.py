"""Sliding-window texture descriptors: GLCM/Haralick, Sobel, HOG and uniform LBP.

Every extractor maps an ``(H, W)`` intensity image to an ``(H, W, d)``
feature map; windows are centred on each pixel and the image is extended by
mirror (reflect) padding.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class WindowSpec:
    radius: int = 8
    stride: int = 1

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError("window radius must be at least 1")
        if self.stride < 1:
            raise ValueError("stride must be at least 1")

    @property
    def size(self) -> int:
        return 2 * self.radius + 1


@dataclass(frozen=True)
class GlcmSpec:
    gray_levels: int = 16
    offsets: tuple[tuple[int, int], ...] = ((1, 0), (0, 1), (1, 1), (1, -1))
    symmetric: bool = True

    def __post_init__(self):
        if self.gray_levels < 2:
            raise ValueError("gray_levels must be at least 2")
        if not self.offsets:
            raise ValueError("at least one GLCM offset is required")


def _pixels(img) -> np.ndarray:
    px = getattr(img, "pixels", img)
    px = np.asarray(px, dtype=np.float64)
    if px.ndim != 2:
        raise ValueError("expected a 2-D intensity image")
    return px


def _check_window(px, win: WindowSpec):
    if win.radius >= min(px.shape):
        raise ValueError(f"window radius {win.radius} too large for image {px.shape}")


def _apply_stride(fmap, stride):
    if stride == 1:
        return fmap
    h, w = fmap.shape[:2]
    sub = fmap[::stride, ::stride]
    return np.repeat(np.repeat(sub, stride, axis=0), stride, axis=1)[:h, :w]


def _integral(onehot):
    """Zero-bordered 2-D cumulative sums over the last two axes."""
    s = np.zeros(onehot.shape[:-2] + (onehot.shape[-2] + 1, onehot.shape[-1] + 1), dtype=np.int64)
    s[..., 1:, 1:] = onehot.cumsum(axis=-2).cumsum(axis=-1)
    return s


def _rect_sums(integral, r0, r1, c0, c1, out_h, out_w):
    """Sum of each channel over rows [y+r0, y+r1) and cols [x+c0, x+c1) for every (y, x)."""
    ys = np.arange(out_h)[:, None]
    xs = np.arange(out_w)[None, :]
    a, b = ys + r0, ys + r1
    c, d = xs + c0, xs + c1
    return integral[..., b, d] - integral[..., a, d] - integral[..., b, c] + integral[..., a, c]


def _box_sum(channels, radius):
    """Window sums of ``(..., H, W)`` maps with reflect padding; exact for non-negatives."""
    ones = np.ones(2 * radius + 1)
    out = ndimage.correlate1d(channels, ones, axis=-2, mode="reflect")
    return ndimage.correlate1d(out, ones, axis=-1, mode="reflect")


# ---------------------------------------------------------------------------
# GLCM / Haralick


def quantize(px, levels: int) -> np.ndarray:
    """Map intensities in [0, 1] to integer gray levels ``0..levels-1``."""
    return np.clip(np.floor(np.asarray(px) * levels), 0, levels - 1).astype(np.int64)


def glcm(window_levels, offset, levels: int, symmetric: bool = True) -> np.ndarray:
    """Co-occurrence counts of one quantised window for one ``(dx, dy)`` offset."""
    q = np.asarray(window_levels)
    dx, dy = offset
    h, w = q.shape
    ys = slice(max(0, -dy), h - max(0, dy))
    xs = slice(max(0, -dx), w - max(0, dx))
    ys2 = slice(max(0, dy), h - max(0, -dy))
    xs2 = slice(max(0, dx), w - max(0, -dx))
    counts = np.zeros((levels, levels), dtype=np.int64)
    np.add.at(counts, (q[ys, xs].ravel(), q[ys2, xs2].ravel()), 1)
    if symmetric:
        counts = counts + counts.T
    return counts


def haralick(p) -> np.ndarray:
    """Contrast, correlation, energy and homogeneity of probability matrices ``(..., L, L)``.

    Correlation is defined as 1 when either marginal has zero variance.
    """
    p = np.asarray(p, dtype=np.float64)
    levels = p.shape[-1]
    i = np.arange(levels, dtype=np.float64)[:, None]
    j = np.arange(levels, dtype=np.float64)[None, :]
    contrast = np.sum(p * (i - j) ** 2, axis=(-2, -1))
    energy = np.sum(p * p, axis=(-2, -1))
    homogeneity = np.sum(p / (1.0 + np.abs(i - j)), axis=(-2, -1))
    pi = p.sum(axis=-1)
    pj = p.sum(axis=-2)
    lv = np.arange(levels, dtype=np.float64)
    mu_i = pi @ lv
    mu_j = pj @ lv
    var_i = pi @ lv**2 - mu_i**2
    var_j = pj @ lv**2 - mu_j**2
    cov = np.sum(p * i * j, axis=(-2, -1)) - mu_i * mu_j
    denom = np.sqrt(np.maximum(var_i, 0) * np.maximum(var_j, 0))
    tiny = denom < 1e-12
    correlation = np.where(tiny, 1.0, cov / np.where(tiny, 1.0, denom))
    return np.stack([contrast, correlation, energy, homogeneity], axis=-1)


def glcm_haralick(img, win: WindowSpec = WindowSpec(), spec: GlcmSpec = GlcmSpec()) -> np.ndarray:
    """Per-pixel Haralick statistics of the window GLCM, averaged over offsets (dim 4)."""
    px = _pixels(img)
    _check_window(px, win)
    h, w = px.shape
    r = win.radius
    levels = spec.gray_levels
    q = np.pad(quantize(px, levels), r, mode="symmetric")
    size = win.size
    feats = np.zeros((h, w, 4))
    for dx, dy in spec.offsets:
        if abs(dx) >= size or abs(dy) >= size:
            raise ValueError(f"offset {(dx, dy)} does not fit the window")
        hp, wp = q.shape
        # anchors whose partner lies inside the padded image
        a = q[max(0, -dy) : hp - max(0, dy), max(0, -dx) : wp - max(0, dx)]
        b = q[max(0, dy) : hp - max(0, -dy), max(0, dx) : wp - max(0, -dx)]
        codes = a * levels + b
        onehot = codes[None, :, :] == np.arange(levels * levels)[:, None, None]
        integral = _integral(onehot.astype(np.int64))
        # a window starting at padded row y spans anchor rows [y, y + size - |dy|)
        counts = _rect_sums(integral, 0, size - abs(dy), 0, size - abs(dx), h, w)
        counts = np.moveaxis(counts, 0, -1).reshape(h, w, levels, levels).astype(np.float64)
        if spec.symmetric:
            counts = counts + np.swapaxes(counts, -1, -2)
        p = counts / counts.sum(axis=(-2, -1), keepdims=True)
        feats += haralick(p)
    feats /= len(spec.offsets)
    return _apply_stride(feats, win.stride)


# ---------------------------------------------------------------------------
# Sobel


def sobel_magnitude(img) -> np.ndarray:
    """Gradient magnitude from 3x3 Sobel kernels (unnormalised, reflect border)."""
    px = _pixels(img)
    gx = ndimage.sobel(px, axis=1, mode="reflect")
    gy = ndimage.sobel(px, axis=0, mode="reflect")
    return np.hypot(gx, gy)


def sobel_features(img, win: WindowSpec = WindowSpec()) -> np.ndarray:
    """Window mean and standard deviation of the Sobel magnitude (dim 2)."""
    px = _pixels(img)
    _check_window(px, win)
    mag = sobel_magnitude(px)
    area = win.size**2
    mean = _box_sum(mag, win.radius) / area
    mean_sq = _box_sum(mag * mag, win.radius) / area
    std = np.sqrt(np.maximum(mean_sq - mean**2, 0.0))
    return _apply_stride(np.stack([mean, std], axis=-1), win.stride)


# ---------------------------------------------------------------------------
# HOG


def gradient_orientation_bins(px, bins: int):
    """Central-difference gradient magnitude and unsigned orientation bin per pixel."""
    padded = np.pad(px, 1, mode="symmetric")
    gx = padded[1:-1, 2:] - padded[1:-1, :-2]
    gy = padded[2:, 1:-1] - padded[:-2, 1:-1]
    mag = np.hypot(gx, gy)
    angle = np.mod(np.arctan2(gy, gx), np.pi)
    idx = np.minimum((angle / (np.pi / bins)).astype(np.int64), bins - 1)
    return mag, idx


def hog_features(img, win: WindowSpec = WindowSpec(), bins: int = 9, eps: float = 1e-6) -> np.ndarray:
    """Magnitude-weighted unsigned orientation histogram per window, L2-normalised (dim ``bins``)."""
    if bins < 2:
        raise ValueError("bins must be at least 2")
    px = _pixels(img)
    _check_window(px, win)
    mag, idx = gradient_orientation_bins(px, bins)
    weighted = np.where(idx[None] == np.arange(bins)[:, None, None], mag[None], 0.0)
    hist = np.moveaxis(_box_sum(weighted, win.radius), 0, -1)
    norm = np.sqrt(np.sum(hist**2, axis=-1, keepdims=True) + eps**2)
    return _apply_stride(hist / norm, win.stride)


# ---------------------------------------------------------------------------
# LBP


def _transitions(code: int, points: int) -> int:
    bits = [(code >> k) & 1 for k in range(points)]
    return sum(bits[k] != bits[(k + 1) % points] for k in range(points))


def uniform_lbp_table(points: int = 8) -> np.ndarray:
    """Bin index for every code: uniform codes (<= 2 circular transitions) in
    increasing order, all others share the final bin."""
    table = np.empty(2**points, dtype=np.int64)
    nxt = 0
    non_uniform = []
    for code in range(2**points):
        if _transitions(code, points) <= 2:
            table[code] = nxt
            nxt += 1
        else:
            non_uniform.append(code)
    table[non_uniform] = nxt
    return table


_LBP_TABLE = uniform_lbp_table(8)
LBP_BINS = int(_LBP_TABLE.max()) + 1


def lbp_codes(img, radius: int = 1) -> np.ndarray:
    """8-neighbour LBP code per pixel; bit k is set when neighbour k >= centre."""
    px = _pixels(img)
    r = radius
    padded = np.pad(px, r, mode="symmetric")
    h, w = px.shape
    # counter-clockwise from east
    offsets = [(0, r), (-r, r), (-r, 0), (-r, -r), (0, -r), (r, -r), (r, 0), (r, r)]
    codes = np.zeros((h, w), dtype=np.int64)
    for bit, (dy, dx) in enumerate(offsets):
        nb = padded[r + dy : r + dy + h, r + dx : r + dx + w]
        codes |= (nb >= px).astype(np.int64) << bit
    return codes


def lbp_features(img, win: WindowSpec = WindowSpec(), points: int = 8, radius: int = 1) -> np.ndarray:
    """Normalised uniform-LBP histogram per window (dim 59)."""
    if points != 8:
        raise ValueError("only 8-point LBP is supported")
    if radius < 1:
        raise ValueError("LBP radius must be at least 1")
    px = _pixels(img)
    _check_window(px, win)
    bins = _LBP_TABLE[lbp_codes(px, radius)]
    onehot = (bins[None] == np.arange(LBP_BINS)[:, None, None]).astype(np.float64)
    hist = np.moveaxis(_box_sum(onehot, win.radius), 0, -1) / win.size**2
    return _apply_stride(hist, win.stride)


# ---------------------------------------------------------------------------
# stacking / serialisation


def stack_features(maps, return_kept: bool = False):
    """Standardise every channel over all leading axes, then concatenate channels.

    ``maps`` holds arrays shaped ``(..., d_k)`` with identical leading shapes;
    pass ``(N, H, W, d_k)`` arrays to standardise over a whole dataset.
    Channels with standard deviation below 1e-12 are dropped.
    """
    maps = [np.asarray(m, dtype=np.float64) for m in maps]
    if not maps:
        raise ValueError("nothing to stack")
    lead = maps[0].shape[:-1]
    for m in maps:
        if m.shape[:-1] != lead:
            raise ValueError(f"shape mismatch: {m.shape[:-1]} vs {lead}")
    stacked = np.concatenate(maps, axis=-1)
    flat = stacked.reshape(-1, stacked.shape[-1])
    mu = flat.mean(axis=0)
    sigma = flat.std(axis=0)
    kept = sigma >= 1e-12
    out = (stacked[..., kept] - mu[kept]) / sigma[kept]
    if return_kept:
        return out, kept
    return out


def save_feature_map(fmap, path) -> None:
    """Header of (height, width, dim) as little-endian int32, then row-major float32 values."""
    f = np.asarray(fmap)
    if f.ndim == 2:
        f = f[..., None]
    h, w, d = f.shape
    Path(path).write_bytes(np.array([h, w, d], dtype="<i4").tobytes() + f.astype("<f4").tobytes())


def load_feature_map(path) -> np.ndarray:
    data = Path(path).read_bytes()
    h, w, d = np.frombuffer(data[:12], dtype="<i4")
    return np.frombuffer(data[12:], dtype="<f4").reshape(h, w, d).astype(np.float64)
