"""Class-weighted cross-entropy and soft dice over softmax outputs.

Predictions are probabilities shaped ``(N, M, H, W)``; targets are integer
labels ``(N, H, W)`` where ``ignore_label`` marks pixels left out of the loss.
With ``return_grad=True`` each loss also returns its gradient w.r.t. the
pre-softmax logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagery import UNLABELED
from .net import softmax_backward

PROB_CLAMP = 1e-12


@dataclass
class LossConfig:
    class_proportions: np.ndarray
    ignore_label: int = UNLABELED
    dice_eps: float = 1e-6

    def __post_init__(self):
        r = np.asarray(self.class_proportions, dtype=np.float64)
        if r.ndim != 1 or np.any(r <= 0) or not np.all(np.isfinite(r)):
            raise ValueError("class proportions must be finite and positive")
        self.class_proportions = r

    @property
    def num_classes(self) -> int:
        return len(self.class_proportions)

    @property
    def ce_weights(self) -> np.ndarray:
        return 1.0 / self.class_proportions

    @property
    def dice_weights(self) -> np.ndarray:
        return 1.0 / np.sqrt(self.class_proportions)

    @classmethod
    def from_labels(cls, labels, num_classes: int, ignore_label: int = UNLABELED, **kw):
        """Estimate class proportions from (pseudo) labels.

        Absent classes get proportion ``1 / (10 * labeled_pixels)`` before
        renormalisation, which keeps every weight finite.
        """
        flat = np.concatenate([np.asarray(y).ravel() for y in labels])
        flat = flat[flat != ignore_label]
        if flat.size == 0:
            raise ValueError("no labeled pixels to estimate class proportions")
        counts = np.bincount(flat, minlength=num_classes)[:num_classes].astype(np.float64)
        r = counts / flat.size
        r = np.where(counts > 0, r, 1.0 / (10.0 * flat.size))
        return cls(r / r.sum(), ignore_label=ignore_label, **kw)

    @classmethod
    def uniform(cls, num_classes: int, **kw):
        return cls(np.full(num_classes, 1.0 / num_classes), **kw)


def _prepare(probs, target, cfg):
    probs = np.asarray(probs, dtype=np.float64)
    target = np.asarray(target)
    if probs.ndim != 4 or target.shape != probs.shape[:1] + probs.shape[2:]:
        raise ValueError(f"shape mismatch: probs {probs.shape} vs target {target.shape}")
    if probs.shape[1] != cfg.num_classes:
        raise ValueError("class count of predictions and loss config differ")
    valid = target != cfg.ignore_label
    if not valid.any():
        raise ValueError("every pixel is ignored")
    t = np.where(valid, target, 0)
    if t.min() < 0 or t.max() >= cfg.num_classes:
        raise ValueError("target label out of range")
    return probs, t, valid


def weighted_ce(probs, target, cfg: LossConfig, return_grad: bool = False):
    """``-sum w_y log p_y / sum w_y`` over labeled pixels."""
    probs, t, valid = _prepare(probs, target, cfg)
    p_t = np.take_along_axis(probs, t[:, None], axis=1)[:, 0]
    w = cfg.ce_weights[t] * valid
    total_w = w.sum()
    safe = np.maximum(p_t, PROB_CLAMP)
    loss = float(-(w * np.log(safe)).sum() / total_w)
    if not return_grad:
        return loss
    dp_t = np.where(p_t > PROB_CLAMP, -w / (total_w * safe), 0.0)
    dprobs = np.zeros_like(probs)
    np.put_along_axis(dprobs, t[:, None], dp_t[:, None], axis=1)
    return loss, softmax_backward(dprobs, probs)


def dice_loss(probs, target, cfg: LossConfig, return_grad: bool = False):
    """``1 - weighted mean of per-class soft dice``, pixels of the whole batch pooled."""
    probs, t, valid = _prepare(probs, target, cfg)
    m = cfg.num_classes
    eps = cfg.dice_eps
    onehot = (t[:, None] == np.arange(m)[None, :, None, None]) & valid[:, None]
    onehot = onehot.astype(np.float64)
    pv = probs * valid[:, None]
    inter = np.sum(pv * onehot, axis=(0, 2, 3))
    denom = pv.sum(axis=(0, 2, 3)) + onehot.sum(axis=(0, 2, 3)) + eps
    dice = (2 * inter + eps) / denom
    wd = cfg.dice_weights
    loss = float(1.0 - np.sum(wd * dice) / wd.sum())
    if not return_grad:
        return loss
    c = lambda a: a[None, :, None, None]  # noqa: E731
    ddice = (2 * onehot * c(denom) - c(2 * inter + eps)) / c(denom**2)
    dprobs = -c(wd / wd.sum()) * ddice * valid[:, None]
    return loss, softmax_backward(dprobs, probs)


def combined_loss(probs, target, cfg: LossConfig, return_grad: bool = False):
    """Mean of the weighted cross-entropy and dice losses."""
    if not return_grad:
        return 0.5 * (weighted_ce(probs, target, cfg) + dice_loss(probs, target, cfg))
    ce, g_ce = weighted_ce(probs, target, cfg, return_grad=True)
    dl, g_dl = dice_loss(probs, target, cfg, return_grad=True)
    return 0.5 * (ce + dl), 0.5 * (g_ce + g_dl)
