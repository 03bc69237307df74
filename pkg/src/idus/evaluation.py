"""Confusion matrices for unsupervised segmentations, with the column
permutation that best aligns predicted clusters to ground-truth classes."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .imagery import UNLABELED

EXHAUSTIVE_LIMIT = 8


@dataclass
class ConfusionMatrix:
    """Rows are ground-truth classes, columns predicted clusters."""

    counts: np.ndarray
    class_names: list[str] = field(default_factory=list)
    permutation: np.ndarray | None = None

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if not self.class_names:
            self.class_names = [f"class{k}" for k in range(self.counts.shape[0])]

    @property
    def size(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def row_normalized(self) -> np.ndarray:
        rows = self.support.astype(np.float64)
        return np.divide(self.counts, rows[:, None], out=np.zeros(self.counts.shape),
                         where=rows[:, None] > 0)


def confusion(pred, truth, num_classes: int, class_names=None) -> ConfusionMatrix:
    """Accumulate ``counts[g, p]`` over every labeled pixel of every image.

    ``pred`` and ``truth`` are sequences of label grids (or single grids);
    ground-truth pixels equal to ``UNLABELED`` are skipped.
    """
    if isinstance(pred, np.ndarray) and pred.ndim == 2:
        pred, truth = [pred], [truth]
    if len(pred) != len(truth):
        raise ValueError("prediction and ground-truth lists differ in length")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    for p, g in zip(pred, truth):
        p = np.asarray(p)
        g = np.asarray(getattr(g, "labels", g))
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
        sel = g != UNLABELED
        gp, pp = g[sel], p[sel]
        if gp.size and (gp.min() < 0 or gp.max() >= num_classes):
            raise ValueError("ground-truth label out of range")
        if pp.size and (pp.min() < 0 or pp.max() >= num_classes):
            raise ValueError(
                f"predicted label out of range: evaluation needs exactly {num_classes} clusters"
            )
        np.add.at(counts, (gp, pp), 1)
    return ConfusionMatrix(counts, list(class_names or []))


def _score_matrix(cm, use_counts):
    if isinstance(cm, ConfusionMatrix):
        return cm.counts.astype(np.float64) if use_counts else cm.row_normalized
    return np.asarray(cm, dtype=np.float64)


def exhaustive_assignment(score) -> tuple[np.ndarray, float]:
    """Column permutation maximising ``sum_i score[i, perm[i]]`` by trying all of them.

    Permutations are visited in lexicographic order and only a strictly
    better objective replaces the incumbent, so ties resolve to the
    lexicographically smallest permutation.
    """
    score = np.asarray(score, dtype=np.float64)
    m = score.shape[0]
    perms = np.array(list(itertools.permutations(range(m))), dtype=np.int64)
    rows = np.arange(m)
    values = np.zeros(len(perms))
    for i in rows:
        values = values + score[i, perms[:, i]]
    best = int(np.argmax(values))  # first maximum = lexicographically smallest
    return perms[best], float(values[best])


def lsa_assignment(score) -> tuple[np.ndarray, float]:
    """Same objective solved as a linear assignment problem."""
    score = np.asarray(score, dtype=np.float64)
    rows, cols = linear_sum_assignment(score, maximize=True)
    perm = cols[np.argsort(rows)]
    value = 0.0
    for i in range(len(perm)):
        value += score[i, perm[i]]
    return perm, float(value)


def best_assignment(cm, use_counts: bool = False):
    """Reorder predicted-cluster columns so the diagonal sum is maximal.

    Row-normalised proportions are scored by default (``use_counts`` scores
    raw counts). Returns ``(perm, reordered)`` where column ``i`` of the
    reordered matrix is column ``perm[i]`` of the input.
    """
    score = _score_matrix(cm, use_counts)
    if score.ndim != 2 or score.shape[0] != score.shape[1]:
        raise ValueError("assignment needs a square matrix")
    if score.shape[0] <= EXHAUSTIVE_LIMIT:
        perm, _ = exhaustive_assignment(score)
    else:
        perm, _ = lsa_assignment(score)
    if isinstance(cm, ConfusionMatrix):
        reordered = ConfusionMatrix(cm.counts[:, perm], list(cm.class_names), perm)
    else:
        reordered = np.asarray(cm)[:, perm]
    return perm, reordered


def relabel_prediction(pred, perm) -> np.ndarray:
    """Map raw cluster ids onto class ids using an assignment permutation."""
    inverse = np.empty_like(np.asarray(perm))
    inverse[np.asarray(perm)] = np.arange(len(perm))
    return inverse[np.asarray(pred)]


def metrics(cm: ConfusionMatrix) -> dict:
    """Per-class accuracy (diagonal of the row-normalised matrix), its mean over
    classes with support, and overall pixel accuracy."""
    if cm.total == 0:
        raise ValueError("no evaluated pixels")
    per_class = np.diag(cm.row_normalized).copy()
    present = cm.support > 0
    return {
        "per_class_accuracy": per_class,
        "mean_class_accuracy": float(per_class[present].mean()),
        "overall_accuracy": float(np.trace(cm.counts) / cm.total),
        "evaluated_pixels": cm.total,
    }


def evaluate(pred, truth, num_classes: int, class_names=None, use_counts: bool = False):
    """Confusion -> best assignment -> metrics in one call."""
    cm = confusion(pred, truth, num_classes, class_names)
    _, assigned = best_assignment(cm, use_counts=use_counts)
    return assigned, metrics(assigned)


def format_report(cm: ConfusionMatrix, summary: dict) -> str:
    names = cm.class_names
    width = max(8, max(len(n) for n in names) + 1)
    prop = cm.row_normalized
    perm = cm.permutation if cm.permutation is not None else np.arange(cm.size)
    lines = ["Confusion matrix (rows: ground truth, columns: assigned clusters, row proportions)"]
    lines.append("".ljust(width) + "".join(f"c{int(p)}".rjust(7) for p in perm))
    empty = False
    for i, name in enumerate(names):
        marker = ""
        if cm.support[i] == 0:
            marker = " *"
            empty = True
        lines.append(name.ljust(width) + "".join(f"{v:7.3f}" for v in prop[i]) + marker)
    lines.append("")
    for name, acc in zip(names, summary["per_class_accuracy"]):
        lines.append(f"accuracy[{name}] = {acc:.3f}")
    lines.append(f"mean_class_accuracy = {summary['mean_class_accuracy']:.3f}")
    lines.append(f"overall_accuracy = {summary['overall_accuracy']:.3f}")
    lines.append(f"evaluated_pixels = {summary['evaluated_pixels']}")
    if empty:
        lines.append("* class absent from the ground truth")
    return "\n".join(lines) + "\n"


def render_report(cm: ConfusionMatrix, summary: dict, path) -> tuple[Path, Path]:
    """Write ``<path>.txt`` (readable table) and ``<path>.matrix`` (M, then
    the M x M row-normalised matrix row-major, 3 decimals)."""
    path = Path(path)
    text_path = path.with_suffix(".txt")
    matrix_path = path.with_suffix(".matrix")
    text_path.write_text(format_report(cm, summary), encoding="utf-8")
    rows = [f"{cm.size}"]
    rows += [" ".join(f"{v:.3f}" for v in row) for row in cm.row_normalized]
    matrix_path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return text_path, matrix_path


def read_matrix(path) -> np.ndarray:
    tokens = Path(path).read_text(encoding="utf-8").split()
    m = int(tokens[0])
    return np.array([float(v) for v in tokens[1 : 1 + m * m]]).reshape(m, m)
