"""Scoring unsupervised labels: why the confusion matrix needs a permutation.

Usage: python demos/05_permuted_confusion.py
"""

import numpy as np

from idus.evaluation import best_assignment, confusion, exhaustive_assignment, lsa_assignment, metrics

rng = np.random.default_rng(0)

# %% A perfect segmentation with rotated cluster ids scores zero naively.
truth = rng.integers(0, 3, size=(32, 32))
pred = np.array([2, 0, 1])[truth]
cm = confusion(pred, truth, 3)
print("raw counts:\n", cm.counts)
print(f"naive overall accuracy {np.trace(cm.counts) / cm.total:.3f}")

# %% The best column permutation restores the diagonal.
perm, aligned = best_assignment(cm)
print("permutation", perm, "->", metrics(aligned)["overall_accuracy"])

# %% Scores are row proportions, so a small class counts as much as a large one.
counts = np.array([[100, 90], [2, 0]])
print("by proportions:", best_assignment(counts / counts.sum(axis=1, keepdims=True))[0],
      " by counts:", best_assignment(counts.astype(float))[0])

# %% Seven classes means 5040 permutations; linear assignment finds the same optimum.
score = rng.random((7, 7))
print(exhaustive_assignment(score), lsa_assignment(score))
