"""Hand-crafted texture features with shared superpixel clustering.

Two recipes on the desk benchmark: GLCM/Haralick statistics, and Sobel + HOG
+ uniform LBP. Usage: python demos/03_classical_baselines.py
"""

import time

from idus.driver import run_baseline
from idus.evaluation import evaluate, format_report
from idus.imagery import desk_dataset

data = desk_dataset()

# %% Each recipe: window features -> SLIC on the features -> one k-means for all images.
for recipe in ("glcm", "zare"):
    start = time.perf_counter()
    result = run_baseline(data, recipe, data.num_classes, superpixels=100, seed=0, restarts=100)
    cm, summary = evaluate(result.labels, data.masks, data.num_classes, data.class_names)
    print(f"== {recipe}: {result.feature_dim} features, {time.perf_counter() - start:.1f}s")
    print(format_report(cm, summary))

# %% Cluster ids carry no meaning; the report above already reorders columns by
# the permutation that best matches ground truth.
