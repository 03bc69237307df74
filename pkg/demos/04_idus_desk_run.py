"""The full alternation on the desk benchmark, watched epoch by epoch.

Texton initialisation, then 5 outer iterations of 20 epochs. After every
pseudo-label update the current labels are scored against ground truth
(ground truth is never used for training). Takes a few minutes.

Usage: python demos/04_idus_desk_run.py [output_dir]
"""

import sys
import time
from pathlib import Path

import numpy as np

from idus.cli import write_outputs
from idus.driver import IdusConfig, run_idus, texton_init
from idus.evaluation import evaluate
from idus.imagery import desk_dataset

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output") / "idus_desk"
data = desk_dataset()
cfg = IdusConfig.desk()
print(cfg.to_text())


def score(labels):
    return evaluate(list(labels), data.masks, cfg.num_classes)[1]["mean_class_accuracy"]


# %% Where the network starts: texton pseudo-labels.
init = texton_init(data, cfg)
print(f"texton pseudo-labels: {score(init.pixel_labels):.3f}")

# %% Train, logging loss each epoch and cluster sizes at each relabeling.
start = time.perf_counter()


def watch(rec):
    if rec["event"] == "epoch" and rec["epoch"] % 5 == 0:
        print(f"epoch {rec['epoch']:3d}  lr {rec['lr']:.0e}  loss {rec['loss']:.4f}")
    elif rec["event"] == "labels":
        print(f"  relabel at {rec['epoch']}: superpixels per cluster {rec['cluster_sizes']}")


result = run_idus(data, cfg, on_event=watch)
print(f"final network segmentation: {score(result.labels):.3f} ({time.perf_counter() - start:.0f}s)")
print(f"final pseudo-labels:        {score(result.state.pixel_labels):.3f}")

# %% Label maps, overlays and the confusion report, as the CLI writes them.
write_outputs(out, data, result.labels, cfg.num_classes, result.history)
print("wrote", out)
agree = np.mean(np.stack(result.state.pixel_labels) == result.labels)
print(f"network agrees with its last pseudo-labels on {agree:.1%} of pixels")
