"""Superpixels as the unit of labeling: SLIC, pooling and the purity ceiling.

Usage: python demos/02_superpixels.py [output_dir]
"""

import sys
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from idus.imagery import desk_dataset
from idus.superpixel import majority_labels, map_labels, num_segments, pool, slic

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out.mkdir(parents=True, exist_ok=True)
data = desk_dataset()

# %% Segment one image. Smoothing first keeps speckle from fragmenting segments.
px = data.images[0].pixels
seg = slic(ndimage.gaussian_filter(px, 1.0), target_segments=100, compactness=0.1)
print(f"{num_segments(seg)} superpixels, sizes {np.bincount(seg.ravel()).min()}..{np.bincount(seg.ravel()).max()}")

# %% Pooling averages a feature map over each segment; mapping paints values back.
means = pool(px, seg)[:, 0]
flat = map_labels(seg, np.arange(len(means)))
piecewise = means[flat]
print(f"pixel std {px.std():.3f} -> piecewise-constant std {piecewise.std():.3f}")

# %% If each superpixel took its majority ground-truth class, how good could we be?
purity = []
for im, m in zip(data.images, data.masks):
    s = slic(ndimage.gaussian_filter(im.pixels, 1.0), 100, 0.1)
    best = map_labels(s, majority_labels(s, m.labels, data.num_classes))
    purity.append(np.mean(best == m.labels))
print(f"superpixel purity ceiling over the dataset: {np.mean(purity):.3f}")

# %% Boundaries drawn over the image.
edges = (np.diff(seg, axis=0, prepend=seg[:1]) != 0) | (np.diff(seg, axis=1, prepend=seg[:, :1]) != 0)
rgb = np.repeat(np.rint(px * 255).astype(np.uint8)[..., None], 3, axis=2)
rgb[edges] = (255, 64, 0)
PILImage.fromarray(rgb).resize((256, 256), PILImage.NEAREST).save(out / "superpixels.png")
print("wrote", out / "superpixels.png")
