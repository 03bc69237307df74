"""Image containers, grayscale I/O and a seeded synthetic seabed-texture generator."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

UNLABELED = -1
# on-disk value for UNLABELED in indexed label images
UNLABELED_FILE_VALUE = 255

# Seven seabed families, in the order the classes are usually reported.
FAMILIES = (
    "shadow",
    "dark_sand",
    "bright_sand",
    "seagrass",
    "ripple_large",
    "rock",
    "ripple_small",
)
# Families taken first when fewer than seven classes are requested, so small
# datasets still mix flat, rippled and blob textures.
_FAMILY_PRIORITY = (
    "dark_sand",
    "ripple_large",
    "rock",
    "shadow",
    "bright_sand",
    "seagrass",
    "ripple_small",
)


@dataclass
class Image:
    """Single-channel intensity image with values in [0, 1]."""

    pixels: np.ndarray
    id: str = ""

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise ValueError(f"expected a 2-D intensity grid, got shape {px.shape}")
        if px.size == 0:
            raise ValueError("zero-sized image")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("intensities must be finite and lie in [0, 1]")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


@dataclass
class GroundTruthMask:
    """Per-pixel class ids; ``UNLABELED`` marks pixels without ground truth."""

    labels: np.ndarray
    class_names: list[str]

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 2:
            raise ValueError("mask must be 2-D")
        valid = self.labels != UNLABELED
        if not valid.any():
            raise ValueError("mask has no labeled pixels")
        if self.labels[valid].min() < 0 or self.labels[valid].max() >= len(self.class_names):
            raise ValueError("mask class id out of range")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


@dataclass
class Dataset:
    images: list[Image]
    masks: list[GroundTruthMask | None] | None = None
    num_classes: int = 7
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        ids = [im.id for im in self.images]
        if len(set(ids)) != len(ids):
            raise ValueError("image ids must be unique")
        if self.masks is not None:
            if len(self.masks) != len(self.images):
                raise ValueError("one mask (or None) per image expected")
            for im, mk in zip(self.images, self.masks):
                if mk is None:
                    continue
                if mk.labels.shape != im.shape:
                    raise ValueError(f"mask shape mismatch for {im.id}")
                if mk.num_classes > self.num_classes:
                    raise ValueError("mask references more classes than the dataset")

    def __len__(self):
        return len(self.images)

    @property
    def has_masks(self) -> bool:
        return self.masks is not None and all(m is not None for m in self.masks)

    def stack(self) -> np.ndarray:
        """Pixels of all images as an ``(N, H, W)`` array (equal sizes required)."""
        return np.stack([im.pixels for im in self.images])


# ---------------------------------------------------------------------------
# I/O


def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    tokens = []
    pos = 0
    # header: magic, width, height, maxval, each separated by whitespace/comments
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != b"P5":
        raise ValueError(f"{path}: only binary grayscale PGM (P5) is supported")
    if width <= 0 or height <= 0:
        raise ValueError(f"{path}: zero-sized image")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    return raw.reshape(height, width).astype(np.float64) / maxval


def load_image(path) -> Image:
    """Read an 8/16-bit grayscale PGM (P5) or PNG and scale to [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.suffix.lower() == ".pgm":
        pixels = _read_pgm(path)
    else:
        try:
            with PILImage.open(path) as pim:
                mode = pim.mode
                arr = np.array(pim)
        except OSError as exc:
            raise ValueError(f"{path}: unreadable image") from exc
        if mode in ("L", "P"):
            maxval = 255.0
        elif mode in ("I;16", "I;16B", "I;16L", "I"):
            maxval = 65535.0
        else:
            raise ValueError(f"{path}: expected a grayscale image, got mode {mode}")
        if arr.size == 0:
            raise ValueError(f"{path}: zero-sized image")
        pixels = arr.astype(np.float64) / maxval
    return Image(pixels, id=path.stem)


def save_image(img: Image, path, bits: int = 16) -> None:
    """Write a binary PGM; 16-bit by default to keep intensity precision."""
    path = Path(path)
    maxval = 65535 if bits == 16 else 255
    q = np.rint(img.pixels * maxval)
    dtype = ">u2" if bits == 16 else "u1"
    header = f"P5\n{img.width} {img.height}\n{maxval}\n".encode("ascii")
    path.write_bytes(header + q.astype(dtype).tobytes())


def default_palette(num_classes: int) -> np.ndarray:
    """Distinct RGB colours, one per class."""
    base = np.array(
        [
            [0, 0, 0],
            [128, 64, 0],
            [255, 220, 120],
            [0, 160, 0],
            [0, 90, 255],
            [200, 0, 0],
            [0, 220, 220],
            [255, 0, 255],
            [128, 128, 128],
            [255, 255, 255],
        ],
        dtype=np.uint8,
    )
    if num_classes <= len(base):
        return base[:num_classes]
    rng = np.random.default_rng(0)
    extra = rng.integers(0, 256, size=(num_classes - len(base), 3), dtype=np.uint8)
    return np.concatenate([base, extra])


def save_label_image(labels, path, palette=None) -> None:
    """Write a class-id grid as an indexed (palette) PNG.

    ``UNLABELED`` pixels are stored as index 255.
    """
    labels = np.asarray(labels)
    if palette is None:
        palette = default_palette(int(labels.max()) + 1 if labels.size else 1)
    palette = np.asarray(palette, dtype=np.uint8)
    valid = labels != UNLABELED
    if valid.any() and (labels[valid].min() < 0 or labels[valid].max() >= len(palette)):
        raise ValueError("label id outside palette")
    if len(palette) > 255:
        raise ValueError("at most 255 classes fit an indexed PNG")
    idx = np.where(valid, labels, UNLABELED_FILE_VALUE).astype(np.uint8)
    pim = PILImage.fromarray(idx, mode="P")
    flat = np.zeros((256, 3), dtype=np.uint8)
    flat[: len(palette)] = palette
    pim.putpalette(flat.ravel().tolist())
    pim.save(Path(path), format="PNG", optimize=False)


def load_label_image(path) -> np.ndarray:
    """Inverse of :func:`save_label_image`: palette indices, 255 -> ``UNLABELED``."""
    with PILImage.open(Path(path)) as pim:
        if pim.mode not in ("P", "L"):
            raise ValueError(f"{path}: not an indexed label image")
        idx = np.array(pim).astype(np.int64)
    idx[idx == UNLABELED_FILE_VALUE] = UNLABELED
    return idx


def read_manifest(path) -> list[tuple[Path, Path | None]]:
    """Parse a dataset manifest: one ``image_path [mask_path]`` pair per line.

    Relative paths resolve against the manifest's directory; ``-`` means no mask.
    """
    path = Path(path)
    root = path.parent
    pairs = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        img = root / parts[0]
        mask = None
        if len(parts) > 1 and parts[1] != "-":
            mask = root / parts[1]
        pairs.append((img, mask))
    return pairs


def write_manifest(path, pairs) -> None:
    path = Path(path)
    lines = []
    for img, mask in pairs:
        img = Path(img)
        rel_img = img.relative_to(path.parent) if img.is_absolute() else img
        if mask is None:
            rel_mask = "-"
        else:
            mask = Path(mask)
            rel_mask = mask.relative_to(path.parent) if mask.is_absolute() else mask
        lines.append(f"{rel_img} {rel_mask}")
    path.write_text("\n".join(lines) + "\n")


def load_dataset(manifest_path, class_names=None) -> Dataset:
    """Load every image (and mask, when listed) named by a manifest."""
    pairs = read_manifest(manifest_path)
    if not pairs:
        raise ValueError(f"{manifest_path}: empty manifest")
    images, masks = [], []
    for img_path, mask_path in pairs:
        images.append(load_image(img_path))
        masks.append(None if mask_path is None else load_label_image(mask_path))
    present = [m for m in masks if m is not None]
    if class_names is None:
        n = max((int(m.max()) + 1 for m in present), default=1)
        class_names = [f"class{k}" for k in range(n)]
    gt = [None if m is None else GroundTruthMask(m, list(class_names)) for m in masks]
    return Dataset(
        images,
        masks=gt if present else None,
        num_classes=len(class_names),
        class_names=list(class_names),
    )


# ---------------------------------------------------------------------------
# resampling


def downsample(img: Image, factor: int) -> Image:
    """Block-mean downsampling by an integer factor that divides both sides."""
    if factor < 1 or int(factor) != factor:
        raise ValueError("factor must be a positive integer")
    h, w = img.shape
    if h % factor or w % factor:
        raise ValueError(f"factor {factor} does not divide image size {h}x{w}")
    blocks = img.pixels.reshape(h // factor, factor, w // factor, factor)
    out = blocks.mean(axis=(1, 3))
    return Image(np.clip(out, 0.0, 1.0), id=img.id)


# ---------------------------------------------------------------------------
# synthetic seabed textures


@dataclass
class SyntheticSpec:
    """Parameters of the synthetic seabed corpus.

    ``families`` overrides the automatic choice of texture families; when it
    is ``None`` the first ``num_classes`` entries of a fixed diversity order
    are used, reported in the canonical seabed order.
    """

    num_classes: int = 7
    count: int = 10
    size: int = 64
    regions: tuple[int, int] = (3, 6)
    looks: float = 6.0
    families: tuple[str, ...] | None = None
    unlabeled_border: int = 0

    def validate(self):
        if not 2 <= self.num_classes <= 7:
            raise ValueError("num_classes must lie in [2, 7]")
        if self.size < 32:
            raise ValueError("size must be at least 32")
        if self.count < 1:
            raise ValueError("count must be at least 1")
        lo, hi = self.regions
        if lo < 1 or hi < lo:
            raise ValueError("invalid region count range")
        if self.looks <= 0:
            raise ValueError("looks must be positive")
        if self.families is not None:
            if len(self.families) != self.num_classes:
                raise ValueError("families must list exactly num_classes entries")
            unknown = set(self.families) - set(FAMILIES)
            if unknown or len(set(self.families)) != len(self.families):
                raise ValueError(f"invalid families {self.families}")
        if self.unlabeled_border < 0:
            raise ValueError("unlabeled_border must be non-negative")

    def class_families(self) -> tuple[str, ...]:
        if self.families is not None:
            return tuple(self.families)
        chosen = set(_FAMILY_PRIORITY[: self.num_classes])
        return tuple(f for f in FAMILIES if f in chosen)


def _smooth_noise(rng, shape, sigma):
    z = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return z / (z.std() + 1e-12)


def _texture(family: str, shape, rng) -> np.ndarray:
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    if family == "shadow":
        return np.full(shape, 0.07)
    if family == "dark_sand":
        return np.full(shape, 0.28)
    if family == "bright_sand":
        return np.full(shape, 0.62)
    if family == "seagrass":
        # patchy canopy: bright tufts over a mid-dark bed
        tufts = _smooth_noise(rng, shape, 1.2)
        return np.clip(0.33 + 0.12 * tufts, 0.02, 0.95)
    if family in ("ripple_large", "ripple_small"):
        wavelength = 12.0 if family == "ripple_large" else 5.0
        theta = rng.uniform(0.0, np.pi)
        phase = rng.uniform(0.0, 2 * np.pi)
        proj = xx * np.cos(theta) + yy * np.sin(theta)
        return 0.42 + 0.3 * np.sin(2 * np.pi * proj / wavelength + phase)
    if family == "rock":
        blobs = _smooth_noise(rng, shape, 2.5)
        return np.clip(0.45 + 0.35 * np.tanh(1.5 * blobs), 0.02, 0.98)
    raise ValueError(f"unknown texture family {family!r}")


def _voronoi_labels(rng, size, num_regions, num_classes):
    sites = rng.uniform(0, size, size=(num_regions, 2))
    yy, xx = np.mgrid[0:size, 0:size]
    d2 = (yy[..., None] - sites[:, 0]) ** 2 + (xx[..., None] - sites[:, 1]) ** 2
    region = np.argmin(d2, axis=-1)
    classes = rng.integers(0, num_classes, size=num_regions)
    return region, classes


def generate_synthetic_dataset(spec: SyntheticSpec, seed: int) -> Dataset:
    """Voronoi mosaics of seabed textures with multiplicative speckle.

    Each image is a Voronoi partition; every cell is filled by one texture
    family and the whole image is multiplied by unit-mean gamma speckle
    (``looks`` controls its strength). Masks are exact. The output is a pure
    function of ``(spec, seed)``.
    """
    spec.validate()
    families = spec.class_families()
    rng = np.random.default_rng(seed)
    images, masks = [], []
    lo, hi = spec.regions
    for n in range(spec.count):
        num_regions = int(rng.integers(lo, hi + 1))
        region, classes = _voronoi_labels(rng, spec.size, num_regions, spec.num_classes)
        # round-robin fallback keeps every class present across the dataset
        if n < spec.num_classes and n not in classes:
            classes[0] = n
        mask = classes[region]
        clean = np.zeros((spec.size, spec.size))
        for r in range(num_regions):
            sel = region == r
            if not sel.any():
                continue
            tex = _texture(families[classes[r]], clean.shape, rng)
            clean[sel] = tex[sel]
        speckle = rng.gamma(spec.looks, 1.0 / spec.looks, size=clean.shape)
        pixels = np.clip(clean * speckle, 0.0, 1.0)
        if spec.unlabeled_border:
            edge = ndimage.morphological_gradient(mask, size=2 * spec.unlabeled_border + 1) > 0
            mask = np.where(edge, UNLABELED, mask)
        images.append(Image(pixels, id=f"synth_{n:04d}"))
        masks.append(GroundTruthMask(mask, list(families)))
    return Dataset(images, masks=masks, num_classes=spec.num_classes, class_names=list(families))


DESK_SPEC = SyntheticSpec(num_classes=3, count=20, size=64)
DESK_SEED = 0


def desk_dataset() -> Dataset:
    """The pinned small benchmark: 20 images of 64x64 pixels, 3 texture classes, seed 0."""
    return generate_synthetic_dataset(DESK_SPEC, DESK_SEED)
