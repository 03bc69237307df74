"""Iterative deep unsupervised segmentation: alternate network training on
superpixel pseudo-labels with re-segmentation and re-clustering.

Also hosts the classical four-step co-segmentation baseline (features ->
SLIC + pooling -> shared k-means -> label mapping).
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import features as feats
from .clustering import cluster_superpixels, kmeans
from .imagery import Dataset
from .loss import LossConfig, combined_loss
from .net import (
    AdamState,
    DivergenceError,
    NetTopology,
    NetworkParams,
    adam_step,
    backward,
    forward,
    init_params,
    load_tensors,
    lr_schedule,
    net_from_tensors,
    net_tensors,
    predict,
    save_tensors,
)
from .superpixel import majority_labels, map_labels, pool, slic

log = logging.getLogger(__name__)


@dataclass
class IdusConfig:
    """Run configuration. ``epochs_total`` is ``outer_iterations * update_labels_every``."""

    num_classes: int = 7
    update_labels_every: int = 200
    update_boundaries_every: int = 200
    outer_iterations: int = 5
    batch_size: int = 4
    superpixels: int = 100
    compactness: float = 0.1
    slic_iters: int = 10
    slic_smoothing: float = 1.0
    base_lr: float = 1e-4
    lr_step: int = 50
    lr_gamma: float = 0.1
    weight_decay: float = 1e-9
    cluster_restarts: int = 10
    textons_per_image: int = 32
    normalize_features: bool = False
    encoder_widths: tuple = (16, 32, 64, 128)
    decoder_widths: tuple = (64, 32, 16, 16)
    init_seed: int = 0
    cluster_seed: int = 1
    net_seed: int = 2
    checkpoint_every: int = 0

    def __post_init__(self):
        self.encoder_widths = tuple(int(v) for v in self.encoder_widths)
        self.decoder_widths = tuple(int(v) for v in self.decoder_widths)
        if self.update_labels_every < 1 or self.update_boundaries_every < 1:
            raise ValueError("update intervals must be positive")
        if self.outer_iterations < 1:
            raise ValueError("outer_iterations must be positive")
        if self.num_classes < 1 or self.batch_size < 1 or self.superpixels < 1:
            raise ValueError("num_classes, batch_size and superpixels must be positive")

    @property
    def epochs_total(self) -> int:
        return self.outer_iterations * self.update_labels_every

    def topology(self) -> NetTopology:
        return NetTopology(1, self.encoder_widths, self.decoder_widths, self.num_classes)

    @classmethod
    def full_scale(cls, **kw) -> IdusConfig:
        """Full-scale schedule: 5 x 200 epochs, batch 15, 7 classes."""
        base = dict(num_classes=7, update_labels_every=200, update_boundaries_every=200,
                    outer_iterations=5, batch_size=15, base_lr=1e-4)
        base.update(kw)
        return cls(**base)

    @classmethod
    def desk(cls, **kw) -> IdusConfig:
        """Desk-scale schedule: 5 x 20 epochs on small images.

        Twenty epochs of a 20-image set give ~100 optimiser steps per outer
        iteration, so the base learning rate is raised to 1e-3.
        """
        base = dict(num_classes=3, update_labels_every=20, update_boundaries_every=20,
                    outer_iterations=5, batch_size=4, superpixels=100, base_lr=1e-3)
        base.update(kw)
        return cls(**base)

    # plain-text key = value persistence
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, **overrides) -> IdusConfig:
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value'")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in kinds:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            values[key] = _parse_value(kinds[key], raw)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def from_file(cls, path, **overrides) -> IdusConfig:
        return cls.from_text(Path(path).read_text(), **overrides)


def _parse_value(kind, raw):
    kind = str(kind)
    if kind == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind == "tuple":
        return tuple(int(v) for v in raw.split(",") if v.strip())
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def epoch_plan(cfg: IdusConfig, epoch: int):
    """Learning rate and due updates (in execution order) for a 1-based epoch."""
    lr = lr_schedule((epoch - 1) % cfg.update_labels_every, cfg.base_lr, cfg.lr_step, cfg.lr_gamma)
    updates = []
    if epoch % cfg.update_boundaries_every == 0:
        updates.append("boundaries")
    if epoch % cfg.update_labels_every == 0:
        updates.append("labels")
    return lr, updates


def schedule(cfg: IdusConfig):
    """Dry-run of the epoch loop: yields ``(event, epoch, lr)`` tuples.

    ``event`` is ``"train"`` once per epoch, followed when due by
    ``"boundaries"`` and then ``"labels"``. The learning rate restarts at
    ``base_lr`` at the beginning of every outer iteration.
    """
    for epoch in range(1, cfg.epochs_total + 1):
        lr, updates = epoch_plan(cfg, epoch)
        yield "train", epoch, lr
        for u in updates:
            yield u, epoch, lr


# ---------------------------------------------------------------------------
# pseudo-label memory


@dataclass
class PseudoLabelState:
    """Per image: superpixel ids, one label per superpixel and the pixel labels they imply."""

    segments: list[np.ndarray]
    superpixel_labels: list[np.ndarray]
    pixel_labels: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.pixel_labels:
            self.pixel_labels = [map_labels(s, r) for s, r in zip(self.segments, self.superpixel_labels)]

    def __len__(self):
        return len(self.segments)

    def is_consistent(self, num_classes: int | None = None) -> bool:
        for s, r, y in zip(self.segments, self.superpixel_labels, self.pixel_labels):
            if not np.array_equal(map_labels(s, r), y):
                return False
            if num_classes is not None and (r.min() < 0 or r.max() >= num_classes):
                return False
        return True

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for n, (s, r) in enumerate(zip(self.segments, self.superpixel_labels)):
            out[f"state/segments/{n}"] = s.astype(np.float64)
            out[f"state/labels/{n}"] = r.astype(np.float64)
        return out

    @classmethod
    def from_tensors(cls, t: dict) -> PseudoLabelState:
        n = sum(1 for k in t if k.startswith("state/segments/"))
        segs = [t[f"state/segments/{i}"].astype(np.int64) for i in range(n)]
        labs = [t[f"state/labels/{i}"].astype(np.int64) for i in range(n)]
        return cls(segs, labs)


# ---------------------------------------------------------------------------
# texton initialisation


def filter_bank(px, scales=(1.0, 2.0, 3.0), orientations=6, energy_sigma=4.0) -> np.ndarray:
    """Rotation-invariant local filter energies ``(H, W, 1 + 5 * len(scales))``.

    Channel 0 is the Gaussian-smoothed intensity. Per scale: the maximum and
    minimum over orientations of the rectified first-derivative (edge) and
    second-derivative (bar) Gaussian responses, and the rectified Laplacian
    of Gaussian; each is averaged with a Gaussian of width ``energy_sigma``.
    """
    px = np.asarray(px, dtype=np.float64)
    smooth = lambda a, s: ndimage.gaussian_filter(a, s, mode="reflect")  # noqa: E731
    out = [smooth(px, 2.0)]
    for s in scales:
        gx = ndimage.gaussian_filter(px, s, order=(0, 1), mode="reflect")
        gy = ndimage.gaussian_filter(px, s, order=(1, 0), mode="reflect")
        gxx = ndimage.gaussian_filter(px, s, order=(0, 2), mode="reflect")
        gyy = ndimage.gaussian_filter(px, s, order=(2, 0), mode="reflect")
        gxy = ndimage.gaussian_filter(px, s, order=(1, 1), mode="reflect")
        edge, bar = [], []
        for k in range(orientations):
            theta = np.pi * k / orientations
            c, si = np.cos(theta), np.sin(theta)
            edge.append(smooth(np.abs(c * gx + si * gy), energy_sigma))
            bar.append(smooth(np.abs(c * c * gxx + 2 * c * si * gxy + si * si * gyy), energy_sigma))
        edge, bar = np.stack(edge), np.stack(bar)
        out += [edge.max(axis=0), bar.max(axis=0), edge.min(axis=0), bar.min(axis=0)]
        out.append(smooth(np.abs(ndimage.gaussian_laplace(px, s, mode="reflect")), energy_sigma))
    return np.stack(out, axis=-1)


def _slic_input(px, sigma):
    return ndimage.gaussian_filter(px, sigma, mode="reflect") if sigma > 0 else px


def texton_init(dataset: Dataset, cfg: IdusConfig) -> PseudoLabelState:
    """Initial superpixels and pseudo-labels.

    1. filter-bank energies per pixel, standardised over the dataset;
    2. per image, k-means of the pixels into ``textons_per_image`` textons;
    3. k-means of all images' textons into ``num_classes`` global clusters;
    4. SLIC on intensity, each superpixel labeled by the majority global
       cluster of its pixels.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    images = [im.pixels for im in dataset.images]
    bank = np.stack([filter_bank(px) for px in images])
    mu = bank.reshape(-1, bank.shape[-1]).mean(axis=0)
    sd = bank.reshape(-1, bank.shape[-1]).std(axis=0)
    keep = sd > 1e-12
    if not keep.any():
        raise ValueError("degenerate texton features: every channel is constant")
    bank = (bank[..., keep] - mu[keep]) / sd[keep]

    seeds = np.random.SeedSequence(cfg.init_seed).spawn(len(images) + 1)
    textons, pixel_texton, offsets = [], [], [0]
    for n, fmap in enumerate(bank):
        rows = fmap.reshape(-1, fmap.shape[-1])
        t = min(cfg.textons_per_image, len(np.unique(rows, axis=0)))
        model = kmeans(rows, t, seed=seeds[n], restarts=1, max_iters=100)
        textons.append(model.centroids)
        pixel_texton.append(model.assignments + offsets[-1])
        offsets.append(offsets[-1] + t)
    all_textons = np.concatenate(textons)
    m = min(cfg.num_classes, len(all_textons))
    global_model = kmeans(all_textons, m, seed=seeds[-1], restarts=cfg.cluster_restarts)
    segments, labels = [], []
    for px, pt in zip(images, pixel_texton):
        cluster = global_model.assignments[pt].reshape(px.shape)
        seg = slic(_slic_input(px, cfg.slic_smoothing), cfg.superpixels, cfg.compactness, cfg.slic_iters)
        segments.append(seg)
        labels.append(majority_labels(seg, cluster, cfg.num_classes))
    return PseudoLabelState(segments, labels)


# ---------------------------------------------------------------------------
# alternation steps


def train_epoch(net: NetworkParams, adam: AdamState, state: PseudoLabelState, images,
                cfg: IdusConfig, epoch: int, loss_cfg: LossConfig | None = None,
                lr: float | None = None) -> float:
    """One pass over the training images in seeded random order.

    Returns the mean minibatch loss. ``epoch`` is 1-based; the learning rate
    follows :func:`lr_schedule` within the current outer iteration unless
    ``lr`` is given.
    """
    images = np.asarray(images, dtype=np.float64)
    targets = np.stack(state.pixel_labels)
    if loss_cfg is None:
        loss_cfg = LossConfig.from_labels(state.pixel_labels, cfg.num_classes)
    if lr is None:
        lr = lr_schedule((epoch - 1) % cfg.update_labels_every, cfg.base_lr, cfg.lr_step, cfg.lr_gamma)
    order = np.random.default_rng([cfg.net_seed, epoch]).permutation(len(images))
    losses = []
    for start in range(0, len(order), cfg.batch_size):
        idx = order[start : start + cfg.batch_size]
        probs, cache = forward(net, images[idx], training=True)
        loss, dlogits = combined_loss(probs, targets[idx], loss_cfg, return_grad=True)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss at epoch {epoch}")
        grads = backward(net, cache, dlogits)
        adam_step(net.params, grads, adam, lr=lr)
        losses.append(loss)
    return float(np.mean(losses))


def update_boundaries(net: NetworkParams, state: PseudoLabelState, images,
                      cfg: IdusConfig) -> PseudoLabelState:
    """Re-run SLIC on softmax outputs stacked with intensity; each new
    superpixel inherits the majority of the previous pixel labels inside it."""
    images = np.asarray(images, dtype=np.float64)
    probs = predict(net, images)
    segments, labels = [], []
    for px, p, y in zip(images, probs, state.pixel_labels):
        fmap = np.concatenate([np.moveaxis(p, 0, -1), _slic_input(px, cfg.slic_smoothing)[..., None]], axis=-1)
        seg = slic(fmap, cfg.superpixels, cfg.compactness, cfg.slic_iters)
        segments.append(seg)
        labels.append(majority_labels(seg, y, cfg.num_classes))
    return PseudoLabelState(segments, labels)


def update_pseudo_labels(net: NetworkParams, state: PseudoLabelState, images, cfg: IdusConfig,
                         seed=None, probs=None):
    """Pool inference softmax maps over the current superpixels and re-cluster
    all superpixels of all images into ``num_classes`` groups.

    Returns the new state and the fitted k-means model.
    """
    if probs is None:
        probs = predict(net, np.asarray(images, dtype=np.float64))
    pooled = [pool(np.moveaxis(p, 0, -1), s) for p, s in zip(probs, state.segments)]
    m = min(cfg.num_classes, sum(len(z) for z in pooled))
    labels, model = cluster_superpixels(
        pooled, m, seed=seed, restarts=cfg.cluster_restarts, normalize=cfg.normalize_features
    )
    return PseudoLabelState(list(state.segments), labels), model


# ---------------------------------------------------------------------------
# full loop


@dataclass
class IdusResult:
    net: NetworkParams
    labels: np.ndarray
    state: PseudoLabelState
    history: list[dict]
    epoch: int
    completed: bool = True


def save_run_checkpoint(path, net, adam, state, epoch, history) -> Path:
    path = Path(path)
    tensors = net_tensors(net, adam)
    tensors.update(state.tensors())
    tensors["run/epoch"] = np.array([epoch], dtype=float)
    save_tensors(path, tensors)
    path.with_suffix(".history.json").write_text(json.dumps(history))
    return path


def load_run_checkpoint(path):
    path = Path(path)
    tensors = load_tensors(path)
    net, adam = net_from_tensors(tensors)
    state = PseudoLabelState.from_tensors(tensors)
    epoch = int(tensors["run/epoch"][0])
    hist_path = path.with_suffix(".history.json")
    history = json.loads(hist_path.read_text()) if hist_path.exists() else []
    return net, adam, state, epoch, history


def run_idus(dataset: Dataset, cfg: IdusConfig, checkpoint_dir=None, resume=None,
             stop_after: int | None = None, on_event=None) -> IdusResult:
    """Texton initialisation followed by ``epochs_total`` training epochs, with
    boundary updates every ``update_boundaries_every`` epochs and pseudo-label
    updates every ``update_labels_every`` epochs (boundaries first when both
    are due). The final segmentation is the argmax of the inference softmax.

    ``stop_after`` ends the run early after that epoch (leaving a checkpoint
    when ``checkpoint_dir`` is set); ``resume`` continues from such a file.
    """
    images = dataset.stack()
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    def emit(record):
        history.append(record)
        if on_event is not None:
            on_event(record)

    if resume is not None:
        net, adam, state, start_epoch, history = load_run_checkpoint(resume)
    else:
        history = []
        net = init_params(cfg.topology(), seed=cfg.net_seed)
        adam = AdamState(lr=cfg.base_lr, weight_decay=cfg.weight_decay)
        state = texton_init(dataset, cfg)
        start_epoch = 0
        emit({"event": "init", "epoch": 0,
              "cluster_sizes": _cluster_sizes(state, cfg.num_classes)})
    loss_cfg = LossConfig.from_labels(state.pixel_labels, cfg.num_classes)

    epoch = start_epoch
    try:
        for epoch in range(start_epoch + 1, cfg.epochs_total + 1):
            lr, updates = epoch_plan(cfg, epoch)
            loss = train_epoch(net, adam, state, images, cfg, epoch, loss_cfg, lr=lr)
            emit({"event": "epoch", "epoch": epoch, "lr": lr, "loss": loss})
            log.info("epoch %d lr %.1e loss %.5f", epoch, lr, loss)
            for update in updates:
                if update == "boundaries":
                    state = update_boundaries(net, state, images, cfg)
                    emit({"event": "boundaries", "epoch": epoch,
                          "segments": [int(s.max()) + 1 for s in state.segments]})
                else:
                    seed = np.random.SeedSequence([cfg.cluster_seed, epoch])
                    state, _ = update_pseudo_labels(net, state, images, cfg, seed=seed)
                    emit({"event": "labels", "epoch": epoch,
                          "cluster_sizes": _cluster_sizes(state, cfg.num_classes)})
                loss_cfg = LossConfig.from_labels(state.pixel_labels, cfg.num_classes)
            if ckpt_dir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                save_run_checkpoint(ckpt_dir / f"epoch{epoch:05d}.ckpt", net, adam, state, epoch, history)
            if stop_after is not None and epoch >= stop_after and epoch < cfg.epochs_total:
                if ckpt_dir is not None:
                    save_run_checkpoint(ckpt_dir / "last.ckpt", net, adam, state, epoch, history)
                return IdusResult(net, predict(net, images).argmax(axis=1), state, history, epoch,
                                  completed=False)
    except DivergenceError as exc:
        if ckpt_dir is not None:
            exc.checkpoint = save_run_checkpoint(
                ckpt_dir / "diverged.ckpt", net, adam, state, epoch - 1, history
            )
        raise

    final = predict(net, images).argmax(axis=1)
    if ckpt_dir is not None:
        save_run_checkpoint(ckpt_dir / "final.ckpt", net, adam, state, cfg.epochs_total, history)
    return IdusResult(net, final, state, history, cfg.epochs_total)


def _cluster_sizes(state, num_classes):
    flat = np.concatenate([r for r in state.superpixel_labels])
    return np.bincount(flat, minlength=num_classes).tolist()


# ---------------------------------------------------------------------------
# baseline


RECIPES = ("glcm", "zare")


@dataclass
class BaselineResult:
    labels: list[np.ndarray]
    segments: list[np.ndarray]
    feature_dim: int
    kept_dim: int
    inertia: float


def baseline_features(images, recipe: str, window=feats.WindowSpec(), glcm_spec=feats.GlcmSpec()):
    """Per-image raw descriptor stack ``(N, H, W, d)`` for a recipe."""
    if recipe == "glcm":
        maps = [np.stack([feats.glcm_haralick(px, window, glcm_spec) for px in images])]
    elif recipe in ("zare", "sobel+hog+lbp"):
        maps = [
            np.stack([feats.sobel_features(px, window) for px in images]),
            np.stack([feats.hog_features(px, window) for px in images]),
            np.stack([feats.lbp_features(px, window) for px in images]),
        ]
    else:
        raise ValueError(f"unknown recipe {recipe!r}; expected one of {RECIPES}")
    return maps


def run_baseline(dataset: Dataset, recipe: str, num_classes: int, superpixels: int = 100,
                 seed=0, restarts: int = 100, window=feats.WindowSpec(),
                 compactness: float = 0.1, slic_iters: int = 10) -> BaselineResult:
    """Four-step co-segmentation with hand-crafted features.

    Features are standardised over the whole dataset, SLIC runs on the
    stacked features, superpixel means of all images are clustered jointly
    (best of ``restarts`` k-means++ runs) and labels mapped back to pixels.
    """
    images = [im.pixels for im in dataset.images]
    maps = baseline_features(images, recipe, window)
    raw_dim = sum(m.shape[-1] for m in maps)
    stacked, kept = feats.stack_features(maps, return_kept=True)
    log.info("baseline %s: feature dim %d (%d after dropping constant channels)",
             recipe, raw_dim, int(kept.sum()))
    segments, pooled = [], []
    for fmap in stacked:
        seg = slic(fmap, superpixels, compactness, slic_iters)
        segments.append(seg)
        pooled.append(pool(fmap, seg))
    labels, model = cluster_superpixels(pooled, num_classes, seed=seed, restarts=restarts)
    pixel_labels = [map_labels(s, r) for s, r in zip(segments, labels)]
    return BaselineResult(pixel_labels, segments, raw_dim, int(kept.sum()), model.inertia)


def config_dict(cfg: IdusConfig) -> dict:
    return asdict(cfg)
