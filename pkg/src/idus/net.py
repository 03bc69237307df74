"""A small U-Net style encoder-decoder written directly in numpy.

Tensors use ``(N, C, H, W)`` layout and float64 throughout. Each layer is a
pair of functions ``*_forward`` returning ``(out, cache)`` and ``*_backward``
consuming ``(grad, cache)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class DivergenceError(FloatingPointError):
    """Raised when activations or the loss stop being finite."""


# ---------------------------------------------------------------------------
# layers


def conv2d_forward(x, w, b=None, stride=1):
    """3x3 convolution with zero same-padding; ``stride`` 2 halves H and W."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = sliding_window_view(xp, (3, 3), axis=(2, 3))
    if stride != 1:
        cols = cols[:, :, ::stride, ::stride]
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b[None, :, None, None]
    return np.ascontiguousarray(out), (xp, w, stride, b is not None)


def conv2d_backward(dout, cache):
    xp, w, stride, has_bias = cache
    cols = sliding_window_view(xp, (3, 3), axis=(2, 3))
    if stride != 1:
        cols = cols[:, :, ::stride, ::stride]
    dw = np.tensordot(dout, cols, axes=([0, 2, 3], [0, 2, 3]))
    db = dout.sum(axis=(0, 2, 3)) if has_bias else None
    n, _, ho, wo = dout.shape
    dxp = np.zeros_like(xp)
    dcols = np.tensordot(dout, w, axes=([1], [0]))  # (N, Ho, Wo, C, 3, 3)
    for i in range(3):
        for j in range(3):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                dcols[..., i, j].transpose(0, 3, 1, 2)
            )
    return dxp[:, :, 1:-1, 1:-1], dw, db


def batchnorm_forward(x, gamma, beta, running_mean, running_var, training=True,
                      momentum=BN_MOMENTUM, eps=BN_EPS):
    """Per-channel batch normalisation; running statistics are updated in place in training mode."""
    if training:
        mu = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        count = x.size // x.shape[1]
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * count / max(count - 1, 1)
    else:
        mu, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, (xhat, inv_std, gamma, training)


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, training = cache
    dgamma = np.sum(dout * xhat, axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    dxhat = dout * gamma[None, :, None, None]
    if not training:
        return dxhat * inv_std[None, :, None, None], dgamma, dbeta
    m = dout.size // dout.shape[1]
    sum_d = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
    sum_dx = np.sum(dxhat * xhat, axis=(0, 2, 3))[None, :, None, None]
    dx = (inv_std[None, :, None, None] / m) * (m * dxhat - sum_d - xhat * sum_dx)
    return dx, dgamma, dbeta


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def upsample_forward(x):
    """Nearest-neighbour 2x upsampling."""
    return x.repeat(2, axis=2).repeat(2, axis=3), x.shape


def upsample_backward(dout, shape):
    n, c, h, w = shape
    return dout.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))


def concat_forward(a, b):
    return np.concatenate([a, b], axis=1), a.shape[1]


def concat_backward(dout, split):
    return dout[:, :split], dout[:, split:]


def softmax(logits, axis=1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(dprobs, probs, axis=1):
    """Gradient w.r.t. logits given the gradient w.r.t. softmax outputs."""
    return probs * (dprobs - np.sum(dprobs * probs, axis=axis, keepdims=True))


# ---------------------------------------------------------------------------
# network


@dataclass(frozen=True)
class NetTopology:
    """Encoder stages halve the resolution; decoder stage ``i`` upsamples and
    concatenates the skip of encoder stage ``E - i`` (stage 0 is the input)."""

    in_channels: int = 1
    encoder_widths: tuple[int, ...] = (16, 32, 64, 128)
    decoder_widths: tuple[int, ...] = (64, 32, 16, 16)
    num_classes: int = 7

    def __post_init__(self):
        if len(self.encoder_widths) != len(self.decoder_widths):
            raise ValueError("encoder and decoder need the same number of stages")
        if not self.encoder_widths:
            raise ValueError("at least one stage is required")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")

    @property
    def depth(self) -> int:
        return len(self.encoder_widths)

    def conv_layers(self):
        """``(name, in_channels, out_channels, stride, batchnorm)`` for every convolution."""
        layers = []
        cin = self.in_channels
        for s, width in enumerate(self.encoder_widths, start=1):
            layers.append((f"enc{s}a", cin, width, 2, True))
            layers.append((f"enc{s}b", width, width, 1, True))
            cin = width
        skip_widths = (self.in_channels,) + self.encoder_widths
        for i, width in enumerate(self.decoder_widths, start=1):
            merged = cin + skip_widths[self.depth - i]
            layers.append((f"dec{i}a", merged, width, 1, True))
            layers.append((f"dec{i}b", width, width, 1, True))
            cin = width
        layers.append(("head", cin, self.num_classes, 1, False))
        return layers


@dataclass
class NetworkParams:
    topology: NetTopology
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> NetworkParams:
        return NetworkParams(
            self.topology,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())


def init_params(topology: NetTopology, seed=None) -> NetworkParams:
    """He-style uniform kernels ``U(-b, b)``, ``b = sqrt(6 / fan_in)``; zero biases,
    unit BN scale, zero BN shift, running statistics (0, 1)."""
    rng = np.random.default_rng(seed)
    params, buffers = {}, {}
    for name, cin, cout, _, bn in topology.conv_layers():
        bound = np.sqrt(6.0 / (cin * 9))
        params[f"{name}.weight"] = rng.uniform(-bound, bound, size=(cout, cin, 3, 3))
        if bn:
            params[f"{name}.bn.gamma"] = np.ones(cout)
            params[f"{name}.bn.beta"] = np.zeros(cout)
            buffers[f"{name}.bn.running_mean"] = np.zeros(cout)
            buffers[f"{name}.bn.running_var"] = np.ones(cout)
        else:
            params[f"{name}.bias"] = np.zeros(cout)
    return NetworkParams(topology, params, buffers)


def _check_input(net, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[:, None]
    if x.ndim != 4 or x.shape[0] == 0:
        raise ValueError("expected a non-empty (N, C, H, W) batch")
    if x.shape[1] != net.topology.in_channels:
        raise ValueError(f"expected {net.topology.in_channels} input channels, got {x.shape[1]}")
    factor = 2**net.topology.depth
    if x.shape[2] % factor or x.shape[3] % factor:
        raise ValueError(f"input size {x.shape[2:]} not divisible by {factor}")
    return x


def _block_forward(net, name, x, stride, training):
    p, b = net.params, net.buffers
    h, conv_cache = conv2d_forward(x, p[f"{name}.weight"], None, stride)
    h, bn_cache = batchnorm_forward(
        h, p[f"{name}.bn.gamma"], p[f"{name}.bn.beta"],
        b[f"{name}.bn.running_mean"], b[f"{name}.bn.running_var"], training,
    )
    h, relu_cache = relu_forward(h)
    return h, (conv_cache, bn_cache, relu_cache)


def _block_backward(name, dout, cache, grads):
    conv_cache, bn_cache, relu_cache = cache
    d = relu_backward(dout, relu_cache)
    d, grads[f"{name}.bn.gamma"], grads[f"{name}.bn.beta"] = batchnorm_backward(d, bn_cache)
    d, grads[f"{name}.weight"], _ = conv2d_backward(d, conv_cache)
    return d


def forward(net: NetworkParams, x, training: bool = False):
    """Per-pixel class probabilities ``(N, M, H, W)`` and the activation cache.

    Training mode normalises with batch statistics and updates the running
    statistics; inference mode uses the running statistics only.
    """
    x = _check_input(net, x)
    topo = net.topology
    caches = {}
    skips = [x]
    h = x
    for s in range(1, topo.depth + 1):
        h, caches[f"enc{s}a"] = _block_forward(net, f"enc{s}a", h, 2, training)
        h, caches[f"enc{s}b"] = _block_forward(net, f"enc{s}b", h, 1, training)
        skips.append(h)
    for i in range(1, topo.depth + 1):
        h, caches[f"up{i}"] = upsample_forward(h)
        h, caches[f"merge{i}"] = concat_forward(h, skips[topo.depth - i])
        h, caches[f"dec{i}a"] = _block_forward(net, f"dec{i}a", h, 1, training)
        h, caches[f"dec{i}b"] = _block_forward(net, f"dec{i}b", h, 1, training)
    logits, caches["head"] = conv2d_forward(h, net.params["head.weight"], net.params["head.bias"])
    if not np.all(np.isfinite(logits)):
        raise DivergenceError("non-finite activations in forward pass")
    probs = softmax(logits)
    return probs, {"layers": caches, "probs": probs, "training": training}


def backward(net: NetworkParams, cache, dlogits):
    """Gradients of a scalar loss w.r.t. every parameter, given ``dloss/dlogits``."""
    if not cache.get("training"):
        raise ValueError("backward needs the cache of a training-mode forward")
    topo = net.topology
    caches = cache["layers"]
    grads = {}
    d, grads["head.weight"], grads["head.bias"] = conv2d_backward(dlogits, caches["head"])
    dskips = [None] * (topo.depth + 1)
    for i in range(topo.depth, 0, -1):
        d = _block_backward(f"dec{i}b", d, caches[f"dec{i}b"], grads)
        d = _block_backward(f"dec{i}a", d, caches[f"dec{i}a"], grads)
        d, dskip = concat_backward(d, caches[f"merge{i}"])
        dskips[topo.depth - i] = dskip
        d = upsample_backward(d, caches[f"up{i}"])
    for s in range(topo.depth, 0, -1):
        if dskips[s] is not None:
            d = d + dskips[s]
        d = _block_backward(f"enc{s}b", d, caches[f"enc{s}b"], grads)
        d = _block_backward(f"enc{s}a", d, caches[f"enc{s}a"], grads)
    return grads


def predict(net: NetworkParams, images, batch_size: int = 8) -> np.ndarray:
    """Inference-mode probabilities for a stack of ``(N, H, W)`` images."""
    images = np.asarray(images, dtype=np.float64)
    out = []
    for start in range(0, len(images), batch_size):
        probs, _ = forward(net, images[start : start + batch_size], training=False)
        out.append(probs)
    return np.concatenate(out)


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    lr: float = 1e-4
    weight_decay: float = 1e-9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float | None = None):
    """Bias-corrected Adam with decoupled weight decay (``theta -= lr * wd * theta``
    before the moment update). Arrays in ``params`` are updated in place."""
    lr = state.lr if lr is None else lr
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {name}")
    state.step += 1
    t = state.step
    c1 = 1 - state.beta1**t
    c2 = 1 - state.beta2**t
    for name, g in grads.items():
        theta = params[name]
        if theta.shape != g.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        m, v = state.m[name], state.v[name]
        if state.weight_decay:
            theta -= lr * state.weight_decay * theta
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        theta -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def lr_schedule(epoch: int, base_lr: float = 1e-4, step: int = 50, gamma: float = 0.1) -> float:
    """Step decay: ``base_lr * gamma ** (epoch // step)`` for a zero-based epoch."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return base_lr * gamma ** (epoch // step)


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = b"IDUSCKPT"
_VERSION = 1


def save_tensors(path, tensors: dict) -> None:
    """Versioned binary of name-keyed float64 tensors (row-major, little-endian)."""
    chunks = [_MAGIC, struct.pack("<II", _VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_tensors(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, count = struct.unpack_from("<II", data, 8)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        out[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
        pos += 8 * size
    return out


def topology_tensors(topo: NetTopology) -> dict[str, np.ndarray]:
    return {
        "topology.in_channels": np.array([topo.in_channels], dtype=float),
        "topology.encoder_widths": np.array(topo.encoder_widths, dtype=float),
        "topology.decoder_widths": np.array(topo.decoder_widths, dtype=float),
        "topology.num_classes": np.array([topo.num_classes], dtype=float),
    }


def topology_from_tensors(t: dict) -> NetTopology:
    return NetTopology(
        in_channels=int(t["topology.in_channels"][0]),
        encoder_widths=tuple(int(v) for v in t["topology.encoder_widths"]),
        decoder_widths=tuple(int(v) for v in t["topology.decoder_widths"]),
        num_classes=int(t["topology.num_classes"][0]),
    )


def net_tensors(net: NetworkParams, adam: AdamState | None = None) -> dict[str, np.ndarray]:
    tensors = topology_tensors(net.topology)
    tensors.update({f"param/{k}": v for k, v in net.params.items()})
    tensors.update({f"buffer/{k}": v for k, v in net.buffers.items()})
    if adam is not None:
        tensors["adam/hyper"] = np.array(
            [adam.lr, adam.weight_decay, adam.beta1, adam.beta2, adam.eps, adam.step], dtype=float
        )
        tensors.update({f"adam/m/{k}": v for k, v in adam.m.items()})
        tensors.update({f"adam/v/{k}": v for k, v in adam.v.items()})
    return tensors


def net_from_tensors(t: dict):
    topo = topology_from_tensors(t)
    params = {k[len("param/"):]: v for k, v in t.items() if k.startswith("param/")}
    buffers = {k[len("buffer/"):]: v for k, v in t.items() if k.startswith("buffer/")}
    adam = None
    if "adam/hyper" in t:
        lr, wd, b1, b2, eps, step = t["adam/hyper"]
        adam = AdamState(lr, wd, b1, b2, eps, int(step))
        adam.m = {k[len("adam/m/"):]: v for k, v in t.items() if k.startswith("adam/m/")}
        adam.v = {k[len("adam/v/"):]: v for k, v in t.items() if k.startswith("adam/v/")}
    return NetworkParams(topo, params, buffers), adam


def save_checkpoint(path, net: NetworkParams, adam: AdamState | None = None) -> None:
    save_tensors(path, net_tensors(net, adam))


def load_checkpoint(path):
    """Returns ``(NetworkParams, AdamState or None)``."""
    return net_from_tensors(load_tensors(path))
