"""Central finite-difference checks shared by the unit and acceptance tests."""

import numpy as np

from idus import net as nn
from idus.loss import LossConfig, combined_loss

STEP = 1e-6
TOLERANCE = 1e-4
LAYERS = ("conv", "conv_stride2", "batchnorm", "relu", "upsample", "concat", "softmax")


def rel_error(analytic, numeric):
    a = np.ravel(analytic)
    b = np.ravel(numeric)
    scale = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def numeric_grad(f, x, coords=None, h=STEP):
    """Central differences of scalar ``f()`` w.r.t. ``x`` (perturbed in place)."""
    flat = x.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    out = []
    for i in coords:
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        out.append((up - down) / (2 * h))
    return np.array(out)


def _away_from_zero(rng, shape, margin=1e-2):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin + x, x)


def layer_error(layer, seed):
    """Largest relative error over every input and parameter of one layer instance."""
    rng = np.random.default_rng(seed)
    errors = []
    if layer in ("conv", "conv_stride2"):
        stride = 2 if layer == "conv_stride2" else 1
        x = rng.normal(size=(2, 3, 6, 6))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        out, _ = nn.conv2d_forward(x, w, b, stride)
        r = rng.normal(size=out.shape)
        _, cache = nn.conv2d_forward(x, w, b, stride)
        dx, dw, db = nn.conv2d_backward(r, cache)

        def f():
            return float(np.sum(nn.conv2d_forward(x, w, b, stride)[0] * r))

        for arr, g in ((x, dx), (w, dw), (b, db)):
            errors.append(rel_error(g, numeric_grad(f, arr)))
    elif layer == "batchnorm":
        x = rng.normal(size=(3, 2, 4, 4)) * 2 + 1
        gamma = rng.normal(size=2)
        beta = rng.normal(size=2)
        r = rng.normal(size=x.shape)

        def f():
            out, _ = nn.batchnorm_forward(x, gamma, beta, np.zeros(2), np.ones(2), training=True)
            return float(np.sum(out * r))

        _, cache = nn.batchnorm_forward(x, gamma, beta, np.zeros(2), np.ones(2), training=True)
        dx, dg, db = nn.batchnorm_backward(r, cache)
        for arr, g in ((x, dx), (gamma, dg), (beta, db)):
            errors.append(rel_error(g, numeric_grad(f, arr)))
    elif layer == "relu":
        x = _away_from_zero(rng, (2, 3, 4, 4))
        r = rng.normal(size=x.shape)
        _, mask = nn.relu_forward(x)
        errors.append(rel_error(nn.relu_backward(r, mask),
                                numeric_grad(lambda: float(np.sum(nn.relu_forward(x)[0] * r)), x)))
    elif layer == "upsample":
        x = rng.normal(size=(2, 2, 3, 3))
        r = rng.normal(size=(2, 2, 6, 6))
        errors.append(rel_error(nn.upsample_backward(r, x.shape),
                                numeric_grad(lambda: float(np.sum(nn.upsample_forward(x)[0] * r)), x)))
    elif layer == "concat":
        a = rng.normal(size=(2, 2, 3, 3))
        b = rng.normal(size=(2, 3, 3, 3))
        r = rng.normal(size=(2, 5, 3, 3))
        da, db = nn.concat_backward(r, 2)

        def f():
            return float(np.sum(nn.concat_forward(a, b)[0] * r))

        errors.append(rel_error(da, numeric_grad(f, a)))
        errors.append(rel_error(db, numeric_grad(f, b)))
    elif layer == "softmax":
        z = rng.normal(size=(2, 4, 3, 3)) * 3
        r = rng.normal(size=z.shape)
        p = nn.softmax(z)
        errors.append(rel_error(nn.softmax_backward(r, p),
                                numeric_grad(lambda: float(np.sum(nn.softmax(z) * r)), z)))
    else:
        raise ValueError(layer)
    return max(errors)


TINY = nn.NetTopology(in_channels=1, encoder_widths=(4, 6), decoder_widths=(6, 4), num_classes=3)


def end_to_end_error(seed, samples_per_tensor=3):
    """Relative error of the combined-loss gradient w.r.t. sampled network parameters."""
    rng = np.random.default_rng(seed)
    net = nn.init_params(TINY, seed=seed)
    for name in net.params:
        if name.endswith(("gamma", "beta", "bias")):
            net.params[name] = net.params[name] + 0.3 * rng.normal(size=net.params[name].shape)
    x = rng.random((2, 1, 16, 16))
    target = rng.integers(0, 3, size=(2, 16, 16))
    target[rng.random(target.shape) < 0.1] = -1
    cfg = LossConfig.from_labels([target], 3)

    def loss():
        probs, _ = nn.forward(net, x, training=True)
        return combined_loss(probs, target, cfg)

    probs, cache = nn.forward(net, x, training=True)
    _, dlogits = combined_loss(probs, target, cfg, return_grad=True)
    grads = nn.backward(net, cache, dlogits)
    analytic, numeric = [], []
    for name, arr in net.params.items():
        coords = rng.choice(arr.size, size=min(samples_per_tensor, arr.size), replace=False)
        analytic.append(grads[name].reshape(-1)[coords])
        numeric.append(numeric_grad(loss, arr, coords))
    return rel_error(np.concatenate(analytic), np.concatenate(numeric))
