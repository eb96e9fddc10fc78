"""Minimal trainable layer set with hand-derived reverse-mode gradients.

Layers operate on float64 arrays: (N, C, L) for convolutional layers and
(N, F) for dense ones. Each layer owns its parameters and gradient buffers in
``params`` / ``grads`` dicts; ``forward`` caches whatever ``backward`` needs
when the layer is in training mode, and ``backward`` consumes that cache.
Every gradient here is checked against central finite differences in the test
suite and by the ``gradcheck`` command.

Training mutates parameters in place and must be serialized by the caller;
eval-mode forward passes are pure and safe to run concurrently.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "ShapeError",
    "Layer",
    "Conv1d",
    "BatchNorm1d",
    "ReLU",
    "Linear",
    "Flatten",
    "GlobalAvgPool1d",
    "ResidualBlock",
    "Sequential",
    "softmax_cross_entropy",
    "mse_loss",
    "Adam",
    "kaiming_uniform",
]


class ShapeError(ValueError):
    """Input shape incompatible with a layer's configuration."""


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    """Base layer: parameter/gradient dicts plus a training flag."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.training = True
        self._cache = None

    def train(self):
        self.training = True
        for sub in self.sublayers():
            sub.train()
        return self

    def eval(self):
        self.training = False
        for sub in self.sublayers():
            sub.eval()
        return self

    def sublayers(self):
        return ()

    def named_params(self, prefix: str = ""):
        """Yield (name, array) for this layer and all sublayers, stable order."""
        for key in self.params:
            yield prefix + key, self.params[key]
        for i, sub in enumerate(self.sublayers()):
            yield from sub.named_params(f"{prefix}{i}.")

    def named_grads(self, prefix: str = ""):
        for key in self.params:
            yield prefix + key, self.grads[key]
        for i, sub in enumerate(self.sublayers()):
            yield from sub.named_grads(f"{prefix}{i}.")

    def named_buffers(self, prefix: str = ""):
        """Non-learnable state that still needs persisting (batchnorm stats)."""
        for i, sub in enumerate(self.sublayers()):
            yield from sub.named_buffers(f"{prefix}{i}.")

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)
        for sub in self.sublayers():
            sub.zero_grad()

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise RuntimeError(
                f"{type(self).__name__}.backward called without a matching "
                "training-mode forward (missing or already-consumed cache)"
            )
        cache, self._cache = self._cache, None
        return cache

    def __call__(self, x):
        return self.forward(x)


class Conv1d(Layer):
    """1-D convolution (cross-correlation) over (N, C_in, L) inputs."""

    def __init__(self, in_channels, out_channels, kernel_size, stride=1,
                 padding=0, rng: np.random.Generator | None = None):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kernel_size
        self.params["w"] = kaiming_uniform(
            rng, (out_channels, in_channels, kernel_size), fan_in)
        self.params["b"] = np.zeros(out_channels)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def _out_len(self, l_in: int) -> int:
        l_eff = l_in + 2 * self.padding - self.kernel_size
        if l_eff < 0:
            raise ShapeError(
                f"conv1d kernel {self.kernel_size} exceeds padded length "
                f"{l_in + 2 * self.padding}")
        return l_eff // self.stride + 1

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"conv1d expects (N, {self.in_channels}, L), got {x.shape}")
        n, _, l_in = x.shape
        l_out = self._out_len(l_in)
        p = self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p))) if p else x
        # (N, C, L_out, k) windows, then one matmul against the kernel matrix.
        win = sliding_window_view(xp, self.kernel_size, axis=2)
        win = win[:, :, : l_out * self.stride : self.stride, :]
        cols = win.transpose(0, 2, 1, 3).reshape(n * l_out, -1)
        w_mat = self.params["w"].reshape(self.out_channels, -1)
        out = cols @ w_mat.T + self.params["b"]
        y = out.reshape(n, l_out, self.out_channels).transpose(0, 2, 1)
        if self.training:
            self._cache = (x.shape, cols)
        return y

    def backward(self, dout):
        (n, _, l_in), cols = self._take_cache()
        l_out = dout.shape[2]
        dflat = dout.transpose(0, 2, 1).reshape(n * l_out, self.out_channels)
        w_mat = self.params["w"].reshape(self.out_channels, -1)
        self.grads["w"] += (dflat.T @ cols).reshape(self.params["w"].shape)
        self.grads["b"] += dflat.sum(axis=0)
        dcols = dflat @ w_mat
        dwin = dcols.reshape(n, l_out, self.in_channels, self.kernel_size)
        dwin = dwin.transpose(0, 2, 1, 3)
        p = self.padding
        dxp = np.zeros((n, self.in_channels, l_in + 2 * p))
        for j in range(self.kernel_size):
            dxp[:, :, j : j + self.stride * l_out : self.stride] += dwin[:, :, :, j]
        return dxp[:, :, p : p + l_in] if p else dxp


class BatchNorm1d(Layer):
    """Per-channel batchnorm over (N, C, L); biased variance throughout."""

    def __init__(self, channels, eps=1e-5, momentum=0.1):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def named_buffers(self, prefix: str = ""):
        yield prefix + "running_mean", self.running_mean
        yield prefix + "running_var", self.running_var

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.channels:
            raise ShapeError(
                f"batchnorm1d expects (N, {self.channels}, L), got {x.shape}")
        if self.training:
            mean = x.mean(axis=(0, 2))
            var = x.var(axis=(0, 2))
            self.running_mean += self.momentum * (mean - self.running_mean)
            self.running_var += self.momentum * (var - self.running_var)
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
        y = self.params["gamma"][None, :, None] * xhat + self.params["beta"][None, :, None]
        if self.training:
            self._cache = (xhat, inv_std, x.shape[0] * x.shape[2])
        return y

    def backward(self, dout):
        xhat, inv_std, count = self._take_cache()
        self.grads["gamma"] += (dout * xhat).sum(axis=(0, 2))
        self.grads["beta"] += dout.sum(axis=(0, 2))
        dxhat = dout * self.params["gamma"][None, :, None]
        # Standard train-mode backward including the batch-statistics paths.
        dsum = dxhat.sum(axis=(0, 2))[None, :, None]
        ddot = (dxhat * xhat).sum(axis=(0, 2))[None, :, None]
        return (inv_std[None, :, None] / count) * (count * dxhat - dsum - xhat * ddot)


class ReLU(Layer):
    def forward(self, x):
        y = np.maximum(x, 0.0)
        if self.training:
            self._cache = x > 0
        return y

    def backward(self, dout):
        mask = self._take_cache()
        return dout * mask


class Linear(Layer):
    """Dense layer over (N, F_in) inputs."""

    def __init__(self, in_features, out_features, rng: np.random.Generator | None = None):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["w"] = kaiming_uniform(
            rng, (out_features, in_features), in_features)
        self.params["b"] = np.zeros(out_features)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(
                f"linear expects (N, {self.in_features}), got {x.shape}")
        if self.training:
            self._cache = x
        return x @ self.params["w"].T + self.params["b"]

    def backward(self, dout):
        x = self._take_cache()
        self.grads["w"] += dout.T @ x
        self.grads["b"] += dout.sum(axis=0)
        return dout @ self.params["w"]


class Flatten(Layer):
    def forward(self, x):
        if self.training:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        shape = self._take_cache()
        return dout.reshape(shape)


class GlobalAvgPool1d(Layer):
    """(N, C, L) -> (N, C) mean over length."""

    def forward(self, x):
        if self.training:
            self._cache = x.shape
        return x.mean(axis=2)

    def backward(self, dout):
        n, c, l = self._take_cache()
        return np.repeat(dout[:, :, None] / l, l, axis=2)


class ResidualBlock(Layer):
    """conv3-bn-relu-conv3-bn plus shortcut, relu on the sum.

    The inner path preserves length (padding = kernel//2, stride 1). When the
    channel count changes a 1x1 conv + bn projection shortcut is required;
    without it a channel mismatch raises ShapeError at construction.
    """

    def __init__(self, in_channels, out_channels=None, kernel_size=3,
                 projection=None, rng: np.random.Generator | None = None):
        super().__init__()
        out_channels = in_channels if out_channels is None else out_channels
        self.in_channels = in_channels
        self.out_channels = out_channels
        if projection is None:
            projection = in_channels != out_channels
        if not projection and in_channels != out_channels:
            raise ShapeError(
                f"residual block {in_channels}->{out_channels} needs a "
                "projection shortcut")
        pad = kernel_size // 2
        self.conv1 = Conv1d(in_channels, out_channels, kernel_size, padding=pad, rng=rng)
        self.bn1 = BatchNorm1d(out_channels)
        self.relu1 = ReLU()
        self.conv2 = Conv1d(out_channels, out_channels, kernel_size, padding=pad, rng=rng)
        self.bn2 = BatchNorm1d(out_channels)
        self.relu_out = ReLU()
        if projection:
            self.proj = Conv1d(in_channels, out_channels, 1, rng=rng)
            self.proj_bn = BatchNorm1d(out_channels)
        else:
            self.proj = None
            self.proj_bn = None

    def sublayers(self):
        subs = [self.conv1, self.bn1, self.relu1, self.conv2, self.bn2, self.relu_out]
        if self.proj is not None:
            subs += [self.proj, self.proj_bn]
        return tuple(subs)

    def forward(self, x):
        h = self.relu1(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        s = self.proj_bn(self.proj(x)) if self.proj is not None else x
        return self.relu_out(h + s)

    def backward(self, dout):
        dsum = self.relu_out.backward(dout)
        dh = self.bn2.backward(dsum)
        dh = self.conv2.backward(dh)
        dh = self.relu1.backward(dh)
        dh = self.bn1.backward(dh)
        dx = self.conv1.backward(dh)
        if self.proj is not None:
            dx = dx + self.proj.backward(self.proj_bn.backward(dsum))
        else:
            dx = dx + dsum
        return dx


class Sequential(Layer):
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)

    def sublayers(self):
        return tuple(self.layers)

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            try:
                x = layer(x)
            except ShapeError as err:
                raise ShapeError(
                    f"layer {i} ({type(layer).__name__}): {err}") from err
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout


def softmax_cross_entropy(logits, labels):
    """Per-sample cross-entropy with softmax, plus the logits gradient.

    Returns (losses (N,), dlogits (N, C)) where dlogits is the gradient of
    the per-sample loss (softmax minus one-hot); callers average as needed.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim == 1:
        logits = logits[None, :]
        labels = np.atleast_1d(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels must have shape ({n},), got {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= c):
        raise ValueError(f"class labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    losses = log_z - shifted[np.arange(n), labels]
    probs = np.exp(shifted - log_z[:, None])
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    return losses, dlogits


def mse_loss(pred, target):
    """Sum-of-squares loss per sample: sum_k (pred_k - target_k)^2.

    Returns (losses (N,), dpred (N, K)); dpred = 2 (pred - target).
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.ndim == 1:
        pred = pred[None, :]
        target = np.atleast_2d(target)
    if pred.shape != target.shape:
        raise ValueError(
            f"prediction/target shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return (diff * diff).sum(axis=1), 2.0 * diff


class Adam:
    """Adam with bias correction, updating parameter arrays in place."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads):
        grads = list(grads)
        if len(grads) != len(self.params):
            raise ValueError(
                f"expected {len(self.params)} gradients, got {len(grads)}")
        for g in grads:
            if np.any(np.isnan(g)):
                raise FloatingPointError("NaN gradient passed to Adam")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
