"""Differentiable primitives used by the encoder layers.

Arrays are laid out ``(..., T, d)``: time is the second-to-last axis and
features the last. Leading axes are batch (and heads, for attention).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigError, DimensionError, NumericError, UninitializedStatsError
from .tensor import Tensor, as_tensor, make_node

LN_EPS = 1e-5
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    active = x.data > 0
    return make_node(np.where(active, x.data, 0.0), (x,), lambda g: (g * active,))


def softmax_rows(x: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis with optional boolean mask of allowed slots.

    Masked-out slots receive probability zero. Every row must keep at least
    one allowed slot.
    """
    x = as_tensor(x)
    if np.isnan(x.data).any():
        raise NumericError("softmax_rows received NaN input")
    z = x.data
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make_node(y, (x,), back)


def cross_entropy(logits: Tensor, labels, reduction: str = "mean") -> Tensor:
    """Per-frame softmax cross-entropy against integer ``labels``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if labels.shape != logits.shape[:-1]:
        raise DimensionError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    if reduction not in ("mean", "sum"):
        raise ConfigError(f"unknown reduction {reduction!r}")
    idx = labels[..., None].astype(np.intp)
    picked = np.take_along_axis(logp, idx, axis=-1)
    scale = 1.0 / labels.size if reduction == "mean" else 1.0

    def back(g):
        p = np.exp(logp)
        np.put_along_axis(p, idx, np.take_along_axis(p, idx, axis=-1) - 1.0, axis=-1)
        return (g * scale * p,)

    return make_node(-picked.sum() * scale, (logits,), back)


def tap_offsets(k: int, rate: int, padding: str = "same") -> list[int]:
    """Frame offsets of the ``k`` kernel taps.

    Odd kernels are centred; even kernels are right-aligned so that a 2-tap
    kernel reads frames ``t - rate`` and ``t``. VALID padding reads forward
    from ``t``.
    """
    if padding == "same":
        center = (k - 1) // 2 if k % 2 else k - 1
        return [(j - center) * rate for j in range(k)]
    if padding == "valid":
        return [j * rate for j in range(k)]
    raise ConfigError(f"unknown padding policy {padding!r}")


def conv1d_dilated(x: Tensor, kernel: Tensor, rate: int = 1, padding: str = "same") -> Tensor:
    """Dilated 1-D convolution along time.

    ``x`` is ``(..., T, d_in)`` and ``kernel`` is ``(k, d_in, d_out)``.
    Under SAME padding the output keeps length ``T`` with zeros outside the
    sequence; under VALID it has length ``T - (k - 1) * rate``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if rate < 1 or not float(rate).is_integer():
        raise ConfigError(f"dilation rate must be a positive integer, got {rate}")
    rate = int(rate)
    k, d_in, d_out = kernel.shape
    if x.shape[-1] != d_in:
        raise DimensionError(f"conv1d input {x.shape} does not match kernel {kernel.shape}")
    lead, T = x.shape[:-2], x.shape[-2]
    X = x.data.reshape(-1, T, d_in)
    W = kernel.data
    offs = tap_offsets(k, rate, padding)
    if padding == "valid":
        T_out = T - (k - 1) * rate
        if T_out <= 0:
            raise DimensionError(
                f"VALID convolution of length {T} with k={k}, rate={rate} has empty output")
    else:
        T_out = T

    # per tap: output frames [t0, t1) read input frames [t0 + off, t1 + off)
    spans = []
    for j, off in enumerate(offs):
        t0, t1 = max(0, -off), min(T_out, T - off)
        if t0 < t1:
            spans.append((j, off, t0, t1))

    Y = np.zeros((X.shape[0], T_out, d_out))
    for j, off, t0, t1 in spans:
        Y[:, t0:t1] += X[:, t0 + off:t1 + off] @ W[j]

    def back(g):
        G = g.reshape(-1, T_out, d_out)
        gx = np.zeros_like(X)
        gw = np.zeros_like(W)
        for j, off, t0, t1 in spans:
            gx[:, t0 + off:t1 + off] += G[:, t0:t1] @ W[j].T
            gw[j] = np.tensordot(X[:, t0 + off:t1 + off], G[:, t0:t1], axes=([0, 1], [0, 1]))
        return gx.reshape(x.shape), gw

    return make_node(Y.reshape(*lead, T_out, d_out), (x, kernel), back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if d < 2:
        raise DimensionError("layer_norm needs at least 2 features")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def back(g):
        dxhat = g * gain.data
        gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        rows = g.reshape(-1, d)
        return gx, (rows * xhat.reshape(-1, d)).sum(axis=0), rows.sum(axis=0)

    return make_node(out, (x, gain, bias), back)


@dataclass
class BatchNormState:
    """Running statistics for one batch-norm site (``None`` until first update)."""

    num_features: int
    momentum: float = BN_MOMENTUM
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None

    @property
    def initialized(self) -> bool:
        return self.running_mean is not None

    def update(self, mean, var):
        if not self.initialized:
            self.running_mean = mean.copy()
            self.running_var = var.copy()
            return
        m = self.momentum
        self.running_mean = (1.0 - m) * self.running_mean + m * mean
        self.running_var = (1.0 - m) * self.running_var + m * var


def batch_norm(x: Tensor, gain: Tensor, bias: Tensor, state: BatchNormState,
               training: bool, eps: float = BN_EPS) -> Tensor:
    """Normalize each feature over every leading (batch and time) position.

    Training mode uses the current batch statistics and folds them into
    ``state``; inference mode uses ``state`` only. Variances are biased, so
    a single training frame normalizes to zero and the output is ``bias``.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    rows = x.data.reshape(-1, d)
    n = rows.shape[0]
    if training:
        if n == 0:
            raise DimensionError("batch_norm got an empty batch")
        mean = rows.mean(axis=0)
        var = ((rows - mean) ** 2).mean(axis=0)
        state.update(mean, var)
    else:
        if not state.initialized:
            raise UninitializedStatsError("batch_norm inference before any training-mode update")
        mean, var = state.running_mean, state.running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (rows - mean) * inv
    out = (xhat * gain.data + bias.data).reshape(x.shape)

    def back(g):
        G = g.reshape(-1, d)
        dxhat = G * gain.data
        if training:
            gx = inv * (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0))
        else:
            gx = dxhat * inv
        return gx.reshape(x.shape), (G * xhat).sum(axis=0), G.sum(axis=0)

    return make_node(out, (x, gain, bias), back)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1 / (1 - p)`` at train time."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("training-mode dropout needs a random generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return make_node(x.data * mask, (x,), lambda g: (g * mask,))


def _groups(t: Tensor):
    return t.data.reshape(-1, t.shape[-2], t.shape[-1])


def window_dot(a: Tensor, b: Tensor, stride: int, left: int, right: int) -> Tensor:
    """Scores between each frame of ``a`` and the strided window of ``b``.

    Returns ``(..., T, left + right + 1)``; slot ``j`` pairs frame ``t`` with
    frame ``t + (j - left) * stride`` and is zero when that frame is outside
    the sequence.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[:-1] != b.shape[:-1] or a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"window_dot shape mismatch: {a.shape} vs {b.shape}")
    args = (stride, left, right)
    A, B = _groups(a), _groups(b)
    out = _kernels.window_dot(A, B, *args)

    def back(g):
        G = g.reshape(out.shape)
        return (_kernels.window_mix(G, B, *args).reshape(a.shape),
                _kernels.window_mix_t(G, A, *args).reshape(b.shape))

    return make_node(out.reshape(*a.shape[:-1], out.shape[-1]), (a, b), back)


def window_mix(w: Tensor, b: Tensor, stride: int, left: int, right: int) -> Tensor:
    """Weighted sum of the strided window of ``b`` for every frame."""
    w, b = as_tensor(w), as_tensor(b)
    n = left + right + 1
    if w.shape[-1] != n or w.shape[:-1] != b.shape[:-1]:
        raise DimensionError(f"window_mix shape mismatch: {w.shape} vs {b.shape}")
    args = (stride, left, right)
    W, B = _groups(w), _groups(b)
    out = _kernels.window_mix(W, B, *args)

    def back(g):
        G = g.reshape(out.shape)
        return (_kernels.window_dot(G, B, *args).reshape(w.shape),
                _kernels.window_mix_t(W, G, *args).reshape(b.shape))

    return make_node(out.reshape(b.shape[:-1] + (out.shape[-1],)), (w, b), back)
