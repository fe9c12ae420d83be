"""Per-stream building blocks: Conv-F, time-restricted attention, factorized FF.

All layers take ``(B, T, d_model)`` or ``(T, d_model)`` inputs and return the
same shape.
"""

from __future__ import annotations

import math

import numpy as np

from . import functional as F
from ._kernels import window_mask
from .constraint import orthonormalize
from .errors import ConfigError, DimensionError
from .module import Module, Parameter, glorot
from .tensor import Tensor, as_tensor


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _constrained_factor(rng, shape, fan_in, fan_out) -> Parameter:
    p = Parameter(glorot(rng, shape, fan_in, fan_out), constrained=True)
    p.set_ortho(orthonormalize(p.ortho_view()))
    return p


def _check_width(x: Tensor, d: int, where: str):
    if x.shape[-1] != d:
        raise DimensionError(f"{where}: expected feature size {d}, got input shape {x.shape}")


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, bias: bool = True, seed=None):
        rng = _as_rng(seed)
        self.weight = Parameter(glorot(rng, (d_in, d_out), d_in, d_out))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x):
        y = as_tensor(x) @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))

    def forward(self, x):
        return F.layer_norm(x, self.gain, self.bias)


class BatchNorm(Module):
    def __init__(self, d: int, momentum: float = F.BN_MOMENTUM):
        self.gain = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))
        self.state = F.BatchNormState(d, momentum=momentum)

    def forward(self, x):
        return F.batch_norm(x, self.gain, self.bias, self.state, self.training)


class Dropout(Module):
    def __init__(self, p: float, seed=None):
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
        self.p = p
        self.rng = _as_rng(seed)

    def forward(self, x):
        return F.dropout(x, self.p, self.training, self.rng)


class ConvF(Module):
    """Factorized dilated convolution with a scaled skip connection.

    Two 2-tap convolutions through a ``bottleneck``-wide layer give a 3-frame
    receptive field (``t - 2r .. t``). The first factor is kept
    semi-orthogonal. Output: ``skip_scale * x + dropout(bn(relu(conv2(conv1(x)))))``.
    """

    def __init__(self, d_model: int, bottleneck: int, rate: int = 1, dropout: float = 0.1,
                 skip_scale: float = 0.66, seed=None):
        if rate < 1:
            raise ConfigError(f"dilation rate must be >= 1, got {rate}")
        if not 0.0 < skip_scale <= 1.0:
            raise ConfigError(f"skip_scale must lie in (0, 1], got {skip_scale}")
        rng = _as_rng(seed)
        self.d_model, self.rate, self.skip_scale = d_model, rate, skip_scale
        self.factor1 = _constrained_factor(rng, (2, d_model, bottleneck), 2 * d_model, 2 * bottleneck)
        self.factor2 = Parameter(glorot(rng, (2, bottleneck, d_model), 2 * bottleneck, 2 * d_model))
        self.bn = BatchNorm(d_model)
        self.dropout = Dropout(dropout, seed=rng.spawn(1)[0])

    def forward(self, x):
        x = as_tensor(x)
        _check_width(x, self.d_model, "ConvF")
        h = F.conv1d_dilated(x, self.factor1, self.rate)
        h = F.conv1d_dilated(h, self.factor2, self.rate)
        h = self.dropout(self.bn(F.relu(h)))
        return x * self.skip_scale + h


class TimeRestrictedAttention(Module):
    """Multi-head self-attention over a strided, clipped window.

    Query frame ``t`` attends to frames ``t + j * stride`` for
    ``j in [-left, right]`` that fall inside the sequence; there is still one
    output per input frame. Heads are concatenated, projected, added to the
    input and layer-normalized.
    """

    def __init__(self, d_model: int, heads: int, d_q: int = 40, d_k: int = 40, d_v: int = 80,
                 stride: int = 1, left: int = 15, right: int = 15, seed=None):
        if d_q != d_k:
            raise ConfigError(f"query and key widths must match for dot-product scores ({d_q} != {d_k})")
        if heads < 1 or stride < 1 or left < 0 or right < 0:
            raise ConfigError("heads and stride must be positive, context sizes non-negative")
        rng = _as_rng(seed)
        self.d_model, self.heads = d_model, heads
        self.d_k, self.d_v = d_k, d_v
        self.stride, self.left, self.right = stride, left, right
        self.wq = Parameter(np.concatenate([glorot(rng, (d_model, d_q), d_model, d_q)
                                            for _ in range(heads)], axis=1))
        self.wk = Parameter(np.concatenate([glorot(rng, (d_model, d_k), d_model, d_k)
                                            for _ in range(heads)], axis=1))
        self.wv = Parameter(np.concatenate([glorot(rng, (d_model, d_v), d_model, d_v)
                                            for _ in range(heads)], axis=1))
        self.wo = Parameter(glorot(rng, (heads * d_v, d_model), heads * d_v, d_model))
        self.norm = LayerNorm(d_model)
        self.last_weights: np.ndarray | None = None

    def _split(self, t: Tensor, B: int, T: int, width: int) -> Tensor:
        return t.reshape(B, T, self.heads, width).transpose(0, 2, 1, 3)

    def heads_output(self, x: Tensor) -> Tensor:
        """Per-head outputs ``(B, heads, T, d_v)`` before concatenation."""
        B, T, _ = x.shape
        q = self._split(x @ self.wq, B, T, self.d_k)
        k = self._split(x @ self.wk, B, T, self.d_k)
        v = self._split(x @ self.wv, B, T, self.d_v)
        ctx = (self.stride, self.left, self.right)
        scores = F.window_dot(q, k, *ctx) * (1.0 / math.sqrt(self.d_k))
        weights = F.softmax_rows(scores, mask=window_mask(T, *ctx))
        self.last_weights = weights.data
        return F.window_mix(weights, v, *ctx)

    def forward(self, x):
        x = as_tensor(x)
        _check_width(x, self.d_model, "TimeRestrictedAttention")
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape(1, *x.shape)
        B, T, _ = x.shape
        heads = self.heads_output(x)
        merged = heads.transpose(0, 2, 1, 3).reshape(B, T, self.heads * self.d_v)
        out = self.norm(merged @ self.wo + x)
        return out.reshape(T, self.d_model) if squeeze else out


class FactorizedFF(Module):
    """Feed-forward sublayer with residual and layer norm.

    ``factorized`` mode: two bias-free matrices through a ``bottleneck``
    (first one semi-orthogonal). ``plain`` mode: ``relu(x W1 + b1) W2 + b2``
    with hidden width ``d_ff``.
    """

    def __init__(self, d_model: int, bottleneck: int = 128, mode: str = "factorized",
                 d_ff: int = 1024, seed=None):
        rng = _as_rng(seed)
        self.d_model, self.mode = d_model, mode
        if mode == "factorized":
            self.factor1 = _constrained_factor(rng, (d_model, bottleneck), d_model, bottleneck)
            self.factor2 = Parameter(glorot(rng, (bottleneck, d_model), bottleneck, d_model))
        elif mode == "plain":
            self.w1 = Parameter(glorot(rng, (d_model, d_ff), d_model, d_ff))
            self.b1 = Parameter(np.zeros(d_ff))
            self.w2 = Parameter(glorot(rng, (d_ff, d_model), d_ff, d_model))
            self.b2 = Parameter(np.zeros(d_model))
        else:
            raise ConfigError(f"feed-forward mode must be 'factorized' or 'plain', got {mode!r}")
        self.norm = LayerNorm(d_model)

    def forward(self, x):
        x = as_tensor(x)
        _check_width(x, self.d_model, "FactorizedFF")
        if self.mode == "factorized":
            h = x @ self.factor1 @ self.factor2
        else:
            h = F.relu(x @ self.w1 + self.b1) @ self.w2 + self.b2
        return self.norm(h + x)
