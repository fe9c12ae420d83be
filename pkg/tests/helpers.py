"""Shared oracles for the test suite."""

import numpy as np

from multistream.model import BlockConfig, ModelConfig, StreamConfig
from multistream.tensor import Tensor


def param(rng, *shape, scale=1.0):
    return Tensor(rng.normal(size=shape) * scale, requires_grad=True)


def numeric_grad(f, x: Tensor, eps=1e-5):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x``."""
    g = np.zeros_like(x.data)
    flat, gflat = x.data.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f().item()
        flat[i] = orig - eps
        fm = f().item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def max_rel(a, b, floor=1e-8):
    a, b = np.asarray(a), np.asarray(b)
    return float((np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)).max())


def reference_attention(layer, x):
    """Explicit per-query, per-context-frame attention; ``x`` is ``(B, T, d)``."""
    x = np.asarray(x, dtype=np.float64)
    B, T, d = x.shape
    H, dk, dv = layer.heads, layer.d_k, layer.d_v
    s, L, R = layer.stride, layer.left, layer.right
    out = np.zeros_like(x)
    for b in range(B):
        merged = np.zeros((T, H * dv))
        for h in range(H):
            Wq = layer.wq.data[:, h * dk:(h + 1) * dk]
            Wk = layer.wk.data[:, h * dk:(h + 1) * dk]
            Wv = layer.wv.data[:, h * dv:(h + 1) * dv]
            for t in range(T):
                ctx = [t + j * s for j in range(-L, R + 1) if 0 <= t + j * s < T]
                q = x[b, t] @ Wq
                scores = np.array([q @ (x[b, c] @ Wk) for c in ctx]) / np.sqrt(dk)
                w = np.exp(scores - scores.max())
                w /= w.sum()
                merged[t, h * dv:(h + 1) * dv] = sum(wi * (x[b, c] @ Wv) for wi, c in zip(w, ctx))
        y = merged @ layer.wo.data + x[b]
        mu = y.mean(axis=-1, keepdims=True)
        var = ((y - mu) ** 2).mean(axis=-1, keepdims=True)
        out[b] = (y - mu) / np.sqrt(var + 1e-5) * layer.norm.gain.data + layer.norm.bias.data
    return out


def random_config(rng) -> ModelConfig:
    d = int(rng.integers(2, 7)) * 2
    dq = int(rng.integers(1, 4))
    dims = dict(d_model=d, d_q=dq, d_k=dq, d_v=int(rng.integers(1, 5)),
                bottleneck=int(rng.integers(1, d + 1)),
                ff_mode=str(rng.choice(["factorized", "plain"])), d_ff=int(rng.integers(1, 9)))
    blocks = []
    for _ in range(int(rng.integers(0, 4))):
        streams = [StreamConfig(rate=int(rng.integers(1, 6)), conv_layers=int(rng.integers(0, 4)),
                                heads=int(rng.integers(1, 4)),
                                context=(int(rng.integers(0, 4)), int(rng.integers(0, 4))))
                   for _ in range(int(rng.integers(1, 5)))]
        blocks.append(BlockConfig(streams=streams, **dims))
    return ModelConfig(blocks=blocks, input_dim=int(rng.integers(1, 10)),
                       num_classes=int(rng.integers(2, 12)), seed=int(rng.integers(0, 99)), d_model=d)
