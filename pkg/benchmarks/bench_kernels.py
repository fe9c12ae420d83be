"""Compare the compiled and NumPy strided-window kernels.

    python benchmarks/bench_kernels.py [--repeat N]

Prints per-call times for each kernel and for one attention layer's
forward + backward pass at a few sizes, one row per (size, backend).
"""

import argparse
import timeit

import numpy as np

from multistream import _kernels
from multistream import functional as F
from multistream.layers import TimeRestrictedAttention
from multistream.tensor import Tensor

# (groups, frames, width, stride, left, right)
SIZES = [
    (8, 96, 8, 1, 3, 3),
    (15, 200, 40, 2, 15, 15),
    (30, 400, 80, 3, 15, 15),
]


def bench_kernels(impl, size, repeat):
    G, T, d, s, L, R = size
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(G, T, d)), rng.normal(size=(G, T, d))
    w = rng.normal(size=(G, T, L + R + 1))
    cases = {
        "window_dot": lambda: impl.window_dot(a, b, s, L, R),
        "window_mix": lambda: impl.window_mix(w, b, s, L, R),
        "window_mix_t": lambda: impl.window_mix_t(w, a, s, L, R),
    }
    return {name: min(timeit.repeat(fn, number=1, repeat=repeat)) for name, fn in cases.items()}


def bench_layer(size, repeat):
    G, T, d, s, L, R = size
    layer = TimeRestrictedAttention(64, heads=max(G // 4, 1), d_q=d, d_k=d, d_v=d, stride=s,
                                    left=L, right=R, seed=0)
    x = np.random.default_rng(1).normal(size=(4, T, 64))

    def step():
        xt = Tensor(x, requires_grad=True)
        layer.zero_grad()
        (layer(xt) * 1.0).sum().backward()

    return min(timeit.repeat(step, number=1, repeat=repeat))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    impls = _kernels.implementations()
    if "cython" not in impls:
        print("compiled kernels are not built; only the NumPy backend is timed")
    header = f"{'size (G,T,d,s,L,R)':<26} {'backend':<8} " + "".join(
        f"{n:>14}" for n in ("window_dot", "window_mix", "window_mix_t", "attn fwd+bwd"))
    print(header)
    print("-" * len(header))
    for size in SIZES:
        base = None
        for name, impl in sorted(impls.items(), reverse=True):
            times = bench_kernels(impl, size, args.repeat)
            _kernels._impl = impl  # route the layer through this backend
            times["layer"] = bench_layer(size, args.repeat)
            cells = "".join(f"{t * 1e3:12.2f}ms" for t in times.values())
            print(f"{str(size):<26} {name:<8} {cells}")
            if base is None:
                base = times
            else:
                speedup = "".join(f"{base[k] / times[k]:13.1f}x" for k in times)
                print(f"{'':<26} {'speedup':<8} {speedup}")
        _kernels._impl = impls.get("cython", impls["python"])


if __name__ == "__main__":
    main()
