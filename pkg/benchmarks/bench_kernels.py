"""Throughput comparison of the GRU kernel backends.

Run:  python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import time

import numpy as np

from emochat.kernels import available_backends, get_backend

SIZES = [
    # (T, B, H)
    (20, 8, 32),
    (30, 32, 128),
    (30, 128, 256),
]


def bench(impl, T, B, H, repeat, dtype=np.float32):
    rng = np.random.default_rng(0)

    def r(*shape):
        return (rng.standard_normal(shape) * 0.1).astype(dtype)

    xz, xr, xn = r(T, B, H), r(T, B, H), r(T, B, H)
    uz, ur, un = r(H, H), r(H, H), r(H, H)
    h0 = r(B, H)
    mask = np.ones((T, B), dtype=dtype)
    dhs = r(T, B, H)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        hs, zs, rs, ns = impl.gru_forward(xz, xr, xn, uz, ur, un, h0, mask)
        impl.gru_backward(dhs, hs, zs, rs, ns, uz, ur, un, h0, mask)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    header = f"{'T x B x H':>16}" + "".join(f"{b:>14}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for T, B, H in SIZES:
        times = [bench(get_backend(b), T, B, H, args.repeat) for b in backends]
        row = f"{f'{T} x {B} x {H}':>16}" + "".join(f"{t * 1e3:>12.2f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>9.2f}x"
        print(row)


if __name__ == "__main__":
    main()
