"""Head-to-head timing of the compiled kernel core against the numpy fallback.

Run:  python3 benchmarks/bench_kernels.py [--repeats 5]

Both implementations are imported side by side, so the comparison is free
of process noise; the reported number is the best of the repeats.  The
matrix builder is the one that matters: it dominates Volterra path
generation until its LRU cache warms up.
"""
import argparse
import time

import numpy as np

from fbmflow import _kernels_py
from fbmflow._backend import COMPILED

if COMPILED:
    from fbmflow import _ckernels
else:
    _ckernels = None


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def row(label, pure_fn, fast_fn, repeats):
    tp = best_of(pure_fn, repeats)
    if fast_fn is None:
        print(f"{label:<38} pure {tp * 1e3:9.3f} ms   compiled unavailable")
        return
    tc = best_of(fast_fn, repeats)
    print(f"{label:<38} pure {tp * 1e3:9.3f} ms   compiled {tc * 1e3:9.3f} ms"
          f"   speedup {tp / tc:6.2f}x")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    H = 0.25
    s = np.linspace(1e-4, 1.0, 4096, endpoint=False)

    cases = [
        ("ch_const, 10^4 calls",
         lambda m: lambda: [m.ch_const(0.05 + 0.4 * i / 9999) for i in range(10_000)]),
        ("kernel_values, t=1, 4096 nodes",
         lambda m: lambda: m.kernel_values(H, 1.0, s)),
        ("cell_integral_matrix, n=512",
         lambda m: lambda: m.cell_integral_matrix(H, 512, 1.0 / 512)),
        ("cell_integral_matrix, n=2048",
         lambda m: lambda: m.cell_integral_matrix(H, 2048, 1.0 / 2048)),
    ]
    print(f"backend available: {'compiled + pure' if COMPILED else 'pure only'}")
    for label, make in cases:
        row(label, make(_kernels_py),
            make(_ckernels) if COMPILED else None, args.repeats)

    if COMPILED:
        a = _kernels_py.cell_integral_matrix(H, 512, 1.0 / 512)
        b = _ckernels.cell_integral_matrix(H, 512, 1.0 / 512)
        gap = float(np.max(np.abs(a - b) / (np.abs(a) + 1e-300)))
        print(f"max relative disagreement (n=512 matrix): {gap:.3e}")


if __name__ == "__main__":
    main()
