"""Compare the compiled kernels against the numpy fallback.

Runs both backends on identical inputs at full-resolution frame sizes,
checks the outputs are bitwise identical, and reports best-of-N wall
times. Usage:

    python3 benchmarks/bench_kernels.py [--nvox 640000] [--repeat 5]
"""

import argparse
import time

import numpy as np

from occ4d import _kernels_numpy

try:
    from occ4d import _native
except ImportError:
    _native = None


def best_of(repeat, fn, *args):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def check_equal(a, b):
    if isinstance(a, tuple):
        assert len(a) == len(b)
        for x, y in zip(a, b):
            check_equal(x, y)
        return
    assert a.dtype == b.dtype, (a.dtype, b.dtype)
    assert np.array_equal(a, b)


def pair_counts_inputs(rng, nvox):
    a = rng.integers(0, 6, size=nvox).astype(np.uint32)
    b = rng.integers(0, 6, size=nvox).astype(np.uint32)
    mask = rng.random(nvox) < 0.8
    return a, b, mask


def value_counts_inputs(rng, nvox):
    v = rng.integers(0, 5, size=nvox).astype(np.uint32)
    mask = rng.random(nvox) < 0.8
    return v, mask


def assign_inputs(rng, npts, nboxes):
    pts = rng.uniform(-40, 40, size=(3, npts))
    centers = rng.uniform(-35, 35, size=(3, nboxes))
    halves = rng.uniform(0.5, 3.0, size=(3, nboxes))
    yaw = rng.uniform(-np.pi, np.pi, size=nboxes)
    tids = np.arange(1, nboxes + 1, dtype=np.uint32)
    return (
        pts[0], pts[1], pts[2],
        centers[0], centers[1], centers[2],
        halves[0], halves[1], halves[2],
        np.cos(yaw), np.sin(yaw), tids,
    )


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nvox", type=int, default=200 * 200 * 16)
    ap.add_argument("--npts", type=int, default=50_000)
    ap.add_argument("--nboxes", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    if _native is None:
        raise SystemExit(
            "compiled backend not importable; build it first "
            "(pip install -e . --no-build-isolation)"
        )

    rng = np.random.default_rng(0)
    cases = [
        ("pair_counts", "pair_counts", pair_counts_inputs(rng, args.nvox)),
        ("value_counts", "value_counts", value_counts_inputs(rng, args.nvox)),
        (
            "assign_nearest_box",
            "assign_nearest_box",
            assign_inputs(rng, args.npts, args.nboxes),
        ),
    ]

    print(f"{'kernel':<20} {'numpy':>10} {'native':>10} {'speedup':>8}")
    for label, attr, inputs in cases:
        t_np, out_np = best_of(args.repeat, getattr(_kernels_numpy, attr), *inputs)
        t_na, out_na = best_of(args.repeat, getattr(_native, attr), *inputs)
        check_equal(out_np, out_na)
        print(
            f"{label:<20} {t_np * 1e3:>8.2f}ms {t_na * 1e3:>8.2f}ms "
            f"{t_np / t_na:>7.1f}x"
        )
    print("outputs bitwise identical across backends")


if __name__ == "__main__":
    main()
