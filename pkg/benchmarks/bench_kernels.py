"""Time the compiled kernels against the pure-Python fallback.

Run from the repository root after installing the package:

    python benchmarks/bench_kernels.py --size 64 --repeat 5
"""

import argparse
import timeit

import numpy as np

from fplab import _pykernels

try:
    from fplab import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases(size: int, rng: np.random.Generator):
    plane = rng.random((size, size))
    kernel = rng.random((5, 5))
    mag = rng.random((size, size))
    bins = rng.integers(0, 4, (size, size)).astype(np.int8)
    levels = rng.integers(0, 16, (size, size))
    points = (rng.random((size, size)) < 0.05).astype(np.uint8)
    return {
        "correlate2d 5x5": lambda k: k.correlate2d(plane, kernel),
        "nonmax_suppress": lambda k: k.nonmax_suppress(mag, bins),
        "hysteresis": lambda k: k.hysteresis(mag, 0.3, 0.7),
        "glcm_counts": lambda k: k.glcm_counts(levels, 1, 1, 16),
        "edt_squared": lambda k: k.edt_squared(points),
    }


def best_time(fn, module, repeat: int) -> float:
    return min(timeit.repeat(lambda: fn(module), number=1, repeat=repeat))


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--size", type=int, default=64, help="square plane side in pixels")
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    print(f"plane {args.size}x{args.size}, best of {args.repeat}")
    print(f"{'kernel':<18}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, fn in cases(args.size, rng).items():
        py = best_time(fn, _pykernels, args.repeat)
        if _ckernels is None:
            print(f"{name:<18}{py * 1e3:>12.3f}{'n/a':>12}{'n/a':>10}")
            continue
        cy = best_time(fn, _ckernels, args.repeat)
        same = np.array_equal(fn(_pykernels), fn(_ckernels))
        flag = "" if same else "  (outputs differ!)"
        print(f"{name:<18}{py * 1e3:>12.3f}{cy * 1e3:>12.3f}{py / cy:>9.1f}x{flag}")


if __name__ == "__main__":
    main()
