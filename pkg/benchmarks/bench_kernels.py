"""Time the numba kernels against their numpy fallbacks on realistic shapes.

Run with ``python benchmarks/bench_kernels.py [--repeat N]``. Inputs come from a
copycat generator trained on a simulated domain, so box layouts and row
distributions match what training and imputation actually see. Every pair is
checked for identical output before it is timed.
"""

import argparse
import time

import numpy as np

from gentrees import kernels
from gentrees.copycat import copycat_train
from gentrees.data import mcar_corrupt
from gentrees.evaluation import simulate
from gentrees.trees import box_volume


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t)
    return min(times)


def cases(splits, rows, seed):
    real = simulate("randGauss", seed)
    result = copycat_train(real, max_splits=splits)
    gt, tree = result.gt, result.dt.tree
    schema = real.schema
    rng = np.random.default_rng(seed)
    X = real.values[rng.integers(0, len(real), rows)]
    feature, threshold, right_mask, left, right = tree.arrays()
    leaves, w = gt.leaf_weights()
    lo, hi, mask = gt.tree.box_arrays(leaves)
    vol = np.array([box_volume(gt.tree.boxes[lf], schema) for lf in leaves])
    holes = mcar_corrupt(real, 0.3, seed).values[rng.integers(0, len(real), rows)]
    return {
        "route_rows": (feature, threshold, right_mask, left, right, np.ascontiguousarray(X)),
        "overlap_fractions": (lo, hi, mask, lo, hi, mask, schema.kinds, schema.lengths),
        "select_impute_leaves": (np.ascontiguousarray(holes), lo, hi, mask, schema.kinds, schema.upper, w, vol),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--splits", type=int, default=500, help="copycat splits for the test generator")
    parser.add_argument("--rows", type=int, default=200_000, help="rows routed / imputed")
    parser.add_argument("--repeat", type=int, default=5, help="timings per kernel; the best is reported")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    print(f"{'kernel':24s} {'numpy s':>10s} {'numba s':>10s} {'speedup':>8s}")
    for name, inputs in cases(args.splits, args.rows, args.seed).items():
        fast = getattr(kernels, f"{name}_numba")
        slow = getattr(kernels, f"{name}_numpy")
        a, b = fast(*inputs), slow(*inputs)  # also triggers compilation
        if not np.allclose(a, b, rtol=0, atol=1e-12):
            raise SystemExit(f"{name}: numba and numpy outputs differ")
        t_np = best_of(slow, inputs, args.repeat)
        t_nb = best_of(fast, inputs, args.repeat)
        print(f"{name:24s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
