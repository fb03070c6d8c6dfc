"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Each kernel is called once before timing so numba compilation is excluded.
Prints one line per kernel and shape, with best-of-``repeat`` wall times.
"""

import argparse
import timeit

import numpy as np

from amattack import _kernels


def cases(rng):
    for n, p in ((1_000, 8), (40_000, 8), (200_000, 12)):
        yield "grad_hess", f"n={n} p={p}", (
            rng.normal(size=(n, p)), rng.normal(size=n), rng.random(n), rng.random(n),
        )
    for n_train, n_val in ((500, 100), (4_000, 1_000)):
        order = np.argsort(rng.random((n_val, n_train)), axis=1)
        yield "knn_shapley", f"N={n_train} val={n_val} k=10", (order, rng.random((n_val, n_train)), 10)
    for n, k in ((10_000, 4), (200_000, 16)):
        yield "sample_categorical", f"n={n} K={k}", (rng.dirichlet(np.ones(k), size=n), rng.random(n))


def best_time(fn, args, repeat):
    fn(*args)
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    if not _kernels.HAVE_NUMBA:
        print("numba unavailable or disabled; timing the numpy path only")
    print(f"{'kernel':<20}{'shape':<26}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, shape, call_args in cases(np.random.default_rng(args.seed)):
        t_np = best_time(getattr(_kernels, f"{name}_numpy"), call_args, args.repeat)
        fast = getattr(_kernels, f"{name}_numba")
        if fast is None:
            print(f"{name:<20}{shape:<26}{1e3 * t_np:>10.3f}{'-':>10}{'-':>9}")
            continue
        t_nb = best_time(getattr(_kernels, name), call_args, args.repeat)
        print(f"{name:<20}{shape:<26}{1e3 * t_np:>10.3f}{1e3 * t_nb:>10.3f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
