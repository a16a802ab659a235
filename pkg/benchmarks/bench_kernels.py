"""Compare the numba and numpy versions of the selection hot loops.

Run with ``python benchmarks/bench_kernels.py``.  The numba functions are
called once before timing so compilation is excluded; the first line of
output reports the compile (or cache load) time separately.
"""

import argparse
import time
import timeit

import numpy as np

from kdclassifier import _kernels


def _inputs(L, K, seed):
    rng = np.random.default_rng(seed)
    log_p = rng.normal(-200.0, 30.0, (L, K))
    weights = rng.dirichlet(np.ones(K))
    X = rng.random((L, 64))
    sq = (X * X).sum(axis=1)
    distances = np.maximum(sq[:, None] + sq[None, :] - 2 * X @ X.T, 0.0)
    np.fill_diagonal(distances, np.inf)
    rows = np.setdiff1d(np.arange(L), rng.choice(L, K, replace=False))
    scale = float(distances[np.isfinite(distances)].mean())
    return log_p, weights, distances, rows, scale


def _best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--samples", type=int, nargs="+", default=[500, 2000, 6000])
    parser.add_argument("--kernels", type=int, default=100)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    if not _kernels.USE_NUMBA:
        print("numba unavailable or disabled (KDCLASSIFIER_NUMBA); timing the numpy path only")

    warm = None
    print(f"{'function':<18}{'L':>7}{'K':>6}{'numpy s':>12}{'numba s':>12}{'speedup':>9}{'max |diff|':>13}")
    for L in args.samples:
        K = min(args.kernels, L - 1)
        log_p, weights, distances, rows, scale = _inputs(L, K, args.seed)
        cases = [
            ("removal_scores", (log_p, weights), _kernels.removal_scores_numpy,
             getattr(_kernels, "removal_scores_numba", None)),
            ("assignment_votes", (distances, rows, scale), _kernels.assignment_votes_numpy,
             getattr(_kernels, "assignment_votes_numba", None)),
        ]
        for name, call_args, np_fn, nb_fn in cases:
            t_np = _best(lambda: np_fn(*call_args), args.repeat)
            ref = np_fn(*call_args)
            if nb_fn is None:
                print(f"{name:<18}{L:>7}{K:>6}{t_np:>12.4f}{'-':>12}{'-':>9}{'-':>13}")
                continue
            if warm is None:
                start = time.perf_counter()
                _kernels.removal_scores_numba(log_p, weights)
                _kernels.assignment_votes_numba(distances, rows, scale)
                warm = time.perf_counter() - start
                print(f"# numba compile/cache load: {warm:.2f} s")
            t_nb = _best(lambda: nb_fn(*call_args), args.repeat)
            diff = float(np.max(np.abs(nb_fn(*call_args) - ref)))
            print(f"{name:<18}{L:>7}{K:>6}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>9.1f}{diff:>13.3g}")


if __name__ == "__main__":
    main()
