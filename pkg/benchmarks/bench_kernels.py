"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--n 1000] [--k 50] [--nnz 20000]

Each kernel runs once to trigger JIT compilation, then the best of
``--repeat`` runs is reported. The last row scores a whole interval
end to end with each path. Run with TLR_DISABLE_NUMBA=1 to check that
only the numpy column is produced.
"""
import argparse
import timeit

import numpy as np

from tlr import _accel, harness
from tlr.coldstart import build_folding_index, folded_log_likelihood
from tlr.data import average_matrix
from tlr.lowrank import model_from_average, spectral_norm


def best_ms(fn, repeat):
    fn()
    return 1e3 * min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--k", type=int, default=50)
    ap.add_argument("--nnz", type=int, default=20_000)
    ap.add_argument("--queries", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    n, k = args.n, args.k
    us = rng.random((n, k)) / k
    v = rng.random((n, k)) / k
    rows = rng.integers(0, n, args.nnz)
    cols = rng.integers(0, n, args.nnz)
    queries = rng.normal(size=(args.queries, k))

    cases = {
        "entry_values": lambda flag: _accel.entry_values(us, v, rows, cols, use_numba=flag),
        "log_odds_sum": lambda flag: _accel.log_odds_sum(us, v, rows, cols, 1e-6,
                                                         use_numba=flag),
        "nearest_rows": lambda flag: _accel.nearest_rows(us, queries, use_numba=flag),
    }

    # end-to-end: fold and score one interval of a low-rank model
    A, B = rng.random((n, 5)), rng.random((n, 5))
    pi = A @ B.T
    pi *= 0.01 / pi.mean()
    d = harness.sample_dataset([pi], [0] * 11, seed=1)
    avg = average_matrix(d[:10])
    model = model_from_average(avg, spectral_norm(avg) / 8)
    idx = build_folding_index(avg, model)
    b = d[10]
    b = b.with_entries(np.r_[b.users, [n, n + 1]], np.r_[b.objects, [n, 3]])
    _ = model.zero_sums

    def score(flag):
        saved = _accel.USE_NUMBA
        _accel.USE_NUMBA = saved and flag
        try:
            return folded_log_likelihood(b, model, idx)
        finally:
            _accel.USE_NUMBA = saved

    cases[f"folded_ll ({b.nnz} nnz, k={model.k})"] = score

    print(f"numba available: {_accel.USE_NUMBA}")
    print(f"{'kernel':<34}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, fn in cases.items():
        t_np = best_ms(lambda: fn(False), args.repeat)
        if _accel.USE_NUMBA:
            t_nb = best_ms(lambda: fn(True), args.repeat)
            print(f"{name:<34}{t_np:>10.3f}{t_nb:>10.3f}{t_np / t_nb:>8.1f}x")
        else:
            print(f"{name:<34}{t_np:>10.3f}{'-':>10}{'-':>9}")


if __name__ == "__main__":
    main()
