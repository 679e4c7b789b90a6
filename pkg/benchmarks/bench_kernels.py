"""Time every hot kernel in its numba and pure-numpy flavour.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--quick]

Both flavours run on identical inputs; the script also reports the largest
absolute difference between them, so it doubles as a parity check.  The
numba column excludes compilation (one warm-up call is made first).
"""

import argparse
import time

import numpy as np

from desnet import kernels


def _cplx(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def make_cases(rng, quick=False):
    s = 4 if quick else 1
    F, T, M, K = 257 // s, 250 // s, 4, 10
    B, H = 8, 64 // s
    acts = rng.uniform(0.05, 0.95, (T, B, 4 * H))
    cs = rng.standard_normal((T, B, H))
    return {
        "overlap_add": (rng.standard_normal((B, T, 512)), 256, (T - 1) * 256 + 512),
        "wpe_stats": (_cplx(rng, F, T, M * K), _cplx(rng, F, T, M), rng.uniform(0.1, 2.0, (F, T))),
        "wpe_filter": (_cplx(rng, F, T, M), 0.1 * _cplx(rng, F, M * K, M), 3, K),
        "col2im": (rng.standard_normal((B, 16, 5, 2, 64 // s, T)), 2, 1, 2 * (64 // s) + 3, T + 1),
        "lstm_forward": (rng.standard_normal((T, B, 4 * H)), 0.1 * rng.standard_normal((H, 4 * H)),
                         np.zeros((B, H)), np.zeros((B, H))),
        "lstm_backward": (rng.standard_normal((T, B, H)), np.tanh(cs), cs, acts,
                          0.1 * rng.standard_normal((H, 4 * H)), np.zeros((B, H)), np.zeros((B, H))),
    }


def _best(fn, args, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def _maxdiff(a, b):
    if isinstance(a, tuple):
        return max(_maxdiff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(a - b)))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="smaller inputs")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    cases = make_cases(np.random.default_rng(args.seed), args.quick)

    print("%-14s %12s %12s %9s %12s" % ("kernel", "numpy [ms]", "numba [ms]", "speedup", "max |diff|"))
    for name, inputs in cases.items():
        np_fn, nb_fn = kernels.NUMPY_IMPLS[name], kernels.NUMBA_IMPLS[name]
        nb_fn(*inputs)  # compile
        t_np, out_np = _best(np_fn, inputs, args.repeat)
        t_nb, out_nb = _best(nb_fn, inputs, args.repeat)
        print("%-14s %12.3f %12.3f %8.2fx %12.2e"
              % (name, 1e3 * t_np, 1e3 * t_nb, t_np / t_nb, _maxdiff(out_np, out_nb)))


if __name__ == "__main__":
    main()
