#!/usr/bin/env python3
"""Time the compiled kernels against the pure-Python fallback.

Both backends expose the same two hot routines: the lattice search for the
minimum divergence over top-k-violating distributions, and the batched
transformer forward pass.  This script times each on representative sizes
and checks that the answers agree while it is at it.

Run from the repository root after installing the package:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --repeats 5 --batch 128
"""

import argparse
import time

import numpy as np

from attncert import _kernels_py
from attncert import model
from attncert._backend import available_backends

try:
    from attncert import _kernels as _compiled
except ImportError:
    _compiled = None


def _best_of(fn, repeats):
    """Best wall-clock time over `repeats` calls, plus the last result."""
    best = float("inf")
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


def _dirichlet(rng, n):
    g = rng.gamma(1.0, size=n)
    return g / g.sum()


def bench_simplex(repeats):
    rng = np.random.default_rng(20240817)
    cases = [
        # (n, k, k0, alpha, grid_points)
        (4, 2, 1, 2.0, 160),
        (5, 2, 2, 2.0, 80),
        (6, 3, 2, 4.0, 48),
    ]
    rows = []
    for n, k, k0, alpha, grid in cases:
        w = _dirichlet(rng, n)
        in_topk = np.zeros(n, dtype=bool)
        in_topk[np.argsort(-w)[:k]] = True
        args = (w, in_topk, k, k0, alpha, grid)

        t_py, r_py = _best_of(lambda: _kernels_py.simplex_min_divergence(*args),
                              repeats)
        if _compiled is None:
            rows.append((f"simplex n={n} G={grid}", t_py, None))
            continue
        t_c, r_c = _best_of(lambda: _compiled.simplex_min_divergence(*args),
                            repeats)
        assert r_py == r_c, f"backend disagreement: {r_py} vs {r_c}"
        rows.append((f"simplex n={n} G={grid}", t_py, t_c))
    return rows


def bench_forward(repeats, batch):
    params = model.init_params(image_size=16, patch_size=4, q=8, layers=2,
                               classes=2, seed=11)
    rng = np.random.default_rng(3)
    images = rng.random((batch, 16, 16))
    w = params.weights64()
    rows = []
    for rollout in (False, True):
        args = (images, w["w_embed"], w["w_q"], w["w_k"], w["w_v"], w["w_l"],
                w["w_head"], w["summary"], params.patch_size, params.layers,
                rollout, model.LAYER_NORM_EPS)
        t_py, (lp, ap) = _best_of(lambda: _kernels_py.forward_batch(*args),
                                  repeats)
        label = f"forward b={batch} rollout={'on' if rollout else 'off'}"
        if _compiled is None:
            rows.append((label, t_py, None))
            continue
        t_c, (lc, ac) = _best_of(lambda: _compiled.forward_batch(*args),
                                 repeats)
        np.testing.assert_allclose(lc, lp, atol=1e-12)
        np.testing.assert_allclose(ac, ap, atol=1e-12)
        rows.append((label, t_py, t_c))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=3,
                    help="timing repeats per case; best is reported")
    ap.add_argument("--batch", type=int, default=64,
                    help="image batch size for the forward pass")
    args = ap.parse_args()

    print("backends:", ", ".join(sorted(available_backends())))
    if _compiled is None:
        print("compiled extension not importable; timing fallback only\n")

    rows = bench_simplex(args.repeats) + bench_forward(args.repeats,
                                                       args.batch)
    width = max(len(r[0]) for r in rows)
    header = f"{'case':<{width}}  {'python':>10}  {'compiled':>10}  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for label, t_py, t_c in rows:
        if t_c is None:
            print(f"{label:<{width}}  {t_py * 1e3:>8.2f}ms  {'--':>10}  {'--':>8}")
        else:
            print(f"{label:<{width}}  {t_py * 1e3:>8.2f}ms  "
                  f"{t_c * 1e3:>8.2f}ms  {t_py / t_c:>7.1f}x")


if __name__ == "__main__":
    main()
