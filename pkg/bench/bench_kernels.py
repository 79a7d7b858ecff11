"""Time the compiled tree kernels against the numpy fallback.

Run with ``python3 bench/bench_kernels.py [--rows N] [--trees T] [--repeat R]``.
Both backends fit the same forest; the script checks that the fitted models
are byte-identical before reporting timings.
"""
import argparse
import time

import numpy as np

from floodgen import kernels
from floodgen.depth_estimator import GbtConfig, fit_gbt


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=252)
    ap.add_argument("--features", type=int, default=21)
    ap.add_argument("--trees", type=int, default=100)
    ap.add_argument("--predict-rows", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    if kernels.compiled_kernels is None:
        raise SystemExit("compiled kernels are not built; nothing to compare")
    rng = np.random.default_rng(0)
    X = rng.gamma(2.0, size=(args.rows, args.features))
    y = np.maximum(X[:, 0] * 0.3 + X[:, 1] * X[:, 2] * 0.05 + rng.normal(0, 0.05, args.rows), 0)
    Xp = rng.gamma(2.0, size=(args.predict_rows, args.features))
    cfg = GbtConfig(n_trees=args.trees)

    results = {}
    for name in ("compiled", "python"):
        fit_t, model = best_of(lambda: fit_gbt(X, y, cfg, backend=name), args.repeat)
        pred_t, pred = best_of(lambda: model.predict_raw(Xp, backend=name), args.repeat)
        results[name] = (fit_t, pred_t, model.to_bytes(), pred)

    same_model = results["compiled"][2] == results["python"][2]
    same_pred = np.array_equal(results["compiled"][3], results["python"][3])
    print(f"fit: {args.rows} rows x {args.features} features, {args.trees} trees; "
          f"predict: {args.predict_rows} rows; best of {args.repeat}")
    print(f"{'backend':<10}{'fit s':>10}{'predict s':>12}")
    for name, (fit_t, pred_t, _, _) in results.items():
        print(f"{name:<10}{fit_t:>10.4f}{pred_t:>12.4f}")
    c, p = results["compiled"], results["python"]
    print(f"speed-up  {p[0] / c[0]:>10.1f}x{p[1] / c[1]:>11.1f}x")
    print(f"identical model bytes: {same_model}; identical predictions: {same_pred}")
    return 0 if same_model and same_pred else 1


if __name__ == "__main__":
    raise SystemExit(main())
