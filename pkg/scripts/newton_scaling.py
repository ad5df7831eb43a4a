"""Time the structured Newton direction against the dense Kronecker solve."""

import argparse
import time

import numpy as np

from tvseg.models import NewtonWorkspace, dense_newton_oracle, gaussian_newton_direction
from tvseg.types import GaussianParams


def best_time(fn, reps=5, inner=10):
    best = np.inf
    for _ in range(reps):
        t = time.perf_counter()
        for _ in range(inner):
            fn()
        best = min(best, (time.perf_counter() - t) / inner)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--ps", default="5,10,20,40,80")
    ap.add_argument("--n", type=int, default=3)
    args = ap.parse_args()
    ps = [int(v) for v in args.ps.split(",")]
    rng = np.random.default_rng(0)
    rows = []
    for p in ps:
        A = rng.standard_normal((p, p))
        params = GaussianParams(A @ A.T / p + np.eye(p), rng.standard_normal((args.n, p)))
        x, y = rng.standard_normal(args.n), rng.standard_normal(p)
        ws = NewtonWorkspace.build(params, x, y, 1.0, params)
        t_fast = best_time(lambda: gaussian_newton_direction(ws, x, 1.0))
        t_dense = np.nan
        if p * (args.n + p) <= 64:
            t_dense = best_time(lambda: dense_newton_oracle(params, x, 1.0, ws.gradLambda, ws.gradTheta))
        rows.append((p, t_fast, t_dense))
        print(f"p={p:4d}  structured {t_fast * 1e3:9.3f} ms   dense {t_dense * 1e3:9.3f} ms")
    logp = np.log([r[0] for r in rows])
    slope = np.polyfit(logp, np.log([r[1] for r in rows]), 1)[0]
    print(f"log-log slope of the structured step: {slope:.2f}")


if __name__ == "__main__":
    main()
