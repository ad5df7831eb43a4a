import numpy as np

from tvseg.types import GaussianParams


def random_pd(rng, p, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    ev = np.exp(rng.uniform(0, np.log(cond), p))
    return (Q * ev) @ Q.T


def random_gaussian(rng, p, n):
    return GaussianParams(random_pd(rng, p), rng.standard_normal((n, p)))


def random_instance(rng, p, n):
    """Point, reference point, observation and penalty for one prox problem."""
    params = random_gaussian(rng, p, n)
    params0 = random_gaussian(rng, p, n)
    x = rng.standard_normal(n)
    y = rng.standard_normal(p)
    rho = float(np.exp(rng.uniform(np.log(0.1), np.log(10.0))))
    return params, params0, x, y, rho


def rel_err(a, b):
    a = np.concatenate([np.ravel(v) for v in a])
    b = np.concatenate([np.ravel(v) for v in b])
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))
