"""Independent reference solvers used only by the test-suite."""

import itertools

import numpy as np


def tv1d_dp(y, lam):
    """Exact 1-D total-variation denoising by dynamic programming.

    Minimizes ``1/2 sum (y_i - b_i)^2 + sum_i lam_i |b_{i+1} - b_i|``.
    The derivative of each forward message is kept as an increasing
    piecewise-linear function (breakpoints + per-piece slope/intercept);
    min-convolution with ``lam|.|`` clips it to ``[-lam, lam]``. O(n^2).
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (n - 1,)) if n > 1 else np.zeros(0)
    # derivative of m_1(b) = 1/2 (b - y_1)^2
    knots = np.zeros(0)
    slopes = np.array([1.0])
    icpts = np.array([-y[0]])
    lo = np.zeros(n - 1)
    hi = np.zeros(n - 1)

    def solve_level(knots, slopes, icpts, level):
        # value of derivative at knots, from the piece on the left of each knot
        vals = slopes[:-1] * knots + icpts[:-1] if knots.size else np.zeros(0)
        j = int(np.searchsorted(vals, level))   # piece index containing the solution
        return (level - icpts[j]) / slopes[j], j

    for k in range(n - 1):
        bm, jm = solve_level(knots, slopes, icpts, -lam[k])
        bp, jp = solve_level(knots, slopes, icpts, lam[k])
        lo[k], hi[k] = bm, bp
        inner = knots[jm:jp]
        knots = np.concatenate([[bm], inner, [bp]])
        slopes = np.concatenate([[0.0], slopes[jm:jp + 1], [0.0]])
        icpts = np.concatenate([[-lam[k]], icpts[jm:jp + 1], [lam[k]]])
        slopes = slopes + 1.0
        icpts = icpts - y[k + 1]
    b = np.empty(n)
    b[-1], _ = solve_level(knots, slopes, icpts, 0.0)
    for k in range(n - 2, -1, -1):
        b[k] = min(max(b[k + 1], lo[k]), hi[k])
    return b


def linreg_tv_enumerate(x, y, lam):
    """Exact global minimizer of ``sum (y_t - th_t x_t)^2 + lam sum |th_{t+1} - th_t|``.

    Scalar linear regression per time point (n = p = 1, all ``x_t != 0``).
    Enumerates every sign pattern in {-1, 0, +1}^(T-1) for the differences;
    each pattern gives an equality-constrained quadratic solved in closed form.
    The restricted objective upper-bounds the true one and touches it at the
    optimum, so the best true objective over all patterns is the optimum.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    T = x.size

    def objective(th):
        return float(np.sum((y - th * x) ** 2) + lam * np.sum(np.abs(np.diff(th))))

    best, best_th = np.inf, None
    for signs in itertools.product((-1, 0, 1), repeat=T - 1):
        # blocks of fused points
        block = np.concatenate([[0], np.cumsum(np.array(signs) != 0)]).astype(int)
        nb = block[-1] + 1
        # linear term from lam * s_t (th_{t+1} - th_t)
        lin = np.zeros(T)
        for t, s in enumerate(signs):
            lin[t + 1] += lam * s
            lin[t] -= lam * s
        A = np.zeros(nb)
        c = np.zeros(nb)
        np.add.at(A, block, x * x)
        np.add.at(c, block, x * y - 0.5 * lin)
        th = (c / A)[block]
        val = objective(th)
        if val < best:
            best, best_th = val, th
    return best, best_th


def kde_grid_modes(samples, h, lo, hi, num=200001, weights=None):
    """Local maxima of a 1-D Gaussian KDE on a dense grid."""
    s = np.asarray(samples, dtype=float).ravel()
    w = np.ones_like(s) if weights is None else np.asarray(weights, dtype=float)
    grid = np.linspace(lo, hi, num)
    dens = np.zeros_like(grid)
    for si, wi in zip(s, w):
        dens += wi * np.exp(-0.5 * ((grid - si) / h) ** 2)
    inner = (dens[1:-1] > dens[:-2]) & (dens[1:-1] >= dens[2:])
    return grid[1:-1][inner]


def gaussian_nll_density(Lam, Theta, x, y):
    """``-2 log N(y; -Lam^{-1} Theta'x, Lam^{-1})`` via scipy."""
    from scipy.stats import multivariate_normal
    cov = np.linalg.inv(Lam)
    mean = -cov @ Theta.T @ x
    return -2.0 * multivariate_normal(mean=mean, cov=cov).logpdf(y)


def scalar_gaussian_prox(lam0, th0, x, y, rho, iters=200):
    """Prox of the p = n = 1 Gaussian loss by nested one-dimensional solves.

    For fixed precision ``l`` the optimal scaled mean is closed form,
    ``th(l) = (rho th0 - 2xy) / (2x^2/l + rho)``. The reduced objective is
    convex in ``l`` and its derivative equals the partial derivative in ``l``
    at ``th(l)``, so ``l`` is found by bisection on that derivative's sign.
    """
    def th_of(l):
        return (rho * th0 - 2 * x * y) / (2 * x * x / l + rho)

    def dl(l):
        th = th_of(l)
        return -1 / l + y * y - th * th * x * x / (l * l) + rho * (l - lam0)

    lo, hi = 1e-12, 1.0
    while dl(hi) < 0:
        hi *= 2
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if dl(mid) < 0:
            lo = mid
        else:
            hi = mid
    l = 0.5 * (lo + hi)
    return l, th_of(l)
