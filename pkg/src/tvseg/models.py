"""Per-time-point proximal operators.

Each operator minimizes a single-observation loss plus ``(rho/2)||theta - theta0||^2``.
Losses are *twice* the negative log-likelihood with additive constants
dropped, e.g. for the conditional Gaussian::

    f(Lambda, Theta) = -log det Lambda + y'Lambda y + c'Lambda^{-1}c + 2 y'c,   c = Theta'x

The structured Newton solver works in the eigenbasis of ``Lambda^{-1} = W S W'``
where the Hessian is diagonal plus rank 2p, and the Woodbury identity reduces
each Newton step to one dense 2p x 2p solve. All heavy routines are batched
over a leading time axis so the ADMM theta-update runs as array operations.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .types import (GAUSSIAN, LINREG, DimensionError, GaussianParams,
                    InvalidParameterError, decode_params, encode_params,
                    is_positive_definite, symmetrize)

ARMIJO = 1e-4
MAX_HALVINGS = 60
ROUNDING = 64 * np.finfo(float).eps


# ---------------------------------------------------------------------------
# batched helpers: theta rows <-> (Lambda, Theta) stacks
# ---------------------------------------------------------------------------

def _split(theta: np.ndarray, n: int, p: int):
    B = theta.shape[0]
    Lam = theta[:, :p * p].reshape(B, p, p).transpose(0, 2, 1)
    Th = theta[:, p * p:].reshape(B, p, n).transpose(0, 2, 1)
    return Lam, Th


def _join(Lam: np.ndarray, Th: np.ndarray) -> np.ndarray:
    B = Lam.shape[0]
    return np.concatenate([Lam.transpose(0, 2, 1).reshape(B, -1),
                           Th.transpose(0, 2, 1).reshape(B, -1)], axis=1)


def _eig(Lam):
    """Eigen-decomposition of a symmetric stack; returns (evals, evecs)."""
    return np.linalg.eigh(symmetrize(Lam))


def _nll_from_eig(evals, evecs, Lam, Th, X, Y):
    c = np.einsum("bnp,bn->bp", Th, X)
    Wc = np.einsum("bij,bi->bj", evecs, c)
    quad = np.sum(Wc ** 2 / evals, axis=1)
    yLy = np.einsum("bi,bij,bj->b", Y, Lam, Y)
    return -np.sum(np.log(evals), axis=1) + yLy + quad + 2.0 * np.sum(Y * c, axis=1)


def _prox_objective(Lam, Th, X, Y, rho, Lam0, Th0):
    """Objective and feasibility mask for a stack of candidates."""
    evals, evecs = _eig(Lam)
    ok = evals[:, 0] > 0
    safe = np.where(ok[:, None], evals, 1.0)
    val = _nll_from_eig(safe, evecs, Lam, Th, X, Y)
    val = val + 0.5 * rho * (np.sum((Lam - Lam0) ** 2, axis=(1, 2))
                             + np.sum((Th - Th0) ** 2, axis=(1, 2)))
    val = np.where(ok, val, np.inf)
    return val, ok, evals, evecs


def _gradients(evals, evecs, Lam, Th, X, Y, rho, Lam0, Th0):
    S = 1.0 / evals
    Linv = (evecs * S[:, None, :]) @ np.swapaxes(evecs, 1, 2)
    c = np.einsum("bnp,bn->bp", Th, X)
    m = np.einsum("bij,bj->bi", Linv, c)
    gL = -Linv + Y[:, :, None] * Y[:, None, :] - m[:, :, None] * m[:, None, :] + rho * (Lam - Lam0)
    gT = 2.0 * X[:, :, None] * (m + Y)[:, None, :] + rho * (Th - Th0)
    return symmetrize(gL), gT


def _structured_direction(evals, evecs, Th, X, gL, gT, rho):
    """Newton step ``-(H^{-1} grad)`` for a batch, never forming Kronecker products.

    Returns (U, V, failed) where ``failed`` marks items whose inner 2p x 2p
    system could not be factorized (those fall back to ``-grad/rho``).
    """
    Bsz, p = evals.shape
    W = evecs
    s = 1.0 / evals
    rs = np.sqrt(s)
    Wt = np.swapaxes(W, 1, 2)
    a = -s * ((X[:, None, :] @ Th) @ W)[:, 0, :]             # -S W'Theta'x
    G1 = Wt @ gL @ W
    G2 = gT @ W                                              # gT W
    Q = s[:, :, None] * s[:, None, :] + rho                  # s_i s_j + rho

    # D^{-1} g
    U1 = G1 / Q
    V1 = G2 / rho
    # A' (U1, V1)
    Vx = np.einsum("bnp,bn->bp", V1, X)
    alpha = rs * (np.einsum("bij,bi->bj", U1, a) + Vx)
    beta = rs * (np.einsum("bij,bj->bi", U1, a) + Vx)

    # I + A' D^{-1} A as a 2x2 block matrix of p x p blocks
    xx = np.sum(X * X, axis=1)
    Xd = (xx / rho)[:, None] * s
    c1 = s * np.einsum("bi,bij->bj", a * a, 1.0 / Q)
    ra = rs * a
    C2 = ra[:, :, None] * ra[:, None, :] / Q
    eye = np.eye(p)
    diag_blk = eye * (1.0 + Xd + c1)[:, None, :]
    off_blk = eye * Xd[:, None, :] + C2
    M = np.concatenate([np.concatenate([diag_blk, off_blk], axis=2),
                        np.concatenate([off_blk, diag_blk], axis=2)], axis=1)
    rhs = np.concatenate([alpha, beta], axis=1)

    failed = np.zeros(Bsz, dtype=bool)
    try:
        sol = np.linalg.solve(M, rhs[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        sol = np.zeros_like(rhs)
        for b in range(Bsz):
            try:
                sol[b] = np.linalg.solve(M[b], rhs[b])
            except np.linalg.LinAlgError:
                failed[b] = True
    if not np.all(np.isfinite(sol)):
        failed |= ~np.all(np.isfinite(sol), axis=1)
        sol[failed] = 0.0
    ah, bh = sol[:, :p], sol[:, p:]

    # subtract D^{-1} A (ah, bh)
    top = a[:, :, None] * (rs * ah)[:, None, :] + (rs * bh)[:, :, None] * a[:, None, :]
    bottom = X[:, :, None] * (rs * (ah + bh))[:, None, :]
    Ut = U1 - top / Q
    Vt = V1 - bottom / rho

    U = -symmetrize(W @ Ut @ Wt)
    V = -(Vt @ Wt)
    if failed.any():
        U[failed] = -gL[failed] / rho
        V[failed] = -gT[failed] / rho
    return U, V, failed


# ---------------------------------------------------------------------------
# single-instance Gaussian API
# ---------------------------------------------------------------------------

def _as_params(params) -> GaussianParams:
    if not isinstance(params, GaussianParams):
        raise TypeError("expected GaussianParams")
    return params


def _check_pd(Lam):
    if not is_positive_definite(Lam):
        raise InvalidParameterError("Lambda is not positive definite")


def gaussian_negloglik(params: GaussianParams, x, y) -> float:
    """Twice the Gaussian negative log-likelihood, without the ``p log 2pi`` term."""
    params = _as_params(params)
    _check_pd(params.Lambda)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    Lam, Th = params.Lambda, params.Theta
    sign, logdet = np.linalg.slogdet(Lam)
    c = Th.T @ x
    return float(-logdet + y @ Lam @ y + c @ np.linalg.solve(Lam, c) + 2.0 * y @ c)


def gaussian_prox_objective(params: GaussianParams, x, y, rho, params0: GaussianParams) -> float:
    return gaussian_negloglik(params, x, y) + 0.5 * rho * (
        np.sum((params.Lambda - params0.Lambda) ** 2) + np.sum((params.Theta - params0.Theta) ** 2))


def gaussian_gradient(params: GaussianParams, x, y, rho: float, params0: GaussianParams):
    """Gradient of the Gaussian prox objective with respect to (Lambda, Theta)."""
    params = _as_params(params)
    _check_pd(params.Lambda)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    Lam, Th = params.Lambda[None], params.Theta[None]
    evals, evecs = _eig(Lam)
    gL, gT = _gradients(evals, evecs, Lam, Th, x[None], y[None], rho,
                        params0.Lambda[None], params0.Theta[None])
    return gL[0], gT[0]


@dataclass
class NewtonWorkspace:
    """Eigenbasis quantities for one structured Newton step.

    ``Lambda^{-1} = W diag(s) W'``, ``ThetaTilde = Theta W`` and
    ``a = -diag(s) ThetaTilde' x``.
    """

    W: np.ndarray
    s: np.ndarray
    ThetaTilde: np.ndarray
    a: np.ndarray
    gradLambda: np.ndarray
    gradTheta: np.ndarray
    U: np.ndarray | None = None
    V: np.ndarray | None = None

    @classmethod
    def build(cls, params: GaussianParams, x, y, rho: float, params0: GaussianParams):
        _check_pd(params.Lambda)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        evals, W = np.linalg.eigh(symmetrize(params.Lambda))
        s = 1.0 / evals
        gL, gT = gaussian_gradient(params, x, y, rho, params0)
        Tt = params.Theta @ W
        return cls(W=W, s=s, ThetaTilde=Tt, a=-s * (Tt.T @ x), gradLambda=gL, gradTheta=gT)


def gaussian_newton_direction(ws: NewtonWorkspace, x, rho: float):
    """Structured Newton step ``(U, V)`` for the Gaussian prox objective.

    The step is the descent direction ``-H^{-1} grad``; cost is
    O(p^3 + n p^2). Falls back to ``-grad/rho`` (with a RuntimeWarning) if the
    inner system is singular.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    Th = ws.ThetaTilde @ ws.W.T
    U, V, failed = _structured_direction((1.0 / ws.s)[None], ws.W[None], Th[None], x[None],
                                         ws.gradLambda[None], ws.gradTheta[None], rho)
    if failed[0]:
        warnings.warn("singular inner Newton system; using a gradient step", RuntimeWarning)
    ws.U, ws.V = U[0], V[0]
    return U[0], V[0]


def commutation_matrix(m: int, n: int) -> np.ndarray:
    """``K`` with ``K @ vec(A) = vec(A.T)`` for ``A`` of shape (m, n)."""
    K = np.zeros((m * n, m * n))
    for i in range(m):
        for j in range(n):
            K[i * n + j, j * m + i] = 1.0
    return K


def dense_newton_oracle(params: GaussianParams, x, rho: float, gradLambda, gradTheta):
    """Newton step from the explicitly assembled Kronecker system.

    Test-only reference: builds the p(n+p) x p(n+p) matrix of the second-order
    conditions in the original coordinates (with explicit commutation
    matrices) and solves it densely.
    """
    Lam, Th = params.Lambda, params.Theta
    p, n = Lam.shape[0], Th.shape[0]
    if p * (n + p) > 64:
        raise DimensionError(f"dense oracle limited to p(n+p) <= 64, got {p * (n + p)}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    Li = np.linalg.inv(Lam)
    xx = np.outer(x, x)
    B = Li @ Th.T @ xx @ Th @ Li            # Lambda^{-1} Theta'xx'Theta Lambda^{-1}
    Kpn = commutation_matrix(n, p)          # vec(V) -> vec(V')
    Ipp = np.eye(p * p)
    # row 1: Li U Li + B U Li + Li U B - Li V'xx'Theta Li - Li Theta'xx' V Li + rho U
    H11 = np.kron(Li, Li) + np.kron(Li, B) + np.kron(B, Li) + rho * Ipp
    H12 = -np.kron((xx @ Th @ Li).T, Li) @ Kpn - np.kron(Li, Li @ Th.T @ xx)
    # row 2: 2xx'V Li - 2xx'Theta Li U Li + rho V
    H21 = -2.0 * np.kron(Li, xx @ Th @ Li)
    H22 = 2.0 * np.kron(Li, xx) + rho * np.eye(n * p)
    H = np.block([[H11, H12], [H21, H22]])
    g = np.concatenate([np.asarray(gradLambda).ravel(order="F"),
                        np.asarray(gradTheta).ravel(order="F")])
    sol = np.linalg.solve(H, g)
    U = -sol[:p * p].reshape(p, p, order="F")
    V = -sol[p * p:].reshape(n, p, order="F")
    return U, V


# ---------------------------------------------------------------------------
# batched prox solvers
# ---------------------------------------------------------------------------

@dataclass
class ProxResult:
    theta: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    fallback: np.ndarray


def gaussian_prox_batch(theta0, X, Y, rho, n, p, tol=1e-9, max_iter=50, init=None) -> ProxResult:
    """Solve one Gaussian prox problem per row of ``theta0`` by damped Newton.

    Rows are processed independently: each row's iterates depend only on its
    own inputs, so results do not depend on batch composition.
    """
    theta0 = np.atleast_2d(np.asarray(theta0, dtype=float))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    Bsz = theta0.shape[0]
    Lam0, Th0 = _split(theta0, n, p)
    Lam0 = symmetrize(Lam0)
    # the rho-weighted proximity term alone carries rounding of order rho * eps * |theta|
    gtol = tol * (1.0 + np.linalg.norm(theta0, axis=1)) * max(1.0, rho)

    # start point: warm start if feasible, else theta0 if feasible, else (I, Theta0)
    Lam, Th = Lam0.copy(), Th0.copy()
    if init is not None:
        Li, Ti = _split(np.atleast_2d(np.asarray(init, dtype=float)), n, p)
        use = np.linalg.eigvalsh(symmetrize(Li))[:, 0] > 0
        Lam[use], Th[use] = symmetrize(Li[use]), Ti[use]
    bad = np.linalg.eigvalsh(Lam)[:, 0] <= 0
    Lam[bad] = np.eye(p)

    F, _, evals, evecs = _prox_objective(Lam, Th, X, Y, rho, Lam0, Th0)
    active = np.ones(Bsz, dtype=bool)
    converged = np.zeros(Bsz, dtype=bool)
    iters = np.zeros(Bsz, dtype=int)
    fallback = np.zeros(Bsz, dtype=bool)

    for _ in range(max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        gL, gT = _gradients(evals[idx], evecs[idx], Lam[idx], Th[idx], X[idx], Y[idx],
                            rho, Lam0[idx], Th0[idx])
        gnorm = np.sqrt(np.sum(gL ** 2, axis=(1, 2)) + np.sum(gT ** 2, axis=(1, 2)))
        done = gnorm <= gtol[idx]
        converged[idx[done]] = True
        active[idx[done]] = False
        keep = ~done & (iters[idx] < max_iter)
        active[idx[~done & ~keep]] = False
        idx = idx[keep]
        if idx.size == 0:
            break
        gL, gT = gL[keep], gT[keep]
        U, V, failed = _structured_direction(evals[idx], evecs[idx], Th[idx], X[idx], gL, gT, rho)
        fallback[idx] |= failed
        slope = np.sum(gL * U, axis=(1, 2)) + np.sum(gT * V, axis=(1, 2))
        # predicted decrease below the rounding floor of F: take the feasible step as is
        floor = -slope <= ROUNDING * (1.0 + np.abs(F[idx]))

        step = np.ones(idx.size)
        pending = np.ones(idx.size, dtype=bool)
        for _ in range(MAX_HALVINGS):
            j = np.flatnonzero(pending)
            if j.size == 0:
                break
            b = idx[j]
            LamT = symmetrize(Lam[b] + step[j, None, None] * U[j])
            ThT = Th[b] + step[j, None, None] * V[j]
            FT, ok, ev, evec = _prox_objective(LamT, ThT, X[b], Y[b], rho, Lam0[b], Th0[b])
            acc = ok & ((FT <= F[b] + ARMIJO * step[j] * slope[j]) | floor[j])
            if acc.any():
                ba = b[acc]
                Lam[ba], Th[ba], F[ba] = LamT[acc], ThT[acc], FT[acc]
                evals[ba], evecs[ba] = ev[acc], evec[acc]
                pending[j[acc]] = False
            step[j[~acc]] *= 0.5
        # line search exhausted: no further progress possible at working precision
        stalled = idx[pending]
        active[stalled] = False
        iters[idx] += 1

    return ProxResult(_join(Lam, Th), converged, iters, fallback)


def gaussian_prox(theta0, x, y, rho, cfg=None, init=None, n=None, p=None):
    """Prox of the Gaussian loss at ``theta0`` (flattened row).

    Dimensions are inferred from ``x`` and ``y`` unless given. Returns the
    minimizing row; warns if Newton did not reach ``cfg.newton_tol``.
    """
    from .types import SolverConfig
    cfg = cfg or SolverConfig()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n = n or x.size
    p = p or y.size
    theta0 = np.asarray(theta0, dtype=float)
    if theta0.shape != (p * p + n * p,):
        raise DimensionError(f"theta0 must have length {p * p + n * p}")
    res = gaussian_prox_batch(theta0[None], x[None], y[None], rho, n, p,
                              tol=cfg.newton_tol, max_iter=cfg.newton_max_iters,
                              init=None if init is None else np.asarray(init)[None])
    if not res.converged[0]:
        warnings.warn("Gaussian prox did not reach the gradient tolerance", RuntimeWarning)
    return res.theta[0]


def linreg_loss(Theta, x, y) -> float:
    """Squared residual ``||y - Theta'x||^2``."""
    r = np.atleast_1d(y) - np.atleast_2d(Theta).T @ np.atleast_1d(x)
    return float(r @ r)


def linreg_prox_batch(Theta0, X, Y, rho):
    """Closed-form prox of ``||y - Theta'x||^2`` for stacks (B, n, p).

    Solves ``(2xx' + rho I) Theta = rho Theta0 + 2xy'``. Since ``x`` is an
    eigenvector of ``2xx' + rho I``, the solution is the rank-one correction
    ``Theta0 + 2 x r' / (rho + 2 x'x)`` with residual ``r = y - Theta0'x``.
    """
    r = Y - np.einsum("bnp,bn->bp", Theta0, X)
    coef = 2.0 / (rho + 2.0 * np.sum(X * X, axis=1))
    return Theta0 + coef[:, None, None] * X[:, :, None] * r[:, None, :]


def linreg_prox(theta0, x, y, rho):
    """Prox of the least-squares loss; ``theta0`` is an (n, p) matrix."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    Theta0 = np.atleast_2d(np.asarray(theta0, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if Theta0.shape != (x.size, y.size):
        raise DimensionError(f"theta0 must be ({x.size}, {y.size})")
    return linreg_prox_batch(Theta0[None], x[None], y[None], rho)[0]


# ---------------------------------------------------------------------------
# model-kind dispatch used by the ADMM driver
# ---------------------------------------------------------------------------

def negloglik_rows(kind, theta, X, Y, n, p) -> np.ndarray:
    """Loss of each row of ``theta`` at its own observation (inf if infeasible)."""
    theta = np.atleast_2d(theta)
    if kind == LINREG:
        Th = theta.reshape(-1, p, n).transpose(0, 2, 1)
        r = Y - np.einsum("bnp,bn->bp", Th, X)
        return np.sum(r * r, axis=1)
    Lam, Th = _split(theta, n, p)
    evals, evecs = _eig(Lam)
    ok = evals[:, 0] > 0
    vals = _nll_from_eig(np.where(ok[:, None], evals, 1.0), evecs, symmetrize(Lam), Th, X, Y)
    return np.where(ok, vals, np.inf)


def prox_rows(kind, theta0, X, Y, rho, n, p, tol=1e-9, max_iter=50, init=None) -> ProxResult:
    if kind == LINREG:
        Th0 = theta0.reshape(-1, p, n).transpose(0, 2, 1)
        Th = linreg_prox_batch(Th0, X, Y, rho)
        B = theta0.shape[0]
        return ProxResult(Th.transpose(0, 2, 1).reshape(B, -1), np.ones(B, bool),
                          np.ones(B, int), np.zeros(B, bool))
    return gaussian_prox_batch(theta0, X, Y, rho, n, p, tol=tol, max_iter=max_iter, init=init)


def pooled_fit(kind, X, Y, ridge=1e-6) -> np.ndarray:
    """One parameter row fit to all observations (unpenalized MLE, lightly ridged)."""
    X = np.atleast_2d(X)
    Y = np.atleast_2d(Y)
    T, n = X.shape
    p = Y.shape[1]
    B, *_ = np.linalg.lstsq(X, Y, rcond=None)
    if kind == LINREG:
        return encode_params(LINREG, B)
    R = Y - X @ B
    cov = symmetrize(R.T @ R / T)
    cov = cov + ridge * max(1.0, np.trace(cov) / p) * np.eye(p)
    return encode_params(GAUSSIAN, GaussianParams.from_moments(B, cov))


def decode_rows(kind, theta, n, p):
    return [decode_params(kind, row, n, p) for row in np.atleast_2d(theta)]
