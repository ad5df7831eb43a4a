"""ADMM driver for total-variation regularized maximum likelihood.

Minimizes ``sum_t f_t(theta_t) + lam * sum_t w_t ||theta_{t+1} - theta_t||_2`` where
``f_t`` is twice the negative log-likelihood of observation ``t`` by alternating

* a per-time-point prox of ``f_t`` (theta-update, independent over t),
* a group fused lasso prox with weights ``lam * w_t / rho`` (z-update),
* a scaled dual ascent step (u-update).

The returned trajectory is the z iterate, which is exactly piecewise constant.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .gfl import solve_gfl, tv_penalty
from .models import negloglik_rows, pooled_fit, prox_rows, ProxResult
from .types import (GAUSSIAN, LINREG, AdmmState, ObservationSequence,
                    ParameterTrajectory, Segmentation, SolverConfig, param_dim)

log = logging.getLogger(__name__)


@dataclass
class Diagnostics:
    converged: bool = False
    iterations: int = 0
    primal_residual: list = field(default_factory=list)
    dual_residual: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    prox_nonconverged: int = 0
    prox_fallbacks: int = 0
    gfl_failures: int = 0
    passes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in (
            "converged", "iterations", "prox_nonconverged", "prox_fallbacks", "gfl_failures")}
        out["primal_residual"] = [float(r) for r in self.primal_residual]
        out["dual_residual"] = [float(r) for r in self.dual_residual]
        out["objective"] = [float(o) for o in self.objective]
        if self.passes:
            out["passes"] = [p.to_dict() for p in self.passes]
        return out


@dataclass
class SegmentResult:
    trajectory: ParameterTrajectory      # z: exactly fused
    theta: np.ndarray                    # theta: per-point model-feasible iterate
    segmentation: Segmentation
    diagnostics: Diagnostics
    state: AdmmState
    edge_weights: np.ndarray


def objective(kind, series: ObservationSequence, z, lam, edge_weights=None) -> float:
    """Total-variation penalized objective evaluated at a trajectory."""
    z = np.atleast_2d(z)
    w = np.ones(max(series.T - 1, 0)) if edge_weights is None else edge_weights
    loss = negloglik_rows(kind, z, series.x, series.y, series.n, series.p)
    return float(np.sum(loss) + (lam * tv_penalty(z, w) if series.T > 1 else 0.0))


def theta_update(series: ObservationSequence, kind: str, z, u, rho: float,
                 cfg: SolverConfig | None = None, init=None, workers: int | None = None) -> ProxResult:
    """Apply the model prox independently at every time point.

    Rows may be split across a thread pool; each row's computation depends
    only on its own inputs, so the result does not depend on ``workers``.
    """
    cfg = cfg or SolverConfig()
    workers = cfg.workers if workers is None else workers
    v = np.atleast_2d(z - u)
    n, p = series.n, series.p

    def run(sl):
        return prox_rows(kind, v[sl], series.x[sl], series.y[sl], rho, n, p,
                         tol=cfg.newton_tol, max_iter=cfg.newton_max_iters,
                         init=None if init is None else init[sl])

    T = v.shape[0]
    if workers <= 1 or T < 2 * workers:
        return run(slice(0, T))
    bounds = np.linspace(0, T, workers + 1).astype(int)
    slices = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(run, slices))
    return ProxResult(np.concatenate([r.theta for r in parts]),
                      np.concatenate([r.converged for r in parts]),
                      np.concatenate([r.iterations for r in parts]),
                      np.concatenate([r.fallback for r in parts]))


def extract_changepoints(z, cfg: SolverConfig | None = None) -> Segmentation:
    """Segment boundaries where consecutive rows of ``z`` differ.

    A boundary is declared after time point t (1-based) when
    ``||z_{t+1} - z_t|| > changepoint_tol * scale``; ``scale`` is the median
    row norm of ``z`` over nonzero rows (1 if all rows vanish).
    """
    cfg = cfg or SolverConfig()
    z = np.asarray(z.theta if isinstance(z, ParameterTrajectory) else z, dtype=float)
    z = z[:, None] if z.ndim == 1 else z
    T = z.shape[0]
    norms = np.linalg.norm(z, axis=1)
    nz = norms[norms > 0]
    scale = float(np.median(nz)) if nz.size else 1.0
    jumps = np.linalg.norm(np.diff(z, axis=0), axis=1)
    cps = tuple(int(t) + 1 for t in np.flatnonzero(jumps > cfg.changepoint_tol * scale))
    edges = [0, *cps, T]
    params = np.array([z[a:b].mean(axis=0) for a, b in zip(edges[:-1], edges[1:])])
    return Segmentation(T=T, changepoints=cps, segment_params=params)


def _check(series, kind, cfg):
    cfg.validate()
    if kind not in (GAUSSIAN, LINREG):
        raise ValueError(f"unknown model kind {kind!r}")
    if kind == GAUSSIAN and not cfg.lam > 0:
        raise ValueError("the Gaussian model needs lam > 0 (per-point MLE is unbounded)")


def segment(series: ObservationSequence, kind: str, cfg: SolverConfig | None = None,
            edge_weights=None, init: AdmmState | None = None) -> SegmentResult:
    """Solve the penalized problem by ADMM and extract the segmentation."""
    cfg = cfg or SolverConfig()
    _check(series, kind, cfg)
    T, n, p = series.T, series.n, series.p
    d = param_dim(kind, n, p)
    rho = cfg.rho
    w_edge = np.ones(max(T - 1, 0)) if edge_weights is None else np.asarray(edge_weights, float)
    gamma = cfg.lam / rho * w_edge

    if init is None:
        theta = np.tile(pooled_fit(kind, series.x, series.y), (T, 1))
        state = AdmmState(theta=theta, z=theta.copy(), u=np.zeros((T, d)), rho=rho)
    else:
        state = AdmmState(theta=init.theta.copy(), z=init.z.copy(), u=init.u.copy(), rho=rho)
    state.validate()
    diag = Diagnostics()
    dual_w = None
    scale_n = np.sqrt(T * d)

    for k in range(1, cfg.max_admm_iters + 1):
        res = theta_update(series, kind, state.z, state.u, rho, cfg, init=state.theta)
        state.theta = res.theta
        diag.prox_nonconverged += int(np.sum(~res.converged))
        diag.prox_fallbacks += int(np.sum(res.fallback))

        z_old = state.z
        g = solve_gfl(state.theta + state.u, gamma, gap_tol=cfg.gfl_gap_tol, w0=dual_w,
                      max_iter=cfg.gfl_max_iters, raise_on_failure=False)
        if not g.converged:
            diag.gfl_failures += 1
        state.z, dual_w = g.z.reshape(T, d), g.w
        state.u = state.u + state.theta - state.z
        state.iteration = k

        r = float(np.linalg.norm(state.theta - state.z))
        s = float(rho * np.linalg.norm(state.z - z_old))
        state.primal_residual.append(r)
        state.dual_residual.append(s)
        diag.objective.append(objective(kind, series, state.z, cfg.lam, w_edge))
        eps_pri = scale_n * cfg.abs_tol + cfg.rel_tol * max(np.linalg.norm(state.theta),
                                                              np.linalg.norm(state.z))
        eps_dual = scale_n * cfg.abs_tol + cfg.rel_tol * rho * np.linalg.norm(state.u)
        if r <= eps_pri and s <= eps_dual:
            diag.converged = True
            break

    diag.iterations = state.iteration
    diag.primal_residual = state.primal_residual
    diag.dual_residual = state.dual_residual
    if not diag.converged:
        log.warning("ADMM stopped at the iteration cap (%d) without meeting tolerances",
                    cfg.max_admm_iters)
    traj = ParameterTrajectory(kind, n, p, state.z.copy())
    return SegmentResult(traj, state.theta.copy(), extract_changepoints(state.z, cfg),
                         diag, state, w_edge)


def reweight(z, epsilon: float) -> np.ndarray:
    """Edge weights ``1/(||z_{t+1} - z_t|| + eps)`` rescaled to sum to T-1."""
    z = np.atleast_2d(z)
    w = 1.0 / (np.linalg.norm(np.diff(z, axis=0), axis=1) + epsilon)
    return w * (w.size / np.sum(w))


def reweighted_segment(series: ObservationSequence, kind: str,
                       cfg: SolverConfig | None = None) -> SegmentResult:
    """Iteratively reweighted segmentation.

    Runs ``cfg.reweight_iters`` passes (at least one); the first pass uses
    uniform weights and is identical to :func:`segment`. Each later pass
    reweights edges from the previous z and warm-starts from its iterates.
    """
    cfg = cfg or SolverConfig()
    passes = max(1, cfg.reweight_iters)
    weights = None
    result = None
    history = []
    for _ in range(passes):
        result = segment(series, kind, cfg, edge_weights=weights,
                         init=None if result is None else result.state)
        history.append(result.diagnostics)
        weights = reweight(result.trajectory.theta, cfg.reweight_epsilon)
    result.diagnostics = replace(result.diagnostics, passes=history)
    return result
