"""Second-stage clustering of segment parameters by Gaussian-kernel mode finding.

Each segment's representative parameter enters the density estimate with
weight equal to the segment length, which matches a kernel density over all
time points of a piecewise-constant trajectory. Modes are found by mean shift,
the fixed-point form of gradient ascent for Gaussian kernels.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .types import ClusterModel, Segmentation


@dataclass(frozen=True)
class KdeConfig:
    h: float = 1.0
    shift_tol: float = 1e-8
    max_shift_iters: int = 5000
    merge_tol: float = 0.1

    def validate(self) -> None:
        for name in ("h", "shift_tol", "max_shift_iters", "merge_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def _prep(samples, weights=None):
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0:
        raise ValueError("need at least one sample")
    w = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (X.shape[0],) or np.any(w < 0) or not w.sum() > 0:
        raise ValueError("weights must be nonnegative, one per sample, not all zero")
    return X, w / w.sum()


def kde_density(theta, samples, h: float, weights=None) -> float:
    """Gaussian kernel density ``sum_t w_t h^-d K(||theta - theta_t|| / h)``."""
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    X, w = _prep(samples, weights)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    d = X.shape[1]
    r2 = np.sum((X - theta) ** 2, axis=1) / h ** 2
    return float(np.sum(w * np.exp(-0.5 * r2)) * (2 * np.pi) ** (-d / 2) / h ** d)


def kde_gradient(theta, samples, h: float, weights=None) -> np.ndarray:
    X, w = _prep(samples, weights)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    d = X.shape[1]
    k = w * np.exp(-0.5 * np.sum((X - theta) ** 2, axis=1) / h ** 2)
    return (k @ (X - theta)) * (2 * np.pi) ** (-d / 2) / h ** (d + 2)


def _shift_all(starts, X, w, cfg: KdeConfig):
    """Mean shift from many starting points at once; returns (points, converged)."""
    P = starts.copy()
    active = np.ones(P.shape[0], dtype=bool)
    inv2h2 = 0.5 / cfg.h ** 2
    for _ in range(cfg.max_shift_iters):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        D2 = np.sum((P[idx, None, :] - X[None, :, :]) ** 2, axis=2)
        # subtract the row minimum for stability; it cancels in the ratio
        K = w * np.exp(-(D2 - D2.min(axis=1, keepdims=True)) * inv2h2)
        new = (K @ X) / K.sum(axis=1, keepdims=True)
        step = np.linalg.norm(new - P[idx], axis=1)
        P[idx] = new
        active[idx[step <= cfg.shift_tol * cfg.h]] = False
    return P, ~active


def mean_shift_mode(theta_init, samples, kcfg: KdeConfig, weights=None) -> np.ndarray:
    """Follow the Gaussian-kernel mean-shift iteration from ``theta_init`` to a mode."""
    kcfg.validate()
    X, w = _prep(samples, weights)
    start = np.atleast_1d(np.asarray(theta_init, dtype=float))[None, :]
    P, ok = _shift_all(start, X, w, kcfg)
    if not ok[0]:
        warnings.warn("mean shift hit the iteration cap", RuntimeWarning)
    return P[0]


def _merge(points, radius):
    """Single-linkage groups of points closer than ``radius``; labels by first occurrence."""
    m = points.shape[0]
    parent = np.arange(m)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    D = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=2)
    for i, j in zip(*np.nonzero(np.triu(D <= radius, k=1))):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(m)])
    _, labels = np.unique(roots, return_inverse=True)
    # canonical order: mode index by first sample that reaches it
    order = {}
    for lab in labels:
        order.setdefault(lab, len(order))
    return np.array([order[lab] for lab in labels])


def cluster(samples, kcfg: KdeConfig, weights=None) -> ClusterModel:
    """Run mean shift from every sample and merge the endpoints into modes.

    Endpoints within ``merge_tol * h`` of each other (single linkage) form one
    mode, located at the densest endpoint of the group.
    """
    kcfg.validate()
    X, w = _prep(samples, weights)
    ends, _ = _shift_all(X.copy(), X, w, kcfg)
    labels = _merge(ends, kcfg.merge_tol * kcfg.h)
    k = labels.max() + 1
    dens = np.array([kde_density(e, X, kcfg.h, w) for e in ends])
    modes = np.empty((k, X.shape[1]))
    for j in range(k):
        members = np.flatnonzero(labels == j)
        modes[j] = ends[members[np.argmax(dens[members])]]
    return ClusterModel(h=kcfg.h, modes=modes, segment_labels=labels, merge_tol=kcfg.merge_tol)


def mode_count(samples, h: float, weights=None, **kw) -> int:
    return cluster(samples, KdeConfig(h=h, **kw), weights).n_modes


class BandwidthError(ValueError):
    pass


def select_bandwidth(samples, k_target: int, h_lo: float, h_hi: float, weights=None,
                     rel_tol: float = 1e-3, **kw) -> float:
    """Largest bandwidth in ``[h_lo, h_hi]`` giving exactly ``k_target`` modes.

    Bisection on ``log h`` relies on the mode count being nonincreasing in
    ``h``; the answer is accurate to a factor ``1 + rel_tol``.
    """
    if k_target < 1:
        raise ValueError("k_target must be at least 1")
    if not 0 < h_lo < h_hi:
        raise ValueError("need 0 < h_lo < h_hi")

    def count(h):
        return mode_count(samples, h, weights, **kw)

    c_lo, c_hi = count(h_lo), count(h_hi)
    if c_hi == k_target:
        return float(h_hi)
    if c_lo < k_target or c_hi > k_target:
        raise BandwidthError(f"cannot reach {k_target} modes in [{h_lo:g}, {h_hi:g}]: "
                             f"{c_lo} modes at h_lo, {c_hi} at h_hi")
    lo, hi = float(h_lo), float(h_hi)
    c_at_lo = c_lo
    while hi / lo > 1.0 + rel_tol:
        mid = np.sqrt(lo * hi)
        c = count(mid)
        if c >= k_target:
            lo, c_at_lo = mid, c
        else:
            hi = mid
    if c_at_lo != k_target:
        raise BandwidthError(f"mode count jumps from {c_at_lo} to fewer than {k_target} "
                             f"near h={lo:g}; {k_target} modes not attainable")
    return lo


def assign_frames(segmentation: Segmentation, model: ClusterModel) -> np.ndarray:
    """Give every time point the mode label of its segment."""
    labels = np.asarray(model.segment_labels)
    if labels.size != segmentation.n_segments:
        raise ValueError(f"cluster has {labels.size} segment labels but the "
                         f"segmentation has {segmentation.n_segments} segments")
    return np.repeat(labels, segmentation.lengths())


def cluster_segments(segmentation: Segmentation, k_target: int | None = None,
                     h: float | None = None, h_range=None, **kw) -> ClusterModel:
    """Cluster segment parameters (length-weighted) and label every frame.

    Either a fixed bandwidth ``h`` or a target mode count ``k_target`` is
    required; with ``k_target`` the bandwidth is chosen by bisection over
    ``h_range`` (default: 1e-3 to 10 times the parameter spread).
    """
    X = np.asarray(segmentation.segment_params, dtype=float)
    w = segmentation.lengths().astype(float)
    if h is None:
        if k_target is None:
            raise ValueError("give either a bandwidth or a target number of clusters")
        spread = float(np.max(np.linalg.norm(X - X.mean(axis=0), axis=1))) or 1.0
        lo, hi = h_range or (1e-3 * spread, 10.0 * spread)
        if k_target == 1 and X.shape[0] == 1:
            h = hi
        else:
            h = select_bandwidth(X, k_target, lo, hi, weights=w, **kw)
    cfg = KdeConfig(h=h, **kw)
    model = cluster(X, cfg, weights=w)
    frames = assign_frames(segmentation, model)
    return ClusterModel(h=model.h, modes=model.modes, segment_labels=model.segment_labels,
                        frame_labels=frames, merge_tol=model.merge_tol)
