"""Core containers shared by the solvers and the pipeline.

Parameter layout
----------------
A conditional Gaussian with precision ``Lambda`` (p x p) and scaled-mean
parameter ``Theta`` (n x p) is flattened as::

    theta = [vec(Lambda); vec(Theta)]        (length p*p + n*p)

where ``vec`` stacks columns (Fortran / column-major order). The full p x p
precision block is stored, so off-diagonal entries appear twice. Linear
regression stores only ``vec(Theta)`` (length n*p).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GAUSSIAN = "gaussian"
LINREG = "linreg"
MODEL_KINDS = (GAUSSIAN, LINREG)


class InvalidParameterError(ValueError):
    """Model parameters violate an invariant (e.g. precision not PD)."""


class DimensionError(ValueError):
    """Array shapes are inconsistent with the declared dimensions."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message: str, gap: float = float("nan")):
        super().__init__(message)
        self.gap = gap


def symmetrize(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def is_positive_definite(A: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(symmetrize(A))
    except np.linalg.LinAlgError:
        return False
    return True


@dataclass(frozen=True)
class ObservationSequence:
    """Input/output pairs ``(x_t, y_t)`` for ``t = 1..T``."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        y = np.asarray(self.y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        self.validate()

    @property
    def T(self) -> int:
        return self.y.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def p(self) -> int:
        return self.y.shape[1]

    def validate(self) -> None:
        if self.x.ndim != 2 or self.y.ndim != 2:
            raise DimensionError("x and y must be 2-D (T rows)")
        if self.y.shape[0] < 1:
            raise DimensionError("need at least one time point")
        if self.x.shape[0] != self.y.shape[0]:
            raise DimensionError(
                f"x has {self.x.shape[0]} rows but y has {self.y.shape[0]}")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("observations must be finite")


@dataclass(frozen=True)
class GaussianParams:
    """Precision ``Lambda`` (p x p) and scaled mean ``Theta`` (n x p).

    The implied conditional law is ``y | x ~ N(-Lambda^{-1} Theta^T x, Lambda^{-1})``.
    """

    Lambda: np.ndarray
    Theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Lambda", np.atleast_2d(np.asarray(self.Lambda, dtype=float)))
        object.__setattr__(self, "Theta", np.atleast_2d(np.asarray(self.Theta, dtype=float)))

    @property
    def p(self) -> int:
        return self.Lambda.shape[0]

    @property
    def n(self) -> int:
        return self.Theta.shape[0]

    def validate(self) -> None:
        L = self.Lambda
        if L.ndim != 2 or L.shape[0] != L.shape[1]:
            raise DimensionError("Lambda must be square")
        if self.Theta.shape[1] != L.shape[0]:
            raise DimensionError("Theta must be n x p with p matching Lambda")
        scale = max(1.0, float(np.max(np.abs(L))))
        if np.max(np.abs(L - L.T)) > 1e-12 * scale:
            raise InvalidParameterError("Lambda is not symmetric")
        if not is_positive_definite(L):
            raise InvalidParameterError("Lambda is not positive definite")

    @classmethod
    def from_moments(cls, mean_coef: np.ndarray, cov: np.ndarray) -> "GaussianParams":
        """Build from ``y | x ~ N(B^T x, cov)`` with ``B`` of shape (n, p)."""
        B = np.atleast_2d(np.asarray(mean_coef, dtype=float))
        Lam = np.linalg.inv(np.atleast_2d(np.asarray(cov, dtype=float)))
        Lam = symmetrize(Lam)
        return cls(Lam, -B @ Lam)

    def mean(self, x: np.ndarray) -> np.ndarray:
        return -np.linalg.solve(self.Lambda, self.Theta.T @ np.asarray(x, dtype=float))

    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.Lambda)


def param_dim(kind: str, n: int, p: int) -> int:
    if kind == GAUSSIAN:
        return p * p + n * p
    if kind == LINREG:
        return n * p
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def encode_params(kind: str, params) -> np.ndarray:
    """Flatten model parameters into a single row (column-major vec)."""
    if kind == GAUSSIAN:
        return np.concatenate([params.Lambda.ravel(order="F"), params.Theta.ravel(order="F")])
    if kind == LINREG:
        return np.atleast_2d(np.asarray(params, dtype=float)).ravel(order="F").copy()
    raise ValueError(f"unknown model kind {kind!r}")


def decode_params(kind: str, row: np.ndarray, n: int, p: int, check: bool = True):
    """Inverse of :func:`encode_params`.

    For the Gaussian model the Lambda block must be symmetric positive
    definite unless ``check=False``.
    """
    row = np.asarray(row, dtype=float)
    d = param_dim(kind, n, p)
    if row.shape != (d,):
        raise DimensionError(f"expected a row of length {d} for {kind} (n={n}, p={p}), "
                             f"got shape {row.shape}")
    if kind == LINREG:
        return row.reshape(n, p, order="F").copy()
    Lam = row[:p * p].reshape(p, p, order="F").copy()
    Theta = row[p * p:].reshape(n, p, order="F").copy()
    params = GaussianParams(Lam, Theta)
    if check:
        if not is_positive_definite(Lam) or np.any(~np.isfinite(Lam)):
            raise InvalidParameterError("decoded Lambda is not positive definite")
        params.validate()
    return params


@dataclass(frozen=True)
class ParameterTrajectory:
    """Per-time-point flattened parameters, shape (T, d)."""

    kind: str
    n: int
    p: int
    theta: np.ndarray

    @property
    def d(self) -> int:
        return self.theta.shape[1]

    @property
    def T(self) -> int:
        return self.theta.shape[0]

    def validate(self, check_params: bool = True) -> None:
        if self.theta.ndim != 2 or self.theta.shape[1] != param_dim(self.kind, self.n, self.p):
            raise DimensionError("trajectory width does not match the model dimension")
        if check_params:
            for row in self.theta:
                decode_params(self.kind, row, self.n, self.p)

    def params_at(self, t: int):
        return decode_params(self.kind, self.theta[t], self.n, self.p)


@dataclass
class AdmmState:
    """Iterates of the splitting scheme plus residual history."""

    theta: np.ndarray
    z: np.ndarray
    u: np.ndarray
    rho: float
    iteration: int = 0
    primal_residual: list = field(default_factory=list)
    dual_residual: list = field(default_factory=list)

    def validate(self) -> None:
        if not (self.theta.shape == self.z.shape == self.u.shape) or self.theta.ndim != 2:
            raise DimensionError("theta, z and u must share a (T, d) shape")
        if not self.rho > 0:
            raise ValueError("rho must be positive")


@dataclass(frozen=True)
class Segmentation:
    """Change points and one representative parameter row per segment.

    A change point ``t`` (1-based, ``1 <= t <= T-1``) marks a boundary between
    time points ``t`` and ``t+1``; in 0-based array terms segment boundaries
    fall before index ``t``.
    """

    T: int
    changepoints: tuple
    segment_params: np.ndarray

    @property
    def n_segments(self) -> int:
        return len(self.changepoints) + 1

    def bounds(self) -> list[tuple[int, int]]:
        """0-based half-open ``(start, stop)`` ranges of each segment."""
        edges = [0, *self.changepoints, self.T]
        return [(edges[i], edges[i + 1]) for i in range(len(edges) - 1)]

    def lengths(self) -> np.ndarray:
        return np.array([b - a for a, b in self.bounds()])

    def validate(self) -> None:
        cps = list(self.changepoints)
        if any(b <= a for a, b in zip(cps, cps[1:])):
            raise ValueError("changepoints must be strictly increasing")
        if cps and (cps[0] < 1 or cps[-1] > self.T - 1):
            raise ValueError("changepoints must lie in [1, T-1]")
        if len(self.segment_params) != len(cps) + 1:
            raise ValueError("need exactly one parameter row per segment")


@dataclass(frozen=True)
class ClusterModel:
    h: float
    modes: np.ndarray
    segment_labels: np.ndarray
    frame_labels: np.ndarray | None = None
    merge_tol: float = 0.1

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    def validate(self) -> None:
        if not self.h > 0:
            raise ValueError("bandwidth must be positive")
        k = len(self.modes)
        for i in range(k):
            for j in range(i + 1, k):
                if np.linalg.norm(self.modes[i] - self.modes[j]) <= self.merge_tol * self.h:
                    raise ValueError(f"modes {i} and {j} are closer than the merge radius")
        for labels in (self.segment_labels, self.frame_labels):
            if labels is not None and len(labels) and (np.min(labels) < 0 or np.max(labels) >= k):
                raise ValueError("label does not index a mode")


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for the segmentation solver.

    ``lam`` is the total-variation weight and ``rho`` the fixed ADMM penalty.
    Likelihood terms use twice the negative log-likelihood (constants dropped),
    so ``lam`` and ``rho`` are on that scale.
    """

    lam: float = 1.0
    rho: float = 1.0
    max_admm_iters: int = 3000
    abs_tol: float = 1e-6
    rel_tol: float = 1e-5
    newton_tol: float = 1e-9
    newton_max_iters: int = 50
    gfl_gap_tol: float = 1e-10
    gfl_max_iters: int = 20000
    changepoint_tol: float = 1e-4
    reweight_iters: int = 0
    reweight_epsilon: float = 1e-2
    rng_seed: int = 0
    workers: int = 1

    def validate(self) -> None:
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        for name in ("abs_tol", "rel_tol", "newton_tol", "gfl_gap_tol",
                     "changepoint_tol", "reweight_epsilon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.reweight_iters < 0:
            raise ValueError("reweight_iters must be nonnegative")
        if self.max_admm_iters < 1 or self.newton_max_iters < 1:
            raise ValueError("iteration caps must be positive")
