"""Everything between raw files and solver calls.

Data loading and saving, autoregressive feature construction, synthetic
benchmark generation, evaluation, and the end-to-end segment-then-cluster run.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .admm import SegmentResult, reweighted_segment
from .kde import cluster_segments
from .types import (GAUSSIAN, LINREG, ClusterModel, GaussianParams, InvalidParameterError,
                    ObservationSequence, SolverConfig, decode_params, encode_params)


class SchemaError(ValueError):
    category = "schema_error"


class DataError(ValueError):
    category = "data_error"


class EmptySeriesError(DataError):
    category = "empty_series"


@dataclass(frozen=True)
class LabeledSeries:
    series: ObservationSequence
    truth_labels: np.ndarray | None = None
    truth_changepoints: tuple | None = None

    def __post_init__(self):
        if self.truth_labels is not None:
            labels = np.asarray(self.truth_labels)
            if labels.shape != (self.series.T,):
                raise ValueError(f"truth_labels has length {labels.size}, expected T={self.series.T}")
            object.__setattr__(self, "truth_labels", labels)


@dataclass(frozen=True)
class Standardization:
    mean: np.ndarray
    scale: np.ndarray

    def apply(self, y):
        return (np.asarray(y, dtype=float) - self.mean) / self.scale

    def invert(self, y):
        return np.asarray(y, dtype=float) * self.scale + self.mean


def standardize(y) -> tuple[np.ndarray, Standardization]:
    """Per-channel zero mean, unit variance. Constant channels keep scale 1."""
    y = np.asarray(y, dtype=float)
    y2 = y[:, None] if y.ndim == 1 else y
    mu = y2.mean(axis=0)
    sd = y2.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    st = Standardization(mu, sd)
    out = st.apply(y2)
    return (out[:, 0] if y.ndim == 1 else out), st


def build_ar_features(raw, order: int, include_intercept: bool = True) -> ObservationSequence:
    """Regress each output on its own lags.

    ``x_t = [1; y_{t-1}; ...; y_{t-order}]``; the first ``order`` points have
    incomplete history and are dropped. ``order=0`` with an intercept gives
    ``x_t = [1]``, the plain time-varying Gaussian.
    """
    y = np.asarray(raw, dtype=float)
    y = y[:, None] if y.ndim == 1 else y
    T = y.shape[0]
    if order < 0:
        raise ValueError("order must be nonnegative")
    if T <= order:
        raise ValueError(f"need more than {order} time points for order-{order} features, got {T}")
    if order == 0 and not include_intercept:
        raise ValueError("order 0 without an intercept leaves no features")
    cols = [np.ones((T - order, 1))] if include_intercept else []
    cols += [y[order - k:T - k] for k in range(1, order + 1)]
    return ObservationSequence(np.hstack(cols), y[order:])


def first_differences(angles, wrap: bool = False) -> np.ndarray:
    """``y_t = phi_{t+1} - phi_t``, optionally wrapped into (-pi, pi]."""
    a = np.asarray(angles, dtype=float)
    if a.shape[0] < 2:
        raise ValueError("need at least two samples to difference")
    d = np.diff(a, axis=0)
    if wrap:
        d = np.pi - np.mod(np.pi - d, 2 * np.pi)
    return d


def frame_accuracy(pred, truth) -> float:
    """Fraction of agreeing frames under the best one-to-one relabelling of ``pred``."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} predicted vs {truth.size} true labels")
    if pred.size == 0:
        raise ValueError("empty labelings")
    pu, pi = np.unique(pred, return_inverse=True)
    tu, ti = np.unique(truth, return_inverse=True)
    conf = np.zeros((pu.size, tu.size))
    np.add.at(conf, (pi, ti), 1)
    rows, cols = linear_sum_assignment(conf, maximize=True)
    return float(conf[rows, cols].sum() / pred.size)


# ---------------------------------------------------------------- synthesis

@dataclass
class SyntheticSpec:
    """A regime schedule for generating data with known ground truth.

    ``regimes`` maps regime ids to parameter dicts. Gaussian regimes take
    ``mean_coef`` (n x p) and ``cov`` (p x p); linear-regression regimes take
    ``coef`` (n x p) and ``noise_sd``. Inputs are ``[1]`` followed by
    ``ar_order`` lags of the output.
    """

    kind: str
    p: int
    regimes: dict
    schedule: list
    seed: int = 0
    ar_order: int = 0

    @property
    def T(self) -> int:
        return int(sum(length for _, length in self.schedule))

    @property
    def n(self) -> int:
        return 1 + self.ar_order * self.p

    def regime_arrays(self, rid):
        r = self.regimes[rid]
        if self.kind == GAUSSIAN:
            B = np.asarray(r["mean_coef"], dtype=float).reshape(self.n, self.p)
            cov = np.atleast_2d(np.asarray(r["cov"], dtype=float))
            return B, cov
        B = np.asarray(r["coef"], dtype=float).reshape(self.n, self.p)
        return B, float(r.get("noise_sd", 1.0)) ** 2 * np.eye(self.p)

    def true_params(self, rid):
        """Flattened model parameter row for a regime."""
        B, cov = self.regime_arrays(rid)
        if self.kind == GAUSSIAN:
            return encode_params(GAUSSIAN, GaussianParams.from_moments(B, cov))
        return encode_params(LINREG, B)

    def validate(self) -> None:
        if self.kind not in (GAUSSIAN, LINREG):
            raise InvalidParameterError(f"unknown model kind {self.kind!r}")
        if not self.schedule:
            raise InvalidParameterError("empty schedule")
        for rid, length in self.schedule:
            if rid not in self.regimes:
                raise InvalidParameterError(f"schedule uses undefined regime {rid!r}")
            if int(length) < 1:
                raise InvalidParameterError("schedule lengths must be positive")
        for rid in self.regimes:
            try:
                B, cov = self.regime_arrays(rid)
            except (KeyError, ValueError) as exc:
                raise InvalidParameterError(f"regime {rid!r}: {exc}") from exc
            if cov.shape != (self.p, self.p) or not np.allclose(cov, cov.T):
                raise InvalidParameterError(f"regime {rid!r}: covariance must be symmetric p x p")
            if np.any(np.linalg.eigvalsh(cov) <= 0):
                raise InvalidParameterError(f"regime {rid!r}: covariance is not positive definite")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        try:
            spec = cls(kind=d["kind"], p=int(d.get("p", 1)), regimes=dict(d["regimes"]),
                       schedule=[(str(r), int(n)) for r, n in d["schedule"]],
                       seed=int(d.get("seed", 0)), ar_order=int(d.get("ar_order", 0)))
        except KeyError as exc:
            raise SchemaError(f"synthetic spec is missing field {exc.args[0]!r}") from exc
        spec.regimes = {str(k): v for k, v in spec.regimes.items()}
        return spec

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SyntheticData:
    raw: np.ndarray          # T x p outputs
    labels: np.ndarray       # regime id per time point
    changepoints: tuple

    def labeled(self, ar_order: int = 0) -> LabeledSeries:
        return labeled_from_raw(self.raw, self.labels, ar_order)


def _changepoints(labels) -> tuple:
    labels = np.asarray(labels)
    return tuple(int(t) + 1 for t in np.flatnonzero(labels[1:] != labels[:-1]))


def labeled_from_raw(raw, labels=None, ar_order: int = 0) -> LabeledSeries:
    series = build_ar_features(raw, ar_order)
    if labels is None:
        return LabeledSeries(series)
    labels = np.asarray(labels)[ar_order:]
    return LabeledSeries(series, labels, _changepoints(labels))


def synthesize(spec: SyntheticSpec) -> SyntheticData:
    """Draw outputs regime by regime; lags feed back when ``ar_order > 0``.

    Lags before the first sample are zero. Identical specs give identical data.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    T, p, order = spec.T, spec.p, spec.ar_order
    labels = np.concatenate([[rid] * int(length) for rid, length in spec.schedule])
    arrays = {rid: spec.regime_arrays(rid) for rid in spec.regimes}
    chol = {rid: np.linalg.cholesky(cov) for rid, (_, cov) in arrays.items()}
    y = np.zeros((T, p))
    for t in range(T):
        B, _ = arrays[labels[t]]
        lags = [y[t - k] if t - k >= 0 else np.zeros(p) for k in range(1, order + 1)]
        x = np.concatenate([[1.0], *lags])
        y[t] = B.T @ x + chol[labels[t]] @ rng.standard_normal(p)
    return SyntheticData(y, labels, _changepoints(labels))


def write_csv(path, raw, labels=None) -> None:
    raw = np.asarray(raw, dtype=float)
    raw = raw[:, None] if raw.ndim == 1 else raw
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"y{j}" for j in range(raw.shape[1])] + ([] if labels is None else ["label"]))
        for t, row in enumerate(raw):
            w.writerow([repr(float(v)) for v in row] + ([] if labels is None else [labels[t]]))


def read_csv(path, y_columns=None, label_column: str | None = "label"):
    """Read raw outputs (T x p) and optional labels.

    ``y_columns`` defaults to every column whose name starts with ``y``.
    Malformed rows and non-finite values raise :class:`DataError` with the
    file line number.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptySeriesError(f"{path}: file is empty")
        header = [h.strip() for h in header]
        if y_columns is None:
            y_columns = [h for h in header if h.startswith("y")]
            if not y_columns:
                raise SchemaError(f"{path}: no output columns (names starting with 'y')")
        for col in y_columns:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        yi = [header.index(c) for c in y_columns]
        li = header.index(label_column) if label_column and label_column in header else None
        rows, labels = [], []
        for line_no, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}:{line_no}: expected {len(header)} fields, got {len(rec)}")
            try:
                vals = [float(rec[i]) for i in yi]
            except ValueError as exc:
                raise DataError(f"{path}:{line_no}: {exc}") from exc
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}:{line_no}: non-finite value")
            rows.append(vals)
            if li is not None:
                labels.append(rec[li].strip())
    if not rows:
        raise EmptySeriesError(f"{path}: no data rows")
    return np.array(rows), (np.array(labels) if li is not None else None)


def load_csv(path, ar_order: int = 0, y_columns=None, label_column: str | None = "label",
             standardize_y: bool = False):
    """Load a CSV into a :class:`LabeledSeries`; returns ``(series, standardization)``."""
    raw, labels = read_csv(path, y_columns, label_column)
    st = None
    if standardize_y:
        raw, st = standardize(raw)
    try:
        return labeled_from_raw(raw, labels, ar_order), st
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


# ------------------------------------------------------------ end to end

def to_original_units(kind, row, n, p, order, st: Standardization | None):
    """Mean coefficients and covariance of a parameter row in the data's units.

    Undoes output standardization for ``[1; lags]`` features: with
    ``y = D y' + m`` the lag blocks become ``D^-1 B_k D`` and the intercept
    absorbs the shifts.
    """
    if kind == GAUSSIAN:
        g = decode_params(GAUSSIAN, row, n, p, check=False)
        cov = np.linalg.inv(g.Lambda)
        B = -g.Theta @ cov
    else:
        B, cov = decode_params(LINREG, row, n, p), None
    if st is None:
        return B, cov
    D = np.diag(st.scale)
    Dinv = np.diag(1.0 / st.scale)
    out = np.empty_like(B)
    intercept = st.mean + D @ B[0]
    for k in range(order):
        blk = B[1 + k * p:1 + (k + 1) * p]
        orig = Dinv @ blk @ D
        out[1 + k * p:1 + (k + 1) * p] = orig
        intercept = intercept - orig.T @ st.mean
    out[0] = intercept
    return out, (None if cov is None else D @ cov @ D)


@dataclass
class PipelineResult:
    kind: str
    ar_order: int
    config: SolverConfig
    segment: SegmentResult
    cluster: ClusterModel | None
    standardization: Standardization | None
    accuracy: float | None = None
    extras: dict = field(default_factory=dict)


def run(labeled: LabeledSeries, kind: str, cfg: SolverConfig, ar_order: int = 0,
        clusters: int | None = None, bandwidth: float | None = None,
        standardization: Standardization | None = None) -> PipelineResult:
    """Segment, optionally cluster the segments, and score against truth labels."""
    seg = reweighted_segment(labeled.series, kind, cfg)
    cl = None
    acc = None
    if clusters is not None or bandwidth is not None:
        cl = cluster_segments(seg.segmentation, k_target=clusters, h=bandwidth)
        if labeled.truth_labels is not None:
            acc = frame_accuracy(cl.frame_labels, labeled.truth_labels)
    return PipelineResult(kind, ar_order, cfg, seg, cl, standardization, acc)


def lambda_sweep(labeled: LabeledSeries, kind: str, cfg: SolverConfig, lams, ar_order: int = 0,
                 clusters: int | None = None, bandwidth: float | None = None,
                 standardization=None, workers: int = 1) -> list[PipelineResult]:
    """One pipeline run per penalty value; grid points are independent."""
    from dataclasses import replace

    def one(lam):
        return run(labeled, kind, replace(cfg, lam=float(lam)), ar_order, clusters,
                   bandwidth, standardization)

    if workers <= 1:
        return [one(lam) for lam in lams]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, lams))


def _f(x):
    """Floats for JSON; repr round-trips exactly and is stable across runs."""
    if isinstance(x, np.ndarray):
        return [_f(v) for v in x.tolist()] if x.ndim else _f(x.item())
    if isinstance(x, (list, tuple)):
        return [_f(v) for v in x]
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    if isinstance(x, np.integer):
        return int(x)
    return x


def result_document(res: PipelineResult) -> dict:
    seg = res.segment
    s = seg.segmentation
    n, p = seg.trajectory.n, seg.trajectory.p
    segments = []
    for i, ((a, b), row) in enumerate(zip(s.bounds(), s.segment_params)):
        B, cov = to_original_units(res.kind, row, n, p, res.ar_order, res.standardization)
        entry = {"start": a, "stop": b, "params": _f(row), "mean_coef": _f(B)}
        if cov is not None:
            entry["cov"] = _f(cov)
        if res.cluster is not None:
            entry["mode"] = int(res.cluster.segment_labels[i])
        segments.append(entry)
    doc = {
        "model": res.kind,
        "ar_order": res.ar_order,
        "n": n,
        "p": p,
        "T": s.T,
        "config": _f(asdict(res.config)),
        "changepoints": list(s.changepoints),
        "segments": segments,
        "diagnostics": _f(seg.diagnostics.to_dict()),
        "edge_weights": _f(seg.edge_weights),
    }
    if res.standardization is not None:
        doc["standardization"] = {"mean": _f(res.standardization.mean),
                                  "scale": _f(res.standardization.scale)}
    if res.cluster is not None:
        doc["cluster"] = {"bandwidth": _f(res.cluster.h), "modes": _f(res.cluster.modes),
                          "frame_labels": _f(res.cluster.frame_labels)}
    if res.accuracy is not None:
        doc["accuracy"] = res.accuracy
    return doc


def save_results(out_dir, res: PipelineResult, prefix: str = "") -> tuple[Path, Path]:
    """Write ``<prefix>result.json`` and the plot-ready ``<prefix>trajectory.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc_path = out / f"{prefix}result.json"
    doc_path.write_text(json.dumps(result_document(res), indent=2, sort_keys=True) + "\n")
    traj_path = out / f"{prefix}trajectory.csv"
    z = res.segment.trajectory.theta
    labels = res.cluster.frame_labels if res.cluster is not None else None
    with open(traj_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"theta{j}" for j in range(z.shape[1])]
                   + ([] if labels is None else ["mode"]))
        for t, row in enumerate(z):
            w.writerow([t] + [repr(float(v)) for v in row]
                       + ([] if labels is None else [int(labels[t])]))
    return doc_path, traj_path


def sweep_table(results, lams) -> list[dict]:
    return [{"lambda": float(lam), "changepoints": len(r.segment.segmentation.changepoints),
             "accuracy": r.accuracy, "converged": r.segment.diagnostics.converged}
            for lam, r in zip(lams, results)]
