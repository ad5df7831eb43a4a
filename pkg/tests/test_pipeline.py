import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tvseg.pipeline import (DataError, EmptySeriesError, SchemaError, Standardization,
                            SyntheticSpec, build_ar_features, first_differences, frame_accuracy,
                            labeled_from_raw, lambda_sweep, load_csv, read_csv, run, save_results,
                            standardize, synthesize, to_original_units, write_csv)
from tvseg.types import GAUSSIAN, LINREG, GaussianParams, InvalidParameterError, SolverConfig, encode_params


def aba_spec(seed=0, length=100):
    return SyntheticSpec(GAUSSIAN, 1, {"A": {"mean_coef": [[0.0]], "cov": [[1.0]]},
                                       "B": {"mean_coef": [[4.0]], "cov": [[4.0]]}},
                         [("A", length), ("B", length), ("A", length)], seed=seed)


def test_ar_features_mocap_dimensions():
    raw = np.random.default_rng(0).standard_normal((50, 12))
    s = build_ar_features(raw, 2)
    assert (s.T, s.n, s.p) == (48, 25, 12)
    assert np.array_equal(s.x[0], np.concatenate([[1.0], raw[1], raw[0]]))


def test_ar_features_scalar():
    s = build_ar_features([3.0, 5.0, 7.0], 1)
    assert s.x.tolist() == [[1.0, 3.0], [1.0, 5.0]]
    assert s.y[:, 0].tolist() == [5.0, 7.0]
    assert build_ar_features([1.0, 2.0], 0).x.tolist() == [[1.0], [1.0]]


def test_ar_features_errors():
    with pytest.raises(ValueError):
        build_ar_features([1.0, 2.0], 2)
    with pytest.raises(ValueError):
        build_ar_features([1.0, 2.0], 0, include_intercept=False)


def test_first_differences():
    assert first_differences([0.0, 1.0, 3.0]).tolist() == [1.0, 2.0]
    assert np.all(first_differences(np.full(5, 2.5)) == 0)
    assert first_differences([3.1, -3.1])[0] == pytest.approx(-6.2)
    assert first_differences([3.1, -3.1], wrap=True)[0] == pytest.approx(2 * np.pi - 6.2)
    assert first_differences([0.0, np.pi], wrap=True)[0] == pytest.approx(np.pi)
    with pytest.raises(ValueError):
        first_differences([1.0])


def test_frame_accuracy_examples():
    assert frame_accuracy([0, 0, 1, 1], [0, 0, 1, 1]) == 1.0
    assert frame_accuracy(["x", "x", "y"], [1, 1, 0]) == 1.0
    assert frame_accuracy([1, 1, 1, 2], ["A", "A", "B", "B"]) == 0.75
    with pytest.raises(ValueError):
        frame_accuracy([0, 1], [0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=40), st.permutations([0, 1, 2, 3]),
       st.integers(0, 2**32 - 1))
def test_frame_accuracy_renaming(pred, perm, seed):
    rng = np.random.default_rng(seed)
    truth = rng.integers(0, 3, len(pred))
    pred = np.array(pred)
    base = frame_accuracy(pred, truth)
    assert frame_accuracy(np.array(perm)[pred], truth) == base
    assert frame_accuracy(pred, np.array(perm)[truth]) == base
    assert frame_accuracy(truth, pred) == base


def test_synthesize_one_regime():
    spec = SyntheticSpec(GAUSSIAN, 1, {"A": {"mean_coef": [[0.0]], "cov": [[1.0]]}}, [("A", 30)])
    assert synthesize(spec).changepoints == ()


def test_synthesize_schedule():
    d = synthesize(aba_spec())
    assert d.changepoints == (100, 200)
    assert d.labels[0] == d.labels[-1] == "A" and d.labels[150] == "B"


def test_synthesize_law_of_large_numbers():
    spec = SyntheticSpec(GAUSSIAN, 1, {"A": {"mean_coef": [[0.0]], "cov": [[1.0]]},
                                       "B": {"mean_coef": [[5.0]], "cov": [[1.0]]}},
                         [("A", 100), ("B", 100)], seed=0)
    y = synthesize(spec).raw[:, 0]
    assert abs(y[:100].mean()) <= 0.3
    assert abs(y[100:].mean() - 5.0) <= 0.3


def test_synthesize_deterministic_and_seeded():
    a, b = synthesize(aba_spec(3)), synthesize(aba_spec(3))
    assert np.array_equal(a.raw, b.raw)
    assert not np.array_equal(a.raw, synthesize(aba_spec(4)).raw)


def test_synthesize_autoregressive_feedback():
    spec = SyntheticSpec(LINREG, 1, {"A": {"coef": [[1.0], [0.5]], "noise_sd": 0.0001}},
                         [("A", 20)], ar_order=1)
    y = synthesize(spec).raw[:, 0]
    # y_t = 1 + 0.5 y_{t-1} converges to 2
    assert abs(y[-1] - 2.0) < 1e-2
    assert spec.n == 2


def test_synthesize_rejects_invalid():
    spec = aba_spec()
    spec.regimes["B"] = {"mean_coef": [[0.0]], "cov": [[-1.0]]}
    with pytest.raises(InvalidParameterError):
        synthesize(spec)
    with pytest.raises(InvalidParameterError):
        synthesize(SyntheticSpec(GAUSSIAN, 1, {}, [("A", 3)]))


def test_spec_from_dict_round_trip():
    spec = aba_spec(7)
    again = SyntheticSpec.from_dict(spec.to_dict())
    assert np.array_equal(synthesize(again).raw, synthesize(spec).raw)
    with pytest.raises(SchemaError):
        SyntheticSpec.from_dict({"kind": GAUSSIAN})


def test_true_params():
    row = aba_spec().true_params("B")
    assert np.allclose(row, encode_params(GAUSSIAN, GaussianParams([[0.25]], [[-1.0]])))


def test_standardize():
    y = np.array([[1.0, 5.0], [3.0, 5.0]])
    z, st_ = standardize(y)
    assert np.allclose(z[:, 0], [-1.0, 1.0]) and np.all(z[:, 1] == 0)
    assert np.allclose(st_.invert(z), y)


def test_csv_round_trip(tmp_path):
    d = synthesize(aba_spec(1))
    path = tmp_path / "data.csv"
    write_csv(path, d.raw, d.labels)
    raw, labels = read_csv(path)
    assert np.array_equal(raw, d.raw)
    assert labels.tolist() == d.labels.tolist()
    ls, st_ = load_csv(path)
    assert st_ is None and ls.truth_changepoints == (100, 200)


def test_csv_errors(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("y0,label\n")
    with pytest.raises(EmptySeriesError):
        read_csv(p)
    p.write_text("")
    with pytest.raises(EmptySeriesError):
        read_csv(p)
    p.write_text("y0,label\n1.0,A\n")
    with pytest.raises(SchemaError, match="'y1'"):
        read_csv(p, y_columns=["y0", "y1"])
    p.write_text("value\n1.0\n")
    with pytest.raises(SchemaError):
        read_csv(p)
    p.write_text("y0,label\n1.0,A\nabc,A\n")
    with pytest.raises(DataError, match=":3:"):
        read_csv(p)
    p.write_text("y0,label\n1.0,A\nnan,A\n")
    with pytest.raises(DataError, match=":3: non-finite"):
        read_csv(p)
    p.write_text("y0,label\n1.0,A,extra\n")
    with pytest.raises(DataError, match=":2:"):
        read_csv(p)


def test_labels_follow_ar_shift():
    raw = np.arange(10.0)
    labels = np.array(["a"] * 5 + ["b"] * 5)
    ls = labeled_from_raw(raw, labels, ar_order=2)
    assert ls.series.T == 8 and ls.truth_changepoints == (3,)


def test_original_units_scalar():
    st_ = Standardization(np.array([2.0]), np.array([3.0]))
    row = encode_params(GAUSSIAN, GaussianParams.from_moments([[1.0]], [[0.25]]))
    B, cov = to_original_units(GAUSSIAN, row, 1, 1, 0, st_)
    assert np.allclose(B, [[5.0]]) and np.allclose(cov, [[2.25]])


def test_original_units_autoregressive():
    rng = np.random.default_rng(2)
    p, order = 2, 2
    n = 1 + order * p
    st_ = Standardization(rng.standard_normal(p), rng.uniform(0.5, 2, p))
    B = rng.standard_normal((n, p))
    cov = np.eye(p) * 0.3
    row = encode_params(GAUSSIAN, GaussianParams.from_moments(B, cov))
    Bo, covo = to_original_units(GAUSSIAN, row, n, p, order, st_)
    lags = rng.standard_normal((order, p))
    x_std = np.concatenate([[1.0], *st_.apply(lags)])
    x_orig = np.concatenate([[1.0], *lags])
    assert np.allclose(st_.invert(B.T @ x_std), Bo.T @ x_orig)
    D = np.diag(st_.scale)
    assert np.allclose(covo, D @ cov @ D)


def test_headline_pipeline_run():
    d = synthesize(aba_spec(11))
    raw, st_ = standardize(d.raw)
    res = run(labeled_from_raw(raw, d.labels), GAUSSIAN, SolverConfig(lam=100.0), clusters=2,
              standardization=st_)
    cps = res.segment.segmentation.changepoints
    for true_cp in (100, 200):
        assert min(abs(c - true_cp) for c in cps) <= 2
    assert res.accuracy >= 0.95


def test_results_are_byte_identical(tmp_path):
    d = synthesize(aba_spec(12, length=40))
    raw, st_ = standardize(d.raw)
    ls = labeled_from_raw(raw, d.labels)
    paths = []
    for k in range(2):
        res = run(ls, GAUSSIAN, SolverConfig(lam=40.0), clusters=2, standardization=st_)
        paths.append(save_results(tmp_path / f"r{k}", res))
    for a, b in zip(*paths):
        assert a.read_bytes() == b.read_bytes()
    import json
    doc = json.loads(paths[0][0].read_text())
    assert set(doc) >= {"changepoints", "segments", "diagnostics", "config", "cluster"}
    assert doc["config"]["lam"] == 40.0


def test_lambda_sweep_parallel_matches_serial():
    d = synthesize(aba_spec(13, length=30))
    raw, _ = standardize(d.raw)
    ls = labeled_from_raw(raw, d.labels)
    lams = [10.0, 30.0]
    a = lambda_sweep(ls, GAUSSIAN, SolverConfig(), lams, workers=1)
    b = lambda_sweep(ls, GAUSSIAN, SolverConfig(), lams, workers=2)
    for ra, rb in zip(a, b):
        assert np.array_equal(ra.segment.trajectory.theta, rb.segment.trajectory.theta)
