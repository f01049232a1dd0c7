import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recf.data import DataError, SparseRatings
from recf.datasets import make_planted
from recf.evaluation import REPORT_COLUMNS, derive_labels, evaluate, mae, rmse, run_sweep, split_dataset
from recf.factor_model import FitConfig, fit


def test_metric_examples():
    truth = np.array([3.0, 4.0])
    assert mae(truth, truth) == 0 and rmse(truth, truth) == 0
    assert mae([2.0], [3.0]) == 1 and rmse([2.0], [3.0]) == 1
    assert mae([2.0, 1.0], [3.0, 4.0]) == 2
    assert abs(rmse([2.0, 1.0], [3.0, 4.0]) - math.sqrt(5)) < 1e-12
    triplets = np.array([[0, 0, 3.0], [1, 2, 4.0]])
    assert mae([2.0, 1.0], triplets) == 2
    with pytest.raises(DataError):
        mae([], [])
    with pytest.raises(ValueError):
        mae([1.0], [1.0, 2.0])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-100, 100, allow_nan=False).filter(lambda x: x == 0 or abs(x) > 1e-100), min_size=1, max_size=40))
def test_mae_never_exceeds_rmse(errors):
    err = np.array(errors)
    truth = np.zeros_like(err)
    assert mae(err, truth) <= rmse(err, truth) * (1 + 1e-12)


def test_mae_equals_rmse_when_errors_have_equal_magnitude():
    assert mae([1.0, -1.0, 1.0], [0.0, 0.0, 0.0]) == rmse([1.0, -1.0, 1.0], [0.0, 0.0, 0.0])


@settings(max_examples=60, deadline=None)
@given(st.integers(10, 200), st.integers(3, 10), st.integers(0, 10 ** 6))
def test_split_is_a_partition(n_entries, n, seed):
    n = min(n, n_entries)
    if n < 3:
        return
    rng = np.random.default_rng(seed)
    flat = rng.choice(40 * 40, size=n_entries, replace=False)
    u, v = np.divmod(flat, 40)
    ratings = SparseRatings(40, 40, u, v, rng.integers(1, 6, n_entries))
    split = split_dataset(ratings, n, seed)
    cells = [set(zip(s.users.tolist(), s.items.tolist())) for s in (split.train, split.label_source, split.test)]
    assert sum(map(len, cells)) == n_entries
    assert set.union(*cells) == set(zip(u.tolist(), v.tolist()))
    base, extra = divmod(n_entries, n)
    assert len(split.train) == base + (extra > 0)
    assert len(split.label_source) == base + (extra > 1)
    assert split.train.shape == ratings.shape
    assert split.sparsity == len(split.train) / 1600


def test_split_is_reproducible_and_validates():
    data = make_planted(20, 15, density=0.5, seed=0)
    a, b = split_dataset(data.ratings, 5, 3), split_dataset(data.ratings, 5, 3)
    assert a.train.entries() == b.train.entries()
    assert a.train.entries() != split_dataset(data.ratings, 5, 4).train.entries()
    with pytest.raises(ValueError):
        split_dataset(data.ratings, 2, 0)
    with pytest.raises(DataError):
        split_dataset(SparseRatings(2, 2, [0], [0], [3.0]), 3, 0)


def test_derive_labels_thresholds_above_three():
    src = SparseRatings(1, 5, [0] * 5, range(5), [1, 2, 3, 3.5, 5])
    assert derive_labels(src).values.tolist() == [0, 0, 0, 1, 1]


def test_evaluate_reports_raw_and_clamped():
    data = make_planted(30, 20, density=0.5, seed=1)
    split = split_dataset(data.ratings, 3, 0)
    model, _ = fit(split.train, split.labels, None, FitConfig(d=2, max_iter=30))
    out = evaluate(model, split.test)
    assert set(out) == {"mae", "rmse", "mae_clamped", "rmse_clamped"}
    assert out["mae"] <= out["rmse"] and out["mae_clamped"] <= out["rmse_clamped"]
    assert out["mae_clamped"] <= out["mae"] + 1e-15


def small_sweep(Q, **kw):
    data = make_planted(40, 30, density=0.5, seed=2, item_skew=1.0)
    cfg = FitConfig(d=2, max_iter=40, tol=1e-3)
    return run_sweep(data.ratings, Q if Q is not None else data.descriptions, cfg, n_values=(3, 5), seeds=(0, 1),
                     **kw)


def test_sweep_report_layout():
    report = small_sweep(None)
    assert len(report.records) == 2 * 2 * 3
    lines = report.to_csv().splitlines()
    assert lines[0] == ",".join(REPORT_COLUMNS)
    assert lines[13] == "" and lines[14] == "# aggregate"
    agg = report.aggregate()
    assert len(agg) == 6 and all(row["runs"] == 2 for row in agg)
    recf = report.select("RECF", 3)
    assert agg[0]["mae_mean"] == pytest.approx(np.mean([r.mae for r in recf]))
    assert agg[0]["mae_std"] == pytest.approx(np.std([r.mae for r in recf], ddof=1))
    assert all(r.seconds == 0.0 for r in report.records)
    assert small_sweep(None).to_csv() == report.to_csv()


def test_variants_without_descriptions_ignore_q():
    a = small_sweep(None, variants=("NO-DESC", "RATINGS-ONLY"))
    scrambled = [["noise" + str(i)] for i in range(30)]
    b = small_sweep(scrambled, variants=("NO-DESC", "RATINGS-ONLY"))
    assert a.to_csv() == b.to_csv()


def test_failed_cells_are_recorded():
    data = make_planted(10, 8, density=0.5, seed=0)
    report = run_sweep(data.ratings, data.descriptions, FitConfig(d=9, max_iter=5), n_values=(3,), seeds=(0,),
                       variants=("NO-DESC",))
    rec = report.records[0]
    assert not rec.ok and "d=9" in rec.error and math.isnan(rec.mae)
    assert report.aggregate()[0]["failed"] == 1
    with pytest.raises(ValueError):
        run_sweep(data.ratings, None, variants=("BEST",))
