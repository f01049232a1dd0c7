from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import bridge_oracle, fd_gradient, projection_oracle, random_instance
from recf.data import DataError, SparseLabels, SparseRatings
from recf.embeddings import DescriptionMatrix
from recf.factor_model import (FitConfig, SingularSystemError, fit, grad_U, grad_V, init_factors, lambda_schedule,
                               objective, penalized_objective, predict, predict_one, predict_pairs, solve_bridge,
                               solve_projection, update_factor)


def test_objective_matches_dense_formula():
    ratings, labels, C, model = random_instance(0)
    lam_L, lam_C = 0.3, 1.7
    R, L = ratings.to_dense(np.nan), labels.to_dense(np.nan)
    ER = np.nan_to_num(R - model.U @ model.B_R @ model.V.T)
    EL = np.nan_to_num(L - model.U @ model.B_L @ model.V.T)
    EC = np.nan_to_num(C.rows - model.V @ model.W_C)
    expected = 0.5 * (ER ** 2).sum() + lam_L / 2 * (EL ** 2).sum() + lam_C / 2 * (EC ** 2).sum()
    assert objective(model, ratings, labels, C, lam_L, lam_C) == pytest.approx(expected, rel=1e-12)
    extra = 0.01 / 2 * (model.B_R ** 2).sum() + lam_L * 0.01 / 2 * (model.B_L ** 2).sum() + 0.02 / 2 * (model.W_C ** 2).sum()
    J = penalized_objective(model, ratings, labels, C, lam_L, lam_C, beta=0.01, delta=0.02)
    assert J == pytest.approx(expected + extra, rel=1e-12)


def test_unobserved_values_do_not_matter():
    # the dense NaN view and the sparse view describe the same problem
    ratings, labels, C, model = random_instance(1)
    dense = SparseRatings.from_dense(ratings.to_dense(np.nan))
    assert objective(model, dense, labels, C, 0.2, 1.0) == objective(model, ratings, labels, C, 0.2, 1.0)
    rows = C.rows.copy()
    rows[~C.present] = 1e6
    C2 = DescriptionMatrix(rows, C.present)
    assert objective(model, ratings, labels, C2, 0.2, 1.0) == objective(model, ratings, labels, C, 0.2, 1.0)
    np.testing.assert_array_equal(grad_V(model, ratings, labels, C2, 0.2, 1.0), grad_V(model, ratings, labels, C, 0.2, 1.0))


@pytest.mark.parametrize("seed", range(5))
def test_gradients_without_labels_or_descriptions(seed):
    ratings, _, _, model = random_instance(seed)
    gU = fd_gradient(lambda X: objective(replace(model, U=X), ratings), model.U)
    gV = fd_gradient(lambda X: objective(replace(model, V=X), ratings), model.V)
    np.testing.assert_allclose(grad_U(model, ratings), gU, rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(grad_V(model, ratings), gV, rtol=1e-6, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 10.0))
def test_bridge_matches_oracle_for_any_ridge_weight(seed, beta):
    ratings, _, _, model = random_instance(seed)
    beta = max(beta, 1e-3)
    B = solve_bridge(model.U, model.V, ratings, beta)
    np.testing.assert_allclose(B, bridge_oracle(model.U, model.V, ratings, beta), atol=1e-8 * max(1, np.abs(B).max()))


def test_bridge_errors():
    ratings, _, _, model = random_instance(2, N=4, M=4, d=3)
    with pytest.raises(DataError):
        solve_bridge(model.U, model.V, SparseLabels.empty(4, 4), 0.1)
    one = SparseRatings(4, 4, [0], [0], [3.0])
    with pytest.raises(SingularSystemError):
        solve_bridge(model.U, model.V, one, 0.0)


def test_projection_matches_oracle_and_errors():
    ratings, _, C, model = random_instance(3)
    np.testing.assert_allclose(solve_projection(model.V, C, 0.5), projection_oracle(model.V, C, 0.5), atol=1e-10)
    with pytest.raises(DataError):
        solve_projection(model.V, DescriptionMatrix.empty(C.n_items, C.dim), 0.5)
    with pytest.raises(ValueError):
        solve_projection(model.V[:-1], C, 0.5)


def test_lambda_schedules():
    assert [lambda_schedule("linear", 2.5, 0.5, i) for i in range(1, 8)] == [2.5, 2.0, 1.5, 1.0, 0.5, 0.0, 0.0]
    assert [lambda_schedule("nonlinear", 2.5, 0.5, i) for i in (1, 2, 5)] == [2.5, 1.25, 0.5]
    assert lambda_schedule("mutation", 2.5, 0.5, 40) == 2.5
    assert lambda_schedule("mutation", 2.5, 0.5, 40, first_convergence_seen=True) == 0.0
    assert lambda_schedule("constant", 2.5, 0.5, 99, True) == 2.5
    with pytest.raises(ValueError):
        lambda_schedule("linear", 2.5, 0.5, 0)
    with pytest.raises(ValueError):
        lambda_schedule("cosine", 2.5, 0.5, 1)


def test_init_factors_are_top_singular_vectors():
    rng = np.random.default_rng(0)
    L = SparseLabels.from_dense(np.where(rng.random((9, 7)) < 0.6, rng.integers(0, 2, (9, 7)), np.nan))
    U, V = init_factors(L, 3)
    X = L.to_dense(0.0)
    evals, evecs = np.linalg.eigh(X.T @ X)
    top = evecs[:, ::-1][:, :3]
    np.testing.assert_allclose(np.abs(np.sum(V * top, axis=0)), 1.0, atol=1e-8)
    np.testing.assert_allclose(U.T @ U, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(V.T @ V, np.eye(3), atol=1e-12)


def test_init_factors_fallback_and_bounds():
    U, V = init_factors(SparseLabels.empty(5, 4), 2, seed=1)
    np.testing.assert_allclose(U.T @ U, np.eye(2), atol=1e-12)
    U2, _ = init_factors(SparseLabels.empty(5, 4), 2, seed=1)
    assert np.array_equal(U, U2)
    with pytest.raises(ValueError):
        init_factors(SparseLabels.empty(5, 4), 5)


def test_update_factor_backtracks():
    X = np.array([[1.0, -2.0]])
    f = lambda Y: float((Y ** 2).sum())
    Y, ok = update_factor(X, 2 * X, 10.0, f)
    assert ok and f(Y) <= f(X)
    Y, ok = update_factor(X, -2 * X, 1.0, f)  # ascent direction: no step is accepted
    assert not ok and Y is X
    Y, ok = update_factor(X, 2 * X, 10.0)
    assert ok and np.allclose(Y, X - 20 * X)


def test_fit_config_validation():
    for bad in (dict(d=0), dict(max_iter=0), dict(beta=-1), dict(schedule="bogus"), dict(schedule="linear", k=0)):
        with pytest.raises(ValueError):
            FitConfig(**bad)


def test_fit_ignores_unused_inputs():
    ratings, labels, C, _ = random_instance(4, N=8, M=7, d=2)
    cfg = FitConfig(d=2, lambda_L=0.0, lambda_C=0.0, max_iter=20)
    base, _ = fit(ratings, None, None, cfg)
    for L, D in ((labels, None), (None, C), (labels, C)):
        model, _ = fit(ratings, L, D, cfg)
        np.testing.assert_array_equal(predict(model), predict(base))


def test_mutation_trace_switches_once():
    ratings, labels, C, _ = random_instance(5, N=8, M=8, d=2)
    model, trace = fit(ratings, labels, C, FitConfig(d=2, max_iter=3000, tol=1e-3))
    assert trace.switch_iter is not None and trace.converged
    lams = [r.lambda_C for r in trace]
    assert all(l == 2.5 for l in lams[:trace.switch_iter])
    assert all(l == 0.0 for l in lams[trace.switch_iter:])
    assert model.W_C.shape == (2, C.dim)


def test_fit_stops_after_one_iteration_with_infinite_tolerance():
    ratings, labels, C, _ = random_instance(6, d=1)
    _, trace = fit(ratings, labels, C, FitConfig(d=1, schedule="constant", tol=np.inf))
    assert trace.n_iter == 1 and trace.converged


def test_fit_errors():
    with pytest.raises(DataError):
        fit(SparseRatings(3, 3, [], [], []))
    ratings, _, C, _ = random_instance(7, M=5)
    with pytest.raises(DataError):
        fit(ratings, None, DescriptionMatrix.empty(4, 2), FitConfig(d=1))


def test_cold_start_items_are_scored():
    ratings, labels, C, _ = random_instance(8, N=6, M=6, d=2)
    keep = ratings.items != 5
    train = SparseRatings(6, 6, ratings.users[keep], ratings.items[keep], ratings.values[keep])
    model, _ = fit(train, labels, C, FitConfig(d=2, max_iter=50))
    assert np.isfinite(predict(model)[:, 5]).all()


def test_predict_one_is_bit_identical_and_pairs_agree():
    _, _, _, model = random_instance(9)
    P = predict(model)
    N, M = model.shape
    for u in range(N):
        for v in range(M):
            assert predict_one(model, u, v) == P[u, v]
    u, v = np.divmod(np.arange(N * M), M)
    np.testing.assert_allclose(predict_pairs(model, u, v), P.ravel(), rtol=1e-12, atol=1e-12)
    assert predict(model, (1, 5)).min() >= 1 and predict(model, (1, 5)).max() <= 5
    with pytest.raises(IndexError):
        predict_one(model, N, 0)
    with pytest.raises(IndexError):
        predict_pairs(model, [0], [M])


def test_sparse_svd_path_agrees_with_dense(monkeypatch):
    import recf.factor_model as fm

    rng = np.random.default_rng(1)
    R = SparseRatings.from_dense(np.where(rng.random((30, 20)) < 0.5, rng.integers(1, 6, (30, 20)), np.nan))
    dense = init_factors(R, 3)
    monkeypatch.setattr(fm, "DENSE_SVD_LIMIT", 0)
    sparse = init_factors(R, 3)
    for a, b in zip(dense, sparse):
        np.testing.assert_allclose(a, b, atol=1e-8)
