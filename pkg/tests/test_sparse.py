import numpy as np
import pytest

from pdemts.diffops import forward_difference
from pdemts.errors import ConfigError, DataError
from pdemts.expr import to_text
from pdemts.featlib import LibraryConfig, build_theta
from pdemts.sparse import (
    DEFAULT_LAMBDA_GRID,
    assemble_pde,
    cross_validate_lambda,
    lasso_cd,
    stlsq,
    validate_pde,
)


def soft(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def test_identity_design_soft_threshold():
    A = np.eye(2)
    b = np.array([3.0, 0.5])
    fit = lasso_cd(A, b, lam=1.0)
    np.testing.assert_allclose(fit.coefficients, [2.5, 0.0], atol=1e-12)


def test_orthonormal_matches_closed_form_on_grid(rng):
    n, m = 40, 8
    Q, _ = np.linalg.qr(rng.normal(size=(n, m)))
    c_true = rng.normal(size=m) * 3
    b = Q @ c_true
    for lam in DEFAULT_LAMBDA_GRID:
        fit = lasso_cd(Q, b, lam)
        np.testing.assert_allclose(fit.coefficients, soft(Q.T @ b, lam / 2.0), atol=1e-10)


def test_lambda_zero_matches_normal_equations(rng):
    A = rng.normal(size=(50, 4)) + 0.1
    b = rng.normal(size=50)
    fit = lasso_cd(A, b, lam=0.0, tol=1e-13, max_iter=20000)
    oracle = np.linalg.solve(A.T @ A, A.T @ b)
    np.testing.assert_allclose(fit.coefficients, oracle, atol=1e-8)


def test_zero_target_and_zero_column(rng):
    A = rng.normal(size=(10, 3))
    fit = lasso_cd(A, np.zeros(10), lam=0.5)
    assert fit.empty_model and np.all(fit.coefficients == 0)
    A2 = A.copy()
    A2[:, 1] = 0.0
    with pytest.warns(UserWarning):
        fit2 = lasso_cd(A2, A[:, 0], lam=0.1)
    assert fit2.coefficients[1] == 0.0


def test_objective_trace_monotone(rng):
    A = rng.normal(size=(30, 6))
    b = rng.normal(size=30)
    fit = lasso_cd(A, b, lam=2.0)
    trace = np.asarray(fit.objective_trace)
    assert np.all(np.diff(trace) <= 1e-9 * (1 + np.abs(trace[:-1])))


def test_negative_lambda_rejected():
    with pytest.raises(ConfigError):
        lasso_cd(np.eye(2), np.ones(2), lam=-1.0)


def decay_system(n, seed, sigma=0.01):
    """y' = -0.5 y on a uniform grid; the derivative target is the forward
    difference of the trajectory plus observation noise at level sigma.

    (Differencing noisy samples at this grid spacing would amplify the
    noise by ~sqrt(2)/h and no sparse regressor could pin the coefficient
    to +-0.02; the noise therefore enters the regression target.)
    """
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 5, n)
    y = 2.0 * np.exp(-0.5 * t)
    ydot = forward_difference(y, t) + sigma * rng.standard_normal(n)
    return y, ydot


def test_stlsq_recovers_decay():
    y, ydot = decay_system(1000, seed=7)
    lib = build_theta(y[:, None], ["Y1"], LibraryConfig(degree=2, interactions=True))
    fit = stlsq(lib.columns, ydot, threshold=0.05)
    assert list(fit.active_set) == [1]
    assert fit.coefficients[1] == pytest.approx(-0.5, abs=1e-2)


def test_stlsq_threshold_zero_is_least_squares(rng):
    A = rng.normal(size=(40, 3))
    b = rng.normal(size=40)
    fit = stlsq(A, b, threshold=0.0)
    oracle, *_ = np.linalg.lstsq(A, b, rcond=None)
    np.testing.assert_allclose(fit.coefficients, oracle, atol=1e-10)


def test_stlsq_all_thresholded_is_empty_model(rng):
    A = rng.normal(size=(40, 3))
    b = rng.normal(size=40) * 1e-4
    fit = stlsq(A, b, threshold=1e3)
    assert fit.empty_model


def test_cv_noise_prefers_largest_lambda():
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(60, 5))
        b = rng.normal(size=60)
        report = cross_validate_lambda(A, b, k=5)
        hits += report.best_lambda == max(DEFAULT_LAMBDA_GRID)
    assert hits >= 15  # ties break toward sparsity, so noise lands at the top


def test_cv_sparse_truth_prefers_small_lambda(rng):
    A = rng.normal(size=(200, 5))
    b = A[:, 2] * 4.0  # noiseless, exactly sparse
    report = cross_validate_lambda(A, b, k=5)
    assert report.best_lambda <= 1.0
    assert abs(report.final_fit.coefficients[2] - 4.0) < 0.1
    assert np.argmax(np.abs(report.final_fit.coefficients)) == 2


def test_cv_errors(rng):
    A = rng.normal(size=(3, 2))
    with pytest.raises(DataError):
        cross_validate_lambda(A, np.ones(3), k=5)
    with pytest.raises(ConfigError):
        cross_validate_lambda(A, np.ones(3), k=1)


def test_assemble_pde_text(rng):
    X = rng.normal(size=(5, 1))
    lib = build_theta(X, ["X1"], LibraryConfig(degree=2))
    from pdemts.sparse import SparseFit

    fit = SparseFit(coefficients=np.array([1.5, 0.0, -2.0]), lam=0.0)
    pde = assemble_pde(fit, lib, lhs=(1, 2))
    assert to_text(pde.rhs) == "1.5 - 2*X1^2"
    assert pde.lhs_symbol == "dY1_dX2"

    empty = assemble_pde(SparseFit(coefficients=np.zeros(3), lam=0.0), lib, lhs=(1, 2))
    assert empty.trivial and to_text(empty.rhs) == "0"


def test_assemble_matches_design_product(rng):
    X = rng.normal(size=(50, 2))
    lib = build_theta(X, ["X1", "X2"], LibraryConfig(degree=3))
    from pdemts.sparse import SparseFit

    c = rng.normal(size=lib.columns.shape[1])
    c[np.abs(c) < 0.3] = 0.0
    pde = assemble_pde(SparseFit(coefficients=c, lam=0.0), lib, lhs=(2, 1))
    from pdemts.expr import evaluate_batch

    cols = {"X1": X[:, 0], "X2": X[:, 1]}
    np.testing.assert_allclose(
        evaluate_batch(pde.rhs, cols, n=50), lib.columns @ c, atol=1e-10)


def test_validate_pde_r2_semantics(rng):
    lhs_col = rng.normal(size=100)
    from pdemts.expr import PdeSpec, Var, Constant

    perfect = PdeSpec(lhs=(1, 1), rhs=Var("dY2_dX1"))
    m = validate_pde(perfect, {"dY1_dX1": lhs_col, "dY2_dX1": lhs_col})
    assert m["r2"] == pytest.approx(1.0)

    mean_model = PdeSpec(lhs=(1, 1), rhs=Constant(float(lhs_col.mean())))
    m = validate_pde(mean_model, {"dY1_dX1": lhs_col})
    assert m["r2"] == pytest.approx(0.0, abs=1e-12)

    bad = PdeSpec(lhs=(1, 1), rhs=Constant(float(lhs_col.mean() + 10 * lhs_col.std())))
    m = validate_pde(bad, {"dY1_dX1": lhs_col})
    assert m["r2"] < 0


def test_stlsq_support_recovery_rate():
    wins = 0
    for seed in range(40):
        y, ydot = decay_system(1000, seed=seed)
        lib = build_theta(y[:, None], ["Y1"], LibraryConfig(degree=2))
        fit = stlsq(lib.columns, ydot, threshold=0.05)
        ok = list(fit.active_set) == [1] and abs(fit.coefficients[1] + 0.5) < 0.02
        wins += ok
    assert wins >= 38  # 95% support-recovery bar
