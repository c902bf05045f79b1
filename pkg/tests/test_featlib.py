from math import comb

import numpy as np
import pytest

from pdemts.errors import ConfigError
from pdemts.expr import evaluate_batch, to_text
from pdemts.featlib import LibraryConfig, build_poly_features, build_theta


def test_two_vars_degree_two_matches_enumeration(rng):
    X = rng.normal(size=(7, 2))
    lib = build_theta(X, ["X1", "X2"], LibraryConfig(degree=2, interactions=True))
    assert lib.names == ["1", "X1", "X2", "X1^2", "X1*X2", "X2^2"]
    assert lib.columns.shape == (7, 6)
    np.testing.assert_allclose(lib.columns[:, 4], X[:, 0] * X[:, 1])


def test_degree_one_with_trig():
    X = np.linspace(-1, 1, 5)[:, None]
    lib = build_theta(X, ["X1"], LibraryConfig(degree=1, trig=True))
    assert lib.names == ["1", "X1", "sin(X1)", "cos(X1)"]
    np.testing.assert_allclose(lib.columns[:, 2], np.sin(X[:, 0]))


def test_counting_oracle_matches_multiset_coefficient(rng):
    # C(d + q, q) columns with bias and all interactions
    for d, q in ((3, 3), (2, 3), (4, 2)):
        X = rng.normal(size=(5, d))
        lib = build_theta(X, [f"X{i+1}" for i in range(d)],
                          LibraryConfig(degree=q, interactions=True))
        assert lib.columns.shape[1] == comb(d + q, q)


def test_no_interactions_pure_powers(rng):
    X = rng.normal(size=(4, 2))
    lib = build_theta(X, ["X1", "X2"], LibraryConfig(degree=3, interactions=False))
    assert lib.names == ["1", "X1", "X2", "X1^2", "X2^2", "X1^3", "X2^3"]


def test_columns_match_expr_evaluation(rng):
    X = rng.normal(size=(6, 3))
    syms = ["X1", "X2", "X3"]
    lib = build_theta(X, syms, LibraryConfig(degree=3, interactions=True, trig=True))
    cols = {s: X[:, k] for k, s in enumerate(syms)}
    for k, e in enumerate(lib.exprs):
        np.testing.assert_allclose(
            lib.columns[:, k], evaluate_batch(e, cols, n=6), atol=1e-12,
            err_msg=f"column {k} ({to_text(e)})",
        )


def test_order_is_deterministic(rng):
    X = rng.normal(size=(5, 3))
    a = build_theta(X, ["X1", "X2", "X3"], LibraryConfig(degree=3))
    b = build_theta(X, ["X1", "X2", "X3"], LibraryConfig(degree=3))
    assert a.names == b.names


def test_poly_features_single_column(rng):
    z = rng.normal(size=(8, 1))
    lib = build_poly_features(z, ["dY1_dX1"], degree=3)
    assert lib.names == ["1", "dY1_dX1", "dY1_dX1^2", "dY1_dX1^3"]


def test_poly_features_two_columns_count(rng):
    z = rng.normal(size=(8, 2))
    lib = build_poly_features(z, ["a1", "a2"], degree=3)
    assert lib.columns.shape[1] == comb(2 + 3, 3)


def test_errors():
    with pytest.raises(ConfigError):
        build_theta(np.ones((3, 1)), ["X1"], LibraryConfig(degree=0))
    with pytest.raises(ConfigError):
        build_poly_features(np.ones((3, 0)), [], degree=3)
    with pytest.raises(ConfigError):
        build_poly_features(np.ones((3, 1)), ["X1"], degree=0)
