import numpy as np
import pytest

from pdemts.diffops import DerivativeMatrix, derivative_matrix, forward_difference
from pdemts.errors import DataError


def test_identity_slope():
    x = np.linspace(0, 1, 11)
    np.testing.assert_allclose(forward_difference(x, x), np.ones(11))


def test_quadratic_first_entry():
    t = np.array([0.0, 0.1, 0.2])
    out = forward_difference(t**2, t)
    assert out[0] == pytest.approx(0.1)
    assert out[-1] == out[-2]  # last entry repeats


def test_constant_is_zero():
    t = np.linspace(0, 2, 9)
    np.testing.assert_array_equal(forward_difference(np.full(9, 3.3), t), np.zeros(9))


def test_duplicate_x_rejected():
    with pytest.raises(DataError, match="index 1"):
        forward_difference(np.arange(4.0), np.array([0.0, 1.0, 1.0, 2.0]))


def test_non_monotone_rejected():
    with pytest.raises(DataError):
        forward_difference(np.arange(4.0), np.array([0.0, 1.0, 0.5, 2.0]))


def test_linearity(rng):
    x = np.sort(rng.normal(size=50)) + np.arange(50) * 1e-3
    y1, y2 = rng.normal(size=50), rng.normal(size=50)
    a, b = 2.5, -1.25
    lhs = forward_difference(a * y1 + b * y2, x)
    rhs = a * forward_difference(y1, x) + b * forward_difference(y2, x)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_affine_exact(rng):
    x = np.cumsum(np.abs(rng.normal(size=30)) + 0.1)
    y = 3.0 * x - 7.0
    np.testing.assert_allclose(forward_difference(y, x), np.full(30, 3.0), atol=1e-12)


def test_matrix_shape_and_labels(rng):
    cols = {
        "t": np.linspace(0, 1, 20),
        "a": rng.normal(size=20),
        "b": rng.normal(size=20),
    }
    D = derivative_matrix(cols, targets=["a", "b"], dynamic_inputs=["t"])
    assert D.values.shape == (20, 2)
    assert D.labels == ["dY1_dX1", "dY2_dX1"]
    np.testing.assert_array_equal(D.column("dY1_dX1"), forward_difference(cols["a"], cols["t"]))


def test_matrix_all_inputs(rng):
    n = 25
    cols = {
        "t": np.linspace(0, 1, n),
        "u": np.cumsum(np.abs(rng.normal(size=n)) + 0.1),
        "a": rng.normal(size=n),
    }
    D = derivative_matrix(cols, targets=["a"], dynamic_inputs=["t", "u"])
    assert D.values.shape == (n, 2)
    assert D.labels == ["dY1_dX1", "dY1_dX2"]


def test_shape_contract_random_selections(rng):
    n = 15
    cols = {"t": np.linspace(0, 1, n)}
    for k in range(5):
        cols[f"c{k}"] = rng.normal(size=n)
    for _ in range(10):
        p = int(rng.integers(1, 6))
        targets = [f"c{k}" for k in rng.choice(5, size=p, replace=False)]
        D = derivative_matrix(cols, targets=targets, dynamic_inputs=["t"])
        assert D.values.shape[1] == len(targets)


def test_empty_dynamic_set_rejected():
    with pytest.raises(DataError):
        derivative_matrix({"a": np.arange(5.0)}, targets=["a"], dynamic_inputs=[])


def test_label_bijection_enforced():
    with pytest.raises(DataError):
        DerivativeMatrix(values=np.ones((3, 2)), labels=["dY1_dX1", "dY1_dX1"])


def test_csv_export(tmp_path, rng):
    cols = {"t": np.linspace(0, 1, 8), "a": rng.normal(size=8)}
    D = derivative_matrix(cols, targets=["a"], dynamic_inputs=["t"])
    path = tmp_path / "deriv.csv"
    D.write_csv(str(path))
    header = path.read_text().splitlines()[0]
    assert header == "dY1_dX1"
