import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdemts import tape
from pdemts.expr import (
    Binary,
    BindingError,
    Constant,
    ExprError,
    ExprSyntaxError,
    PdeSpec,
    Power,
    Unary,
    Var,
    evaluate,
    evaluate_batch,
    evaluate_on_tape,
    free_symbols,
    parse_text,
    read_pde_file,
    to_text,
    write_pde_file,
)


def test_evaluate_basics():
    assert evaluate(Constant(3.5), {}) == 3.5
    assert evaluate(Binary("+", Var("X1"), Constant(0.0)), {"X1": 7}) == 7
    assert evaluate(Binary("/", Constant(1.0), Constant(0.0)), {}) == 1.0  # protected


def test_evaluate_unbound_symbol():
    with pytest.raises(BindingError):
        evaluate(Var("X1"), {})


def test_evaluate_batch_matches_scalar_loop(rng):
    expr = Binary("*", Unary("sin", Var("X1")), Binary("+", Var("dY2_dX1"), Constant(2.0)))
    cols = {"X1": rng.normal(size=3), "dY2_dX1": rng.normal(size=3)}
    batch = evaluate_batch(expr, cols)
    loop = [evaluate(expr, {k: v[i] for k, v in cols.items()}) for i in range(3)]
    np.testing.assert_allclose(batch, loop, rtol=1e-15)


def test_evaluate_batch_projection_and_product(rng):
    cols = {"dY1_dX1": rng.normal(size=5), "X2": rng.normal(size=5)}
    np.testing.assert_array_equal(evaluate_batch(Var("dY1_dX1"), cols), cols["dY1_dX1"])
    np.testing.assert_allclose(
        evaluate_batch(Binary("*", Var("dY1_dX1"), Var("X2")), cols),
        cols["dY1_dX1"] * cols["X2"],
    )


def test_to_text_examples():
    e = Binary("+", Binary("*", Constant(2.0), Var("X1")), Constant(1.0))
    assert to_text(e) == "2*X1 + 1"
    e2 = parse_text("sin(X1)*dY2_dX1")
    assert e2 == Binary("*", Unary("sin", Var("X1")), Var("dY2_dX1"))


def test_parse_syntax_error_offset():
    with pytest.raises(ExprSyntaxError) as ei:
        parse_text("2 +")
    assert ei.value.offset == 3


def test_parse_unknown_symbol():
    with pytest.raises(ExprSyntaxError):
        parse_text("2*foo")
    with pytest.raises(ExprSyntaxError):
        parse_text("X1 + Y2", symbols={"X1"})


def test_power_cap():
    with pytest.raises(ExprError):
        Power(Var("X1"), 7)
    with pytest.raises(ExprSyntaxError):
        parse_text("X1^7")
    assert parse_text("X1^6") == Power(Var("X1"), 6)


# random expression trees for the round-trip property
SYMBOLS = ["X1", "X2", "Y1", "dY1_dX1", "dY2_dX3"]


def exprs(depth):
    if depth <= 1:
        return st.one_of(
            st.sampled_from(SYMBOLS).map(Var),
            st.floats(min_value=-50, max_value=50, allow_nan=False).map(
                lambda v: Constant(float(v))),
            st.integers(min_value=0, max_value=99).map(lambda v: Constant(float(v))),
        )
    sub = exprs(depth - 1)
    return st.one_of(
        exprs(1),
        st.tuples(st.sampled_from("+-*/"), sub, sub).map(lambda t: Binary(*t)),
        st.tuples(st.sampled_from(["sin", "cos", "tanh"]), sub).map(lambda t: Unary(*t)),
        st.tuples(sub, st.integers(min_value=0, max_value=6)).map(lambda t: Power(*t)),
    )


@settings(max_examples=300, deadline=None)
@given(exprs(6))
def test_text_roundtrip(e):
    assert parse_text(to_text(e)) == e


@settings(max_examples=100, deadline=None)
@given(exprs(5))
def test_tape_value_matches_plain_evaluate(e):
    bindings = {s: 0.37 + 0.11 * i for i, s in enumerate(SYMBOLS)}
    nodes = {s: tape.Node(v) for s, v in bindings.items()}
    plain = evaluate(e, bindings)
    node = evaluate_on_tape(e, nodes)
    assert abs(float(node.value) - plain) <= 1e-12 * max(1.0, abs(plain))


def test_protected_div_never_nonfinite(rng):
    e = Binary("/", Var("X1"), Var("X2"))
    cols = {"X1": rng.normal(size=100), "X2": np.linspace(-1e-6, 1e-6, 100)}
    out = evaluate_batch(e, cols)
    assert np.all(np.isfinite(out))


def test_evaluate_on_tape_gradient_of_product(rng):
    a = tape.Node(1.7)
    b = tape.Node(-0.6)
    node = evaluate_on_tape(Binary("*", Var("a"), Var("b")), {"a": a, "b": b})
    (ga,) = tape.grad_values(node, [a])
    h = 1e-6
    fd = (
        evaluate(Binary("*", Var("a"), Var("b")), {"a": 1.7 + h, "b": -0.6})
        - evaluate(Binary("*", Var("a"), Var("b")), {"a": 1.7 - h, "b": -0.6})
    ) / (2 * h)
    assert abs(ga - fd) / abs(fd) < 1e-6
    assert ga == pytest.approx(-0.6)


def test_evaluate_on_tape_constant_has_zero_grad():
    x = tape.Node(2.0)
    node = evaluate_on_tape(Constant(5.0), {"X1": x})
    (g,) = tape.grad_values(tape.sum_(node), [x])
    assert g == 0.0


def test_pdespec_lhs_not_in_rhs():
    with pytest.raises(ExprError):
        PdeSpec(lhs=(1, 1), rhs=Var("dY1_dX1"))
    spec = PdeSpec(lhs=(1, 1), rhs=Var("dY2_dX1"), mask_bit=1)
    assert spec.lhs_symbol == "dY1_dX1"


def test_pde_file_roundtrip(tmp_path):
    pdes = [
        PdeSpec(lhs=(1, 1), rhs=parse_text("2*dY2_dX1 + 0.5*X3"), mask_bit=1,
                fit_metrics={"r2": 0.9876}),
        PdeSpec(lhs=(3, 1), rhs=Constant(0.0), mask_bit=0, trivial=True),
    ]
    path = tmp_path / "pdes.txt"
    write_pde_file(pdes, str(path))
    back = read_pde_file(str(path))
    assert [p.lhs for p in back] == [(1, 1), (3, 1)]
    assert back[0].rhs == pdes[0].rhs
    assert back[0].mask_bit == 1
    assert back[0].fit_metrics["r2"] == pytest.approx(0.9876, abs=1e-4)


def test_free_symbols():
    e = parse_text("sin(X1)*dY2_dX1 + Y1")
    assert free_symbols(e) == {"X1", "dY2_dX1", "Y1"}
