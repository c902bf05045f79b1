"""Expression trees for discovered equation right-hand sides.

Grammar of the text form (used in PDE files and library manifests):

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := '-' factor | power
    power  := atom ('^' INT)*
    atom   := NUMBER | FUNC '(' expr ')' | SYMBOL | '(' expr ')'

Symbols are ``X<k>`` (state), ``Y<j>`` (target) and ``dY<j>_dX<i>``
(derivative terms). Division is protected: values with |denominator|
below 1e-9 evaluate to 1.0.
"""

import re
from dataclasses import dataclass, field

import numpy as np

from . import tape

MAX_POW = 6
FUNCS = ("sin", "cos", "tanh")
_SYMBOL_RE = re.compile(r"^(X\d+|Y\d+|dY\d+_dX\d+)$")


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class BindingError(ExprError):
    pass


class Expr:
    pass


@dataclass(frozen=True)
class Constant(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Unary(Expr):
    fn: str
    arg: Expr


@dataclass(frozen=True)
class Binary(Expr):
    op: str  # '+', '-', '*', '/'
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Power(Expr):
    base: Expr
    exponent: int

    def __post_init__(self):
        if not (0 <= self.exponent <= MAX_POW):
            raise ExprError(f"power exponent {self.exponent} outside 0..{MAX_POW}")


def free_symbols(expr):
    """Set of symbol names referenced by the tree."""
    out = set()
    stack = [expr]
    while stack:
        e = stack.pop()
        if isinstance(e, Var):
            out.add(e.name)
        elif isinstance(e, Unary):
            stack.append(e.arg)
        elif isinstance(e, Binary):
            stack.extend((e.left, e.right))
        elif isinstance(e, Power):
            stack.append(e.base)
    return out


def depth(expr):
    if isinstance(expr, (Constant, Var)):
        return 1
    if isinstance(expr, Unary):
        return 1 + depth(expr.arg)
    if isinstance(expr, Power):
        return 1 + depth(expr.base)
    return 1 + max(depth(expr.left), depth(expr.right))


def size(expr):
    """Node count."""
    if isinstance(expr, (Constant, Var)):
        return 1
    if isinstance(expr, Unary):
        return 1 + size(expr.arg)
    if isinstance(expr, Power):
        return 1 + size(expr.base)
    return 1 + size(expr.left) + size(expr.right)


# ------------------------------------------------------------------ evaluate

def evaluate(expr, bindings):
    """Evaluate with scalar bindings (symbol name -> float)."""
    if isinstance(expr, Constant):
        return expr.value
    if isinstance(expr, Var):
        try:
            return float(bindings[expr.name])
        except KeyError:
            raise BindingError(f"unbound symbol {expr.name!r}") from None
    if isinstance(expr, Unary):
        x = evaluate(expr.arg, bindings)
        return float(getattr(np, expr.fn)(x))
    if isinstance(expr, Power):
        return evaluate(expr.base, bindings) ** expr.exponent
    a = evaluate(expr.left, bindings)
    b = evaluate(expr.right, bindings)
    if expr.op == "+":
        return a + b
    if expr.op == "-":
        return a - b
    if expr.op == "*":
        return a * b
    return a / b if abs(b) >= tape.PDIV_GUARD else 1.0


def evaluate_batch(expr, columns, n=None):
    """Vectorized evaluation over a mapping of symbol name -> 1-D array.

    ``n`` pins the output length when the expression is constant-only.
    """
    if n is None:
        for v in columns.values():
            n = len(np.asarray(v))
            break
    if n is None:
        raise BindingError("cannot infer batch length from empty bindings")

    def rec(e):
        if isinstance(e, Constant):
            return np.full(n, e.value)
        if isinstance(e, Var):
            try:
                return np.asarray(columns[e.name], dtype=np.float64)
            except KeyError:
                raise BindingError(f"unbound symbol {e.name!r}") from None
        if isinstance(e, Unary):
            return getattr(np, e.fn)(rec(e.arg))
        if isinstance(e, Power):
            return rec(e.base) ** e.exponent
        a, b = rec(e.left), rec(e.right)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        small = np.abs(b) < tape.PDIV_GUARD
        return np.where(small, 1.0, a / np.where(small, 1.0, b))

    return rec(expr)


def evaluate_on_tape(expr, bindings):
    """Evaluate with tape.Node bindings, emitting differentiation-graph nodes."""
    if isinstance(expr, Constant):
        return tape.Node(expr.value)
    if isinstance(expr, Var):
        try:
            return bindings[expr.name]
        except KeyError:
            raise BindingError(f"unbound symbol {expr.name!r}") from None
    if isinstance(expr, Unary):
        return getattr(tape, expr.fn)(evaluate_on_tape(expr.arg, bindings))
    if isinstance(expr, Power):
        return tape.pow_int(evaluate_on_tape(expr.base, bindings), expr.exponent)
    a = evaluate_on_tape(expr.left, bindings)
    b = evaluate_on_tape(expr.right, bindings)
    if expr.op == "+":
        return tape.add(a, b)
    if expr.op == "-":
        return tape.sub(a, b)
    if expr.op == "*":
        return tape.mul(a, b)
    return tape.protected_div(a, b)


# ------------------------------------------------------------------ text form

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _fmt_const(v):
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def _prec(e):
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Power):
        return 3
    return 4


def to_text(expr):
    """Canonical infix text; ``parse_text`` restores the exact tree."""

    def rec(e, parent_prec, is_right):
        if isinstance(e, Constant):
            return _fmt_const(e.value)
        if isinstance(e, Var):
            return e.name
        if isinstance(e, Unary):
            return f"{e.fn}({rec(e.arg, 0, False)})"
        if isinstance(e, Power):
            base = rec(e.base, 4, False)
            if not (isinstance(e.base, (Var, Unary)) or
                    (isinstance(e.base, Constant) and e.base.value >= 0)):
                base = f"({base})"
            return f"{base}^{e.exponent}"
        p = _PREC[e.op]
        sep = f" {e.op} " if p == 1 else e.op
        text = rec(e.left, p, False) + sep + rec(e.right, p, True)
        if p < parent_prec or (p == parent_prec and is_right):
            return f"({text})"
        return text

    return rec(expr, 0, False)


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text):
    tokens, pos = [], 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            if text[pos:].strip() == "":
                break
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


def parse_text(text, symbols=None):
    """Parse the canonical text form back into an Expr tree.

    ``symbols``, when given, is the set of admissible symbol names;
    otherwise any well-formed X/Y/dY_dX name is accepted.
    """
    tokens = _tokenize(text)
    pos = [0]

    def peek():
        return tokens[pos[0]]

    def advance():
        tok = tokens[pos[0]]
        pos[0] += 1
        return tok

    def expect_op(op):
        kind, val, off = peek()
        if kind != "op" or val != op:
            raise ExprSyntaxError(f"expected {op!r}", off)
        advance()

    def parse_expr():
        node = parse_term()
        while peek()[0] == "op" and peek()[1] in "+-":
            op = advance()[1]
            node = Binary(op, node, parse_term())
        return node

    def parse_term():
        node = parse_factor()
        while peek()[0] == "op" and peek()[1] in "*/":
            op = advance()[1]
            node = Binary(op, node, parse_factor())
        return node

    def parse_factor():
        kind, val, off = peek()
        if kind == "op" and val == "-":
            advance()
            inner = parse_factor()
            if isinstance(inner, Constant):
                return Constant(-inner.value)
            return Binary("*", Constant(-1.0), inner)
        return parse_power()

    def parse_power():
        node = parse_atom()
        while peek()[0] == "op" and peek()[1] == "^":
            advance()
            kind, val, off = peek()
            if kind != "num" or "." in val or "e" in val or "E" in val:
                raise ExprSyntaxError("exponent must be an integer", off)
            advance()
            k = int(val)
            if k > MAX_POW:
                raise ExprSyntaxError(f"exponent {k} exceeds {MAX_POW}", off)
            node = Power(node, k)
        return node

    def parse_atom():
        kind, val, off = advance()
        if kind == "num":
            return Constant(float(val))
        if kind == "ident":
            if val in FUNCS:
                expect_op("(")
                arg = parse_expr()
                expect_op(")")
                return Unary(val, arg)
            if symbols is not None:
                if val not in symbols:
                    raise ExprSyntaxError(f"unknown symbol {val!r}", off)
            elif not _SYMBOL_RE.match(val):
                raise ExprSyntaxError(f"unknown symbol {val!r}", off)
            return Var(val)
        if kind == "op" and val == "(":
            node = parse_expr()
            expect_op(")")
            return node
        raise ExprSyntaxError("expected a value", off)

    node = parse_expr()
    kind, val, off = peek()
    if kind != "end":
        raise ExprSyntaxError(f"unexpected trailing {val!r}", off)
    return node


# ------------------------------------------------------------------ PdeSpec

@dataclass
class PdeSpec:
    """A discovered constraint: the derivative dY<j>/dX<i> equals ``rhs``."""

    lhs: tuple  # (j, i), 1-based
    rhs: Expr
    mask_bit: int = 0
    fit_metrics: dict = field(default_factory=dict)
    trivial: bool = False

    def __post_init__(self):
        if self.mask_bit not in (0, 1):
            raise ExprError(f"mask_bit must be 0 or 1, got {self.mask_bit}")
        if self.lhs_symbol in free_symbols(self.rhs):
            raise ExprError(f"lhs symbol {self.lhs_symbol} appears in rhs")

    @property
    def lhs_symbol(self):
        j, i = self.lhs
        return f"dY{j}_dX{i}"


_PDE_LINE_RE = re.compile(
    r"^dY(?P<j>\d+)_dX(?P<i>\d+)\s*=\s*(?P<rhs>[^#]+?)\s*"
    r"(?:#\s*r2=(?P<r2>[^\s]+)\s+mask=(?P<mask>[01]))?\s*$"
)


def format_pde_line(pde):
    r2 = pde.fit_metrics.get("r2", float("nan"))
    return f"{pde.lhs_symbol} = {to_text(pde.rhs)} # r2={r2:.6g} mask={pde.mask_bit}"


def write_pde_file(pdes, path):
    with open(path, "w") as fh:
        for pde in pdes:
            fh.write(format_pde_line(pde) + "\n")


def read_pde_file(path):
    pdes = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            m = _PDE_LINE_RE.match(line)
            if m is None:
                raise ExprError(f"{path}:{lineno}: malformed PDE line")
            rhs = parse_text(m.group("rhs"))
            metrics = {}
            if m.group("r2") is not None:
                r2 = float(m.group("r2"))
                if np.isfinite(r2):
                    metrics["r2"] = r2
            pdes.append(
                PdeSpec(
                    lhs=(int(m.group("j")), int(m.group("i"))),
                    rhs=rhs,
                    mask_bit=int(m.group("mask") or 0),
                    fit_metrics=metrics,
                )
            )
    return pdes
