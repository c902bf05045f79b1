"""Candidate-function libraries: polynomial/interaction/trig feature maps
paired with the expression describing each column."""

from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np

from .errors import ConfigError
from .expr import Binary, Constant, Power, Unary, Var, to_text


@dataclass(frozen=True)
class LibraryConfig:
    degree: int = 2
    interactions: bool = True
    trig: bool = False
    bias: bool = True


@dataclass
class FunctionLibrary:
    columns: np.ndarray  # (n, m)
    exprs: list  # m Expr, one per column
    config: LibraryConfig

    @property
    def names(self):
        return [to_text(e) for e in self.exprs]

    def write_manifest(self, path):
        with open(path, "w") as fh:
            for k, name in enumerate(self.names):
                fh.write(f"{k}\t{name}\n")


def _term_expr(symbols, counts):
    """Expression for prod_k symbols[k]^counts[k] in graded-lex column order."""
    factors = []
    for k, c in enumerate(counts):
        if c == 0:
            continue
        base = Var(symbols[k])
        factors.append(base if c == 1 else Power(base, c))
    if not factors:
        return Constant(1.0)
    out = factors[0]
    for f in factors[1:]:
        out = Binary("*", out, f)
    return out


def build_theta(X, symbols, config=LibraryConfig()):
    """Evaluate the basis-function library on state matrix ``X`` (n, d).

    Column order is deterministic: bias, then terms grouped by total degree
    and ordered lexicographically within each degree, then sin/cos of each
    raw variable when trig is enabled.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if d != len(symbols):
        raise ConfigError(f"{d} columns but {len(symbols)} symbols")
    if config.degree < 1:
        raise ConfigError(f"library degree must be >= 1, got {config.degree}")
    if not np.all(np.isfinite(X)):
        raise ConfigError("library input contains non-finite values")

    cols, exprs = [], []
    if config.bias:
        cols.append(np.ones(n))
        exprs.append(Constant(1.0))
    for deg in range(1, config.degree + 1):
        if config.interactions:
            index_tuples = combinations_with_replacement(range(d), deg)
        else:
            index_tuples = ((k,) * deg for k in range(d))
        for idx in index_tuples:
            counts = [0] * d
            for k in idx:
                counts[k] += 1
            col = np.ones(n)
            for k, c in enumerate(counts):
                if c:
                    col = col * X[:, k] ** c
            cols.append(col)
            exprs.append(_term_expr(symbols, counts))
    if config.trig:
        for k in range(d):
            cols.append(np.sin(X[:, k]))
            exprs.append(Unary("sin", Var(symbols[k])))
            cols.append(np.cos(X[:, k]))
            exprs.append(Unary("cos", Var(symbols[k])))
    return FunctionLibrary(columns=np.column_stack(cols), exprs=exprs, config=config)


def build_poly_features(X, symbols, degree=3):
    """Polynomial feature map over already-selected columns (bias included).

    Default degree 3 matches the discovery setup.
    """
    if len(symbols) == 0:
        raise ConfigError("empty column selection")
    if degree < 1:
        raise ConfigError(f"polynomial degree must be >= 1, got {degree}")
    return build_theta(
        X, symbols, LibraryConfig(degree=degree, interactions=True, trig=False, bias=True)
    )
