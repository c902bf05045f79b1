"""Sparse regression engines for equation discovery.

The lasso objective here is the un-normalized form

    ||b - A c||^2 + lambda * ||c||_1

with no 1/n factor, so lambda values scale with the sample count. Most
regression libraries divide the quadratic term by 2n; grids tuned there
do not transfer.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .expr import Binary, Constant, PdeSpec, evaluate_batch

DEFAULT_LAMBDA_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)


@dataclass
class SparseFit:
    coefficients: np.ndarray
    lam: float
    objective_trace: list = field(default_factory=list)
    converged: bool = True
    empty_model: bool = False

    @property
    def active_set(self):
        return np.flatnonzero(self.coefficients)


@dataclass
class CvReport:
    grid: list
    mean_errors: list
    best_lambda: float
    final_fit: SparseFit


def _soft(x, t):
    return np.sign(x) * max(abs(x) - t, 0.0)


def lasso_cd(A, b, lam, tol=1e-10, max_iter=1000):
    """Cyclic coordinate descent with soft thresholding.

    Runs in the Gram (covariance) domain, so a sweep costs O(m^2) rather
    than O(n m). Converged when the largest coordinate change in a sweep
    drops below ``tol``; otherwise stops at ``max_iter`` with
    ``converged=False``.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64).ravel()
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise DataError("lasso_cd requires finite A and b")
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    n, m = A.shape
    G = A.T @ A
    Atb = A.T @ b
    btb = float(b @ b)
    col_sq = np.diag(G).copy()
    dead = col_sq == 0.0
    if np.any(dead):
        warnings.warn(f"{int(dead.sum())} zero column(s) in design; coefficients forced to 0")

    c = np.zeros(m)
    Gc = np.zeros(m)  # running G @ c
    trace = [btb]
    converged = False
    for _ in range(max_iter):
        max_delta = 0.0
        for j in range(m):
            if dead[j]:
                continue
            old = c[j]
            rho = Atb[j] - Gc[j] + col_sq[j] * old
            new = _soft(rho, lam / 2.0) / col_sq[j]
            if new != old:
                Gc += G[:, j] * (new - old)
                c[j] = new
                max_delta = max(max_delta, abs(new - old))
        obj = btb - 2.0 * float(c @ Atb) + float(c @ Gc) + lam * float(np.abs(c).sum())
        if obj > trace[-1] + 1e-9 * (1.0 + abs(trace[-1])):
            raise RuntimeError("coordinate-descent objective increased; numerical fault")
        trace.append(obj)
        if max_delta < tol:
            converged = True
            break
    fit = SparseFit(coefficients=c, lam=float(lam), objective_trace=trace, converged=converged)
    fit.empty_model = not np.any(c)
    return fit


def stlsq(A, b, threshold, n_iters=10):
    """Sequentially thresholded least squares.

    Alternates a least-squares solve on the active columns with zeroing
    coefficients below ``threshold``, until the active set stabilizes.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64).ravel()
    if threshold < 0:
        raise ConfigError(f"threshold must be >= 0, got {threshold}")
    m = A.shape[1]
    active = np.ones(m, dtype=bool)
    c = np.zeros(m)
    for _ in range(max(n_iters, 1)):
        if not active.any():
            break
        sol, *_ = np.linalg.lstsq(A[:, active], b, rcond=None)
        c = np.zeros(m)
        c[active] = sol
        new_active = np.abs(c) >= threshold
        c[~new_active] = 0.0
        if np.array_equal(new_active, active):
            break
        active = new_active
    fit = SparseFit(coefficients=c, lam=0.0)
    fit.empty_model = not active.any()
    return fit


def cross_validate_lambda(A, b, grid=None, k=5):
    """Pick lambda by k-fold cross-validation on chronological folds.

    Folds are contiguous blocks (never shuffled); the reported fit is
    refit on all rows at the best lambda. Ties break toward the larger
    (sparser) lambda.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64).ravel()
    n = A.shape[0]
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if n < k:
        raise DataError(f"need at least k={k} rows, have {n}")
    grid = list(DEFAULT_LAMBDA_GRID) if grid is None else list(grid)

    bounds = np.linspace(0, n, k + 1).astype(int)
    mean_errors = []
    for lam in grid:
        errs = []
        for f in range(k):
            lo, hi = bounds[f], bounds[f + 1]
            mask = np.zeros(n, dtype=bool)
            mask[lo:hi] = True
            fit = lasso_cd(A[~mask], b[~mask], lam)
            resid = b[mask] - A[mask] @ fit.coefficients
            errs.append(float(np.mean(resid**2)))
        mean_errors.append(float(np.mean(errs)))

    best = 0
    for i in range(1, len(grid)):
        if mean_errors[i] <= mean_errors[best]:
            best = i
    best_lambda = grid[best]
    final = lasso_cd(A, b, best_lambda)
    return CvReport(grid=grid, mean_errors=mean_errors, best_lambda=best_lambda, final_fit=final)


def assemble_pde(fit, library, lhs, mask_bit=0, coef_tol=0.0):
    """Combine active library terms into a PdeSpec right-hand side."""
    c = np.asarray(fit.coefficients, dtype=np.float64)
    if len(c) != len(library.exprs):
        raise ConfigError(
            f"fit has {len(c)} coefficients but library has {len(library.exprs)} columns"
        )
    rhs = None
    for coef, term in zip(c, library.exprs):
        if abs(coef) <= coef_tol:
            continue
        if isinstance(term, Constant) and term.value == 1.0:
            piece = Constant(float(coef))
            negative = coef < 0
            positive_piece = Constant(abs(float(coef)))
        else:
            piece = Binary("*", Constant(float(coef)), term)
            negative = coef < 0
            positive_piece = Binary("*", Constant(abs(float(coef))), term)
        if rhs is None:
            rhs = piece
        elif negative:
            rhs = Binary("-", rhs, positive_piece)
        else:
            rhs = Binary("+", rhs, positive_piece)
    if rhs is None:
        return PdeSpec(lhs=lhs, rhs=Constant(0.0), mask_bit=mask_bit, trivial=True)
    return PdeSpec(lhs=lhs, rhs=rhs, mask_bit=mask_bit)


def validate_pde(pde, data):
    """Score the PdeSpec against held-out data; fills ``fit_metrics``.

    ``data`` maps symbol names to columns and must include the lhs
    derivative column.
    """
    if pde.lhs_symbol not in data:
        from .expr import BindingError

        raise BindingError(f"data lacks lhs column {pde.lhs_symbol!r}")
    truth = np.asarray(data[pde.lhs_symbol], dtype=np.float64)
    pred = evaluate_batch(pde.rhs, data, n=len(truth))
    resid = truth - pred
    sst = float(np.sum((truth - truth.mean()) ** 2))
    ssr = float(np.sum(resid**2))
    metrics = {
        "mse": float(np.mean(resid**2)),
        "mae": float(np.mean(np.abs(resid))),
        "r2": 0.0 if sst == 0.0 else 1.0 - ssr / sst,
    }
    pde.fit_metrics.update(metrics)
    return metrics
