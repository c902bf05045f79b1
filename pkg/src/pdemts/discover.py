"""Constraint extraction from a trained surrogate network.

Pipeline per target: harvest input gradients at the most recent lag step,
keep candidate columns whose correlation with the target derivative clears
the threshold, fit a degree-3 polynomial to them, and keep the equation if
its validation R^2 passes the selection bar.
"""

import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import net
from .errors import ConfigError, DataError
from .expr import Constant, PdeSpec, format_pde_line, write_pde_file
from .featlib import build_poly_features
from .metrics import r_squared
from .sparse import assemble_pde, SparseFit, validate_pde


@dataclass
class HarvestedDerivatives:
    D: np.ndarray  # (n, p*d) input gradients after lag reduction
    labels: list  # dY<j>_dX<k>
    states: np.ndarray  # (n, d) input values at the prediction point
    state_labels: list

    def columns(self):
        cols = {lab: self.D[:, k] for k, lab in enumerate(self.labels)}
        cols.update({lab: self.states[:, k] for k, lab in enumerate(self.state_labels)})
        return cols


@dataclass
class DiscoveryConfig:
    corr_threshold: float = 0.5
    degree: int = 3
    select_r2: float = 0.8  # validation bar for adopting an equation
    gate_r2: float = 0.5  # surrogate quality gate on the test split
    reduction: str = "last"  # or "mean" over the lag axis
    dynamic_input: int = 1  # X index of the lhs derivatives
    max_rows: int | None = None  # cap harvested rows for speed


class SurrogateGateError(DataError):
    pass


def harvest(trained, windows, reduction="last", max_rows=None):
    """Input gradients of the surrogate reduced over the lag axis.

    ``last`` keeps the most recent step (the forecasting-relevant one);
    ``mean`` averages over the window.
    """
    X = windows.X if hasattr(windows, "X") else np.asarray(windows)
    if max_rows is not None:
        X = X[:max_rows]
    n = X.shape[0]
    p = trained.spec.output_dim
    T, d = trained.spec.input_shape
    labels = net.grad_input_labels(p, d)
    state_labels = [f"X{i}" for i in range(1, d + 1)]
    if n == 0:
        return HarvestedDerivatives(
            D=np.empty((0, p * d)), labels=labels,
            states=np.empty((0, d)), state_labels=state_labels,
        )
    D3 = net.grad_input(trained.spec, trained.params, X)
    if reduction == "last":
        D = D3[:, -1, :]
    elif reduction == "mean":
        D = D3.mean(axis=1)
    else:
        raise ConfigError(f"unknown lag reduction {reduction!r}")
    return HarvestedDerivatives(
        D=D, labels=labels, states=X[:, -1, :], state_labels=state_labels
    )


def correlation_filter(harvested, target_label, threshold=0.5):
    """Pearson-correlate every other derivative and state column against the
    target derivative; return (selected labels, correlation table)."""
    cols = harvested.columns()
    if target_label not in cols:
        raise ConfigError(f"unknown target column {target_label!r}")
    target = cols[target_label]
    if len(target) < 3:
        raise DataError("need at least 3 rows for the correlation filter")
    st = target.std()
    table = {}
    selected = []
    for lab, col in cols.items():
        if lab == target_label:
            continue
        sc = col.std()
        if sc == 0.0 or st == 0.0:
            warnings.warn(f"zero-variance column {lab!r} skipped in correlation filter")
            continue
        r = float(np.mean((col - col.mean()) * (target - target.mean())) / (sc * st))
        table[lab] = r
        if abs(r) > threshold:
            selected.append(lab)
    return selected, table


def fit_pde(train_cols, train_target, val_cols, val_target, lhs, degree=3):
    """Least-squares polynomial fit of the target derivative on the selected
    columns; falls back to a tiny ridge when the design is rank deficient."""
    labels = list(train_cols)
    if not labels:
        raise ConfigError("no columns selected for the constraint fit")
    A_tr = np.column_stack([train_cols[k] for k in labels])
    lib = build_poly_features(A_tr, labels, degree=degree)
    coef, _, rank, _ = np.linalg.lstsq(lib.columns, train_target, rcond=None)
    ridge = False
    if rank < lib.columns.shape[1]:
        A = lib.columns
        coef = np.linalg.solve(A.T @ A + 1e-8 * np.eye(A.shape[1]), A.T @ train_target)
        ridge = True
    pde = assemble_pde(SparseFit(coefficients=coef, lam=0.0), lib, lhs, coef_tol=1e-12)
    data = {k: np.asarray(v) for k, v in val_cols.items()}
    data[pde.lhs_symbol] = np.asarray(val_target)
    validate_pde(pde, data)
    if ridge:
        pde.fit_metrics["ridge_fallback"] = 1.0
    return pde


@dataclass
class DiscoveryReport:
    pdes: list = field(default_factory=list)  # one PdeSpec per target
    correlations: dict = field(default_factory=dict)  # lhs symbol -> {label: r}
    metrics: dict = field(default_factory=dict)  # lhs symbol -> fit metrics
    selected: list = field(default_factory=list)  # lhs symbols passing the bar
    gate: dict = field(default_factory=dict)  # per-target surrogate R^2

    def selected_pdes(self):
        return [p for p in self.pdes if p.lhs_symbol in self.selected]

    def persist(self, outdir):
        os.makedirs(outdir, exist_ok=True)
        write_pde_file(self.pdes, os.path.join(outdir, "pdes.txt"))
        with open(os.path.join(outdir, "correlations.csv"), "w") as fh:
            fh.write("target,column,r\n")
            for lhs, table in self.correlations.items():
                for lab, r in table.items():
                    fh.write(f"{lhs},{lab},{r:.6f}\n")
        with open(os.path.join(outdir, "metrics.csv"), "w") as fh:
            fh.write("variable,MSE,MAE,R2,selected\n")
            for pde in self.pdes:
                m = pde.fit_metrics
                fh.write(
                    f"{pde.lhs_symbol},{m.get('mse', float('nan')):.4f},"
                    f"{m.get('mae', float('nan')):.4f},{m.get('r2', float('nan')):.4f},"
                    f"{int(pde.lhs_symbol in self.selected)}\n"
                )


def run_discovery(trained, train_windows, val_windows, test_windows, config=DiscoveryConfig()):
    """Full extraction pass over every target for lhs d/dX<dynamic_input>.

    Refuses to harvest when the surrogate's per-target R^2 on the test
    split falls below the gate: derivatives of a bad fit mean nothing.
    """
    pred = trained.predict(test_windows.X)
    gate = {}
    degenerate = set()
    for j in range(test_windows.Y.shape[1]):
        truth = test_windows.Y[:, j]
        if np.sum((truth - truth.mean()) ** 2) == 0.0:
            degenerate.add(f"Y{j + 1}")  # constant target, R^2 undefined
        gate[f"Y{j + 1}"] = r_squared(truth, pred[:, j])
    failing = {k: v for k, v in gate.items() if v < config.gate_r2 and k not in degenerate}
    if failing:
        raise SurrogateGateError(
            f"surrogate below quality gate R^2 >= {config.gate_r2}: {failing}"
        )

    h_train = harvest(trained, train_windows, config.reduction, config.max_rows)
    h_val = harvest(trained, val_windows, config.reduction, config.max_rows)
    cols_train, cols_val = h_train.columns(), h_val.columns()

    report = DiscoveryReport(gate=gate)
    p = trained.spec.output_dim
    i = config.dynamic_input
    for j in range(1, p + 1):
        lhs_label = f"dY{j}_dX{i}"
        selected, table = correlation_filter(h_train, lhs_label, config.corr_threshold)
        report.correlations[lhs_label] = table
        if not selected:
            pde = PdeSpec(lhs=(j, i), rhs=Constant(0.0), trivial=True)
            validate_pde(pde, {lhs_label: cols_val[lhs_label]})
        else:
            pde = fit_pde(
                {k: cols_train[k] for k in selected}, cols_train[lhs_label],
                {k: cols_val[k] for k in selected}, cols_val[lhs_label],
                lhs=(j, i), degree=config.degree,
            )
        report.pdes.append(pde)
        report.metrics[lhs_label] = dict(pde.fit_metrics)
        if not pde.trivial and pde.fit_metrics.get("r2", -np.inf) >= config.select_r2:
            pde.mask_bit = 1
            report.selected.append(lhs_label)
    return report


def format_report(report):
    lines = ["surrogate gate: " + ", ".join(f"{k}={v:.4f}" for k, v in report.gate.items())]
    for pde in report.pdes:
        mark = "*" if pde.lhs_symbol in report.selected else " "
        lines.append(f"{mark} {format_pde_line(pde)}")
    return "\n".join(lines)
