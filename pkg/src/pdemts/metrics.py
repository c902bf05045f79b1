"""Per-target evaluation metrics and their table rendering.

R^2 = 1 - SSR/SST with SST taken about the evaluation split's own mean;
it goes negative when the model does worse than that mean. A zero SST
(constant truth) reports R^2 = 0 with a degenerate flag.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


def r_squared(truth, pred):
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    sst = float(np.sum((truth - truth.mean()) ** 2))
    if sst == 0.0:
        return 0.0
    ssr = float(np.sum((truth - pred) ** 2))
    return 1.0 - ssr / sst


@dataclass
class Metrics:
    variables: list
    mse: np.ndarray
    mae: np.ndarray
    r2: np.ndarray
    n: int
    degenerate: list = field(default_factory=list)  # variables with zero SST
    phase: str = ""
    method: str = ""

    def row(self, var):
        k = self.variables.index(var)
        return {"mse": self.mse[k], "mae": self.mae[k], "r2": self.r2[k]}


def compute_metrics(truth, pred, variables=None, phase="", method=""):
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64).T).T
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64).T).T
    if truth.shape != pred.shape:
        raise DataError(f"shape mismatch: truth {truth.shape} vs prediction {pred.shape}")
    if truth.shape[0] < 2:
        raise DataError("need at least 2 rows to compute metrics")
    p = truth.shape[1]
    variables = variables or [f"Y{j + 1}" for j in range(p)]
    mse = np.mean((truth - pred) ** 2, axis=0)
    mae = np.mean(np.abs(truth - pred), axis=0)
    r2 = np.empty(p)
    degenerate = []
    for j in range(p):
        sst = float(np.sum((truth[:, j] - truth[:, j].mean()) ** 2))
        if sst == 0.0:
            r2[j] = 0.0
            degenerate.append(variables[j])
        else:
            r2[j] = 1.0 - float(np.sum((truth[:, j] - pred[:, j]) ** 2)) / sst
    return Metrics(
        variables=list(variables), mse=mse, mae=mae, r2=r2, n=truth.shape[0],
        degenerate=degenerate, phase=phase, method=method,
    )


def format_value(v):
    """Four-decimal table style."""
    return f"{v:.4f}"


def write_metrics_csv(metrics, path, append=False):
    mode = "a" if append else "w"
    with open(path, mode) as fh:
        if not append:
            fh.write("phase,method,variable,MSE,MAE,R2\n")
        for k, var in enumerate(metrics.variables):
            fh.write(
                f"{metrics.phase},{metrics.method},{var},"
                f"{format_value(metrics.mse[k])},{format_value(metrics.mae[k])},"
                f"{format_value(metrics.r2[k])}\n"
            )


def read_metrics_csv(path):
    rows = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) != len(header):
                continue
            rows.append(dict(zip(header, parts)))
    return rows
