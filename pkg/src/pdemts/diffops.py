"""Finite-difference derivative estimates for discovery methods."""

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass
class DerivativeMatrix:
    """Columns of dY_j/dX_i estimates, labelled ``dY<j>_dX<i>``."""

    values: np.ndarray  # (n, |inputs| * |targets|)
    labels: list

    def __post_init__(self):
        if self.values.shape[1] != len(self.labels):
            raise DataError("label count does not match column count")
        if len(set(self.labels)) != len(self.labels):
            raise DataError("derivative labels must be unique")

    def column(self, label):
        return self.values[:, self.labels.index(label)]

    def as_columns(self):
        return {lab: self.values[:, k] for k, lab in enumerate(self.labels)}

    def write_csv(self, path):
        header = ",".join(self.labels)
        np.savetxt(path, self.values, delimiter=",", header=header, comments="")


def forward_difference(y, x):
    """out[k] = (y[k+1]-y[k]) / (x[k+1]-x[k]); the last entry repeats.

    Repeating the final slope keeps the output aligned row-for-row with y.
    """
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if y.shape != x.shape or y.ndim != 1:
        raise DataError(f"series shapes differ: {y.shape} vs {x.shape}")
    if len(y) < 2:
        raise DataError("need at least 2 samples to difference")
    dx = np.diff(x)
    zero = np.flatnonzero(dx == 0.0)
    if zero.size:
        raise DataError(f"zero step in x at index {int(zero[0])}; cannot divide")
    if not (np.all(dx > 0) or np.all(dx < 0)):
        raise DataError("x must be strictly monotone")
    out = np.empty_like(y)
    out[:-1] = np.diff(y) / dx
    out[-1] = out[-2]
    return out


def derivative_matrix(source, targets, dynamic_inputs, target_ids=None, input_ids=None):
    """Stack forward-difference columns for every (input, target) pair.

    ``source`` is either a mapping of column name -> series or a
    LagWindowSet (then the target series come from Y and the input series
    from the most recent lag step). Symbol ids default to 1-based
    positions, yielding labels ``dY<j>_dX<i>`` ordered input-major.
    """
    if not dynamic_inputs:
        raise DataError("empty dynamic input set")
    if not targets:
        raise DataError("empty target set")

    if hasattr(source, "X") and hasattr(source, "Y"):  # LagWindowSet
        t_series = {name: source.Y[:, source.target_names.index(name)] for name in targets}
        last = source.X[:, -1, :]
        x_series = {name: last[:, source.feature_names.index(name)] for name in dynamic_inputs}
    else:
        t_series = {name: np.asarray(source[name], dtype=np.float64) for name in targets}
        x_series = {name: np.asarray(source[name], dtype=np.float64) for name in dynamic_inputs}

    target_ids = target_ids or {name: j + 1 for j, name in enumerate(targets)}
    input_ids = input_ids or {name: i + 1 for i, name in enumerate(dynamic_inputs)}

    cols, labels = [], []
    for xin in dynamic_inputs:
        for tgt in targets:
            cols.append(forward_difference(t_series[tgt], x_series[xin]))
            labels.append(f"dY{target_ids[tgt]}_dX{input_ids[xin]}")
    return DerivativeMatrix(values=np.column_stack(cols), labels=labels)
