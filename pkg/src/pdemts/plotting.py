"""Figure rendering for report directories.

Every report that writes predictions.csv also renders the same series as
line charts, one panel per target, plus a loss-curve figure when a
training history exists. Files land next to the CSVs; format is png or
svg (config key fig_format; "none" disables rendering).
"""

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def prediction_figure(index, truth, pred, labels, path, lower=None, upper=None):
    """Grid of per-target truth/prediction traces with optional bands."""
    truth = np.atleast_2d(np.asarray(truth).T).T
    pred = np.atleast_2d(np.asarray(pred).T).T
    p = truth.shape[1]
    ncols = 2 if p > 1 else 1
    nrows = math.ceil(p / ncols)
    fig, axes = plt.subplots(nrows, ncols, figsize=(5.5 * ncols, 2.4 * nrows), squeeze=False)
    for j in range(p):
        ax = axes[j // ncols][j % ncols]
        ax.plot(index, truth[:, j], lw=0.9, color="black", label="observed")
        ax.plot(index, pred[:, j], lw=0.9, color="tab:red", label="predicted")
        if lower is not None and upper is not None:
            ax.fill_between(index, lower[:, j], upper[:, j], color="tab:red", alpha=0.2,
                            linewidth=0, label="95% interval")
        ax.set_ylabel(labels[j])
        if j == 0:
            ax.legend(loc="upper right", fontsize=8)
    for j in range(p, nrows * ncols):
        axes[j // ncols][j % ncols].axis("off")
    axes[-1][0].set_xlabel("index")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def history_figure(history, path):
    """Training/validation loss curves; extra logged terms get their own
    traces."""
    if not history:
        return
    epochs = [row["epoch"] for row in history]
    fig, ax = plt.subplots(figsize=(6.0, 3.2))
    keys = [k for k in history[0] if k != "epoch"]
    for key in keys:
        ax.plot(epochs, [row.get(key, np.nan) for row in history], label=key, lw=1.0)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def lambda_path_figure(report, path):
    """Cross-validation error versus lambda on a log axis."""
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    ax.plot(report.grid, report.mean_errors, marker="o", lw=1.0)
    ax.axvline(report.best_lambda, color="tab:red", ls="--", lw=0.9)
    ax.set_xscale("log")
    ax.set_xlabel("lambda")
    ax.set_ylabel("mean validation MSE")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
