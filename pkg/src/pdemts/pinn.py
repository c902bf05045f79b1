"""Training with a combined data + physics objective.

The physics term penalizes squared residuals of the discovered constraint
equations, with the derivative terms taken from the network itself (input
gradients recorded on the tape, so the penalty is differentiable with
respect to the weights). An empty or fully masked constraint list
reproduces the plain network trainer exactly.
"""

import re
from dataclasses import dataclass, field

import numpy as np

from . import net, tape
from .errors import ConfigError
from .expr import evaluate_on_tape, free_symbols

_DERIV_RE = re.compile(r"^dY(\d+)_dX(\d+)$")
_STATE_RE = re.compile(r"^X(\d+)$")


@dataclass
class PinnConfig:
    spec: net.NetworkSpec
    train: net.TrainConfig
    pdes: list = field(default_factory=list)
    physics_weight: float = 1.0


def _active(pdes):
    return [p for p in pdes if p.mask_bit == 1]


def _needed_outputs(pdes, p_dim):
    """Output indices whose input gradients any constraint references."""
    needed = set()
    for pde in pdes:
        needed.add(pde.lhs[0])
        for sym in free_symbols(pde.rhs):
            m = _DERIV_RE.match(sym)
            if m:
                needed.add(int(m.group(1)))
    bad = [j for j in needed if not 1 <= j <= p_dim]
    if bad:
        raise ConfigError(f"constraint references output Y{bad[0]} outside 1..{p_dim}")
    return sorted(needed)


def _bindings_for_batch(spec, param_nodes, xb, pdes):
    """Map constraint symbols to tape nodes for one batch.

    Derivative symbols resolve to d(output)/d(input at the most recent lag
    step); state symbols to the batch's most recent input values.
    """
    x = tape.as_node(np.asarray(xb, dtype=np.float64))
    yhat = net.forward_nodes(spec, param_nodes, x)
    p_dim = yhat.value.shape[1]
    d = x.value.shape[2]

    grads = {}
    for j in _needed_outputs(pdes, p_dim):
        s = tape.sum_(tape.take(yhat, (slice(None), j - 1)))
        (g,) = tape.backward(s, [x])
        grads[j] = tape.take(g, (slice(None), -1, slice(None)))  # (n, d)

    bindings = {}
    for pde in pdes:
        for sym in free_symbols(pde.rhs) | {pde.lhs_symbol}:
            if sym in bindings:
                continue
            m = _DERIV_RE.match(sym)
            if m:
                j, i = int(m.group(1)), int(m.group(2))
                if not 1 <= i <= d:
                    raise ConfigError(f"symbol {sym} references input X{i} outside 1..{d}")
                bindings[sym] = tape.take(grads[j], (slice(None), i - 1))
                continue
            m = _STATE_RE.match(sym)
            if m:
                i = int(m.group(1))
                if not 1 <= i <= d:
                    raise ConfigError(f"symbol {sym} references input X{i} outside 1..{d}")
                bindings[sym] = tape.Node(x.value[:, -1, i - 1])
                continue
            raise ConfigError(f"cannot resolve constraint symbol {sym!r}")
    return bindings


def physics_loss(spec, param_nodes, xb, pdes):
    """Mean (per sample) summed squared constraint residuals as a tape node.

    Returns None when no constraint carries mask bit 1, so the caller can
    skip the physics branch entirely.
    """
    active = _active(pdes)
    if not active:
        return None
    bindings = _bindings_for_batch(spec, param_nodes, xb, active)
    n = np.asarray(xb).shape[0]
    total = None
    for pde in active:
        lhs = bindings[pde.lhs_symbol]
        rhs = evaluate_on_tape(pde.rhs, bindings)
        resid = tape.sub(lhs, rhs)
        term = tape.sum_(tape.mul(resid, resid))
        total = term if total is None else tape.add(total, term)
    return tape.div(total, float(n))


def total_loss(spec, params, xb, yb, pdes, physics_weight=1.0):
    """Data loss plus physics loss (plain sum; weight defaults to 1)."""
    param_nodes = net.params_to_nodes(params)
    pred = net.forward_nodes(spec, param_nodes, xb)
    data = net.sse_loss(pred, tape.as_node(np.asarray(yb, dtype=np.float64)))
    phys = physics_loss(spec, param_nodes, xb, pdes)
    if phys is None:
        return data
    if physics_weight != 1.0:
        phys = tape.mul(phys, physics_weight)
    return tape.add(data, phys)


def physics_loss_value(trained, X, pdes):
    """Physics loss of a trained net on a dataset, as a float (0.0 when no
    active constraints)."""
    phys = physics_loss(trained.spec, net.params_to_nodes(trained.params), X, pdes)
    return 0.0 if phys is None else float(phys.value)


def train_pinn(config, train_set, val_set):
    """Adam on data + physics loss; history rows carry both components.

    With no active constraints this runs the identical code path as the
    plain trainer (same RNG draws, same arithmetic), so histories match
    bitwise for the same seed.
    """
    pdes = _active(config.pdes)
    weight = config.physics_weight

    extra = None
    val_fn = None
    if pdes:
        def extra(spec, param_nodes, xb, yb):
            phys = physics_loss(spec, param_nodes, xb, pdes)
            if weight != 1.0:
                phys = tape.mul(phys, weight)
            return phys, {"physics_loss": float(phys.value)}

        def val_fn(spec, params, Xva, Yva):
            return float(total_loss(spec, params, Xva, Yva, pdes, weight).value)

    trained = net.train(
        config.spec, train_set, val_set, config.train,
        extra_terms=extra, val_loss_fn=val_fn,
    )
    for row in trained.history:
        phys = row.pop("physics_loss", 0.0)
        row["physics_loss"] = phys
        row["data_loss"] = row["train_loss"] - phys
    return trained
