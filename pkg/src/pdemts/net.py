"""Layer zoo, forward evaluation and Adam training on the tape engine.

Sequence tensors are (batch, time, channels); flat tensors are
(batch, features). All arithmetic is float64 and seeded, so a fixed seed
reproduces a training history bitwise on one platform.
"""

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tape
from .errors import ConfigError, DataError


class TrainingError(RuntimeError):
    pass


# ------------------------------------------------------------------ specs

@dataclass(frozen=True)
class Dense:
    units: int
    activation: str = "linear"


@dataclass(frozen=True)
class Conv1D:
    filters: int
    kernel: int
    activation: str = "relu"


@dataclass(frozen=True)
class DilatedCausalConv1D:
    filters: int
    kernel: int
    dilation: int = 1
    activation: str = "relu"


@dataclass(frozen=True)
class MaxPool1D:
    width: int


@dataclass(frozen=True)
class Dropout:
    rate: float


@dataclass(frozen=True)
class Residual:
    block: tuple  # inner layer specs; output is block(x) + 1x1 projection of x


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class LastStep:
    """Keep only the most recent time step's features."""


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple  # (T, d) for sequences, (d,) for flat inputs
    output_dim: int
    layers: tuple

    def __post_init__(self):
        last = self.layers[-1]
        if not (isinstance(last, Dense) and last.activation == "linear"
                and last.units == self.output_dim):
            raise ConfigError("final layer must be a linear Dense matching output_dim")


_ACTS = {"linear": None, "relu": tape.relu, "tanh": tape.tanh}


def _activation(name):
    if name not in _ACTS:
        raise ConfigError(f"unknown activation {name!r}")
    return _ACTS[name]


def _out_shape(layer, shape):
    """Shape after `layer` applied to per-sample `shape`."""
    if isinstance(layer, Dense):
        if len(shape) != 1:
            raise ConfigError(f"Dense needs a flat input, got shape {shape}")
        return (layer.units,)
    if isinstance(layer, (Conv1D, DilatedCausalConv1D, MaxPool1D, LastStep)) and len(shape) != 2:
        raise ConfigError(f"{type(layer).__name__} needs a (time, channels) input, got {shape}")
    if isinstance(layer, Conv1D):
        T, c = shape
        if layer.kernel > T:
            raise ConfigError(f"kernel {layer.kernel} longer than sequence {T}")
        return (T - layer.kernel + 1, layer.filters)
    if isinstance(layer, DilatedCausalConv1D):
        T, c = shape
        return (T, layer.filters)
    if isinstance(layer, MaxPool1D):
        T, c = shape
        if layer.width < 1:
            raise ConfigError("pool width must be >= 1")
        return (math.ceil(T / layer.width), c)
    if isinstance(layer, Dropout):
        if not 0.0 <= layer.rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {layer.rate}")
        return shape
    if isinstance(layer, Residual):
        inner = shape
        for sub in layer.block:
            inner = _out_shape(sub, inner)
        if len(inner) != 2 or len(shape) != 2 or inner[0] != shape[0]:
            raise ConfigError("residual block must preserve sequence length")
        return inner
    if isinstance(layer, Flatten):
        return (int(np.prod(shape)),)
    if isinstance(layer, LastStep):
        return (shape[1],)
    raise ConfigError(f"unknown layer {layer!r}")


def _init_layer(layer, shape, rng):
    """Uniform fan-in init: He for relu, Xavier otherwise. Biases zero."""

    def uniform(fan_in, fan_out, size, act):
        if act == "relu":
            limit = math.sqrt(6.0 / fan_in)
        else:
            limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=size)

    if isinstance(layer, Dense):
        f = shape[0]
        return {
            "W": uniform(f, layer.units, (f, layer.units), layer.activation),
            "b": np.zeros(layer.units),
        }
    if isinstance(layer, (Conv1D, DilatedCausalConv1D)):
        T, c = shape
        fan_in = layer.kernel * c
        return {
            "W": uniform(fan_in, layer.filters, (layer.kernel, c, layer.filters),
                         layer.activation),
            "b": np.zeros(layer.filters),
        }
    if isinstance(layer, Residual):
        inner_shape = shape
        block = []
        for sub in layer.block:
            block.append(_init_layer(sub, inner_shape, rng))
            inner_shape = _out_shape(sub, inner_shape)
        c_in, c_out = shape[1], inner_shape[1]
        return {
            "block": block,
            "W_res": uniform(c_in, c_out, (c_in, c_out), "linear"),
            "b_res": np.zeros(c_out),
        }
    return {}


def init_params(spec, seed):
    rng = np.random.default_rng(seed)
    params, shape = [], tuple(spec.input_shape)
    for layer in spec.layers:
        params.append(_init_layer(layer, shape, rng))
        shape = _out_shape(layer, shape)
    if shape != (spec.output_dim,):
        raise ConfigError(f"network produces shape {shape}, expected ({spec.output_dim},)")
    return params


# ------------------------------------------------------------------ forward

def _conv_taps(x, Wn, bn, kernel, stride, T_out, activation):
    """Shared tap loop: out[t] = sum_i x[:, t + i*stride, :] @ W[i] + b."""
    n = x.value.shape[0]
    c = x.value.shape[2]
    acc = None
    for i in range(kernel):
        sl = tape.take(x, (slice(None), slice(i * stride, i * stride + T_out), slice(None)))
        flat = tape.reshape(sl, (n * T_out, c))
        term = tape.matmul(flat, Wn[i])
        acc = term if acc is None else tape.add(acc, term)
    out = tape.reshape(acc, (n, T_out, -1))
    out = tape.add(out, bn)
    act = _activation(activation)
    return act(out) if act else out


def _apply_layer(layer, p, x, training, rng):
    if isinstance(layer, Dense):
        out = tape.add(tape.matmul(x, p["W"]), p["b"])
        act = _activation(layer.activation)
        return act(out) if act else out
    if isinstance(layer, Conv1D):
        T = x.value.shape[1]
        T_out = T - layer.kernel + 1
        return _conv_taps(x, p["W"], p["b"], layer.kernel, 1, T_out, layer.activation)
    if isinstance(layer, DilatedCausalConv1D):
        T = x.value.shape[1]
        padded = tape.pad_left(x, (layer.kernel - 1) * layer.dilation, axis=1)
        return _conv_taps(padded, p["W"], p["b"], layer.kernel, layer.dilation, T,
                          layer.activation)
    if isinstance(layer, MaxPool1D):
        n, T, c = x.value.shape
        w = layer.width
        n_out = math.ceil(T / w)
        pad = n_out * w - T
        v = x.value
        if pad:
            v = np.concatenate([v, np.full((n, pad, c), -np.inf)], axis=1)
        arg = v.reshape(n, n_out, w, c).argmax(axis=2)
        idx = arg + (np.arange(n_out) * w)[None, :, None]
        # windows never overlap, so scatter targets are unique
        return tape.gather_along_axis(x, np.minimum(idx, T - 1), axis=1)
    if isinstance(layer, Dropout):
        if not training or layer.rate == 0.0:
            return x
        keep = 1.0 - layer.rate
        mask = (rng.random(x.value.shape) < keep).astype(np.float64) / keep
        return tape.mul(x, tape.Node(mask))
    if isinstance(layer, Residual):
        inner = x
        for sub, sp in zip(layer.block, p["block"]):
            inner = _apply_layer(sub, sp, inner, training, rng)
        n, T, c = x.value.shape
        flat = tape.reshape(x, (n * T, c))
        proj = tape.reshape(tape.matmul(flat, p["W_res"]), (n, T, -1))
        proj = tape.add(proj, p["b_res"])
        if inner.value.shape != proj.value.shape:
            raise DataError(
                f"residual paths disagree: {inner.value.shape} vs {proj.value.shape}"
            )
        return tape.add(inner, proj)
    if isinstance(layer, Flatten):
        n = x.value.shape[0]
        return tape.reshape(x, (n, -1))
    if isinstance(layer, LastStep):
        return tape.take(x, (slice(None), -1, slice(None)))
    raise ConfigError(f"unknown layer {layer!r}")


def forward(spec, params, X, training=False, rng=None):
    """Run the network; returns a Node of shape (batch, output_dim)."""
    x = tape.as_node(X)
    expect = (x.value.shape[0],) + tuple(spec.input_shape)
    if x.value.shape != expect:
        raise DataError(f"input shape {x.value.shape} does not match {expect}")
    if training and rng is None:
        rng = np.random.default_rng(0)
    for layer, p in zip(spec.layers, params):
        pn = _params_as_nodes(p)
        x = _apply_layer(layer, pn, x, training, rng)
    return x


def _params_as_nodes(p):
    out = {}
    for k, v in p.items():
        if k == "block":
            out[k] = [_params_as_nodes(sub) for sub in v]
        else:
            out[k] = tape.as_node(v) if not isinstance(v, tape.Node) else v
    return out


def forward_nodes(spec, param_nodes, X, training=False, rng=None):
    """forward() for callers that already hold parameter Nodes (so the
    same graph can be differentiated with respect to them)."""
    x = tape.as_node(X)
    for layer, p in zip(spec.layers, param_nodes):
        x = _apply_layer(layer, p, x, training, rng)
    return x


def params_to_nodes(params):
    return [_params_as_nodes(p) for p in params]


def iter_param_nodes(param_nodes):
    for p in param_nodes:
        yield from _iter_dict(p)


def _iter_dict(p):
    for k in p:
        if k == "block":
            for sub in p[k]:
                yield from _iter_dict(sub)
        else:
            yield p[k]


def grad_input(spec, params, X):
    """Derivatives of each output with respect to each input entry.

    Returns D with shape (n, T, p*d) where column j*d + k holds
    dYhat[:, j] / dX[:, t, k]; one backward pass per output.
    """
    x = tape.as_node(np.asarray(X, dtype=np.float64))
    yhat = forward(spec, params, x)
    n, T, d = x.value.shape
    p = yhat.value.shape[1]
    D = np.empty((n, T, p * d))
    for j in range(p):
        s = tape.sum_(tape.take(yhat, (slice(None), j)))
        (g,) = tape.backward(s, [x])
        D[:, :, j * d:(j + 1) * d] = g.value
    return D


def grad_input_labels(p, d, target_ids=None, input_ids=None):
    target_ids = target_ids or list(range(1, p + 1))
    input_ids = input_ids or list(range(1, d + 1))
    return [f"dY{j}_dX{i}" for j in target_ids for i in input_ids]


# ------------------------------------------------------------------ Adam

@dataclass
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params):
    def zeros_like(p):
        return {
            k: ([zeros_like(s) for s in v] if k == "block" else np.zeros_like(v))
            for k, v in p.items()
        }

    return {"m": [zeros_like(p) for p in params], "v": [zeros_like(p) for p in params], "t": 0}


def adam_step(params, grads, state, hyper):
    """One bias-corrected Adam update; returns (new_params, state)."""
    state["t"] += 1
    t = state["t"]
    c1 = 1.0 - hyper.beta1**t
    c2 = 1.0 - hyper.beta2**t

    def upd(p, g, m, v):
        out = {}
        for k in p:
            if k == "block":
                out[k] = [upd(ps, gs, ms, vs) for ps, gs, ms, vs in zip(p[k], g[k], m[k], v[k])]
                continue
            m[k] = hyper.beta1 * m[k] + (1 - hyper.beta1) * g[k]
            v[k] = hyper.beta2 * v[k] + (1 - hyper.beta2) * g[k] ** 2
            out[k] = p[k] - hyper.lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + hyper.eps)
        return out

    new = [upd(p, g, m, v) for p, g, m, v in zip(params, grads, state["m"], state["v"])]
    return new, state


def _grads_structured(loss, param_nodes):
    flat = list(iter_param_nodes(param_nodes))
    gs = tape.backward(loss, flat)
    it = iter(gs)

    def rebuild(p):
        return {
            k: ([rebuild(s) for s in v] if k == "block" else next(it).value)
            for k, v in p.items()
        }

    return [rebuild(p) for p in param_nodes]


# ------------------------------------------------------------------ training

@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 50
    batch_size: int = 64
    patience: int | None = None  # early stopping on validation loss when set
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be >= 1")


@dataclass
class TrainedNet:
    spec: NetworkSpec
    params: list
    history: list = field(default_factory=list)
    config: TrainConfig | None = None

    def predict(self, X):
        return forward(self.spec, self.params, X).value


def sse_loss(pred, truth):
    """Summed squared error over outputs, averaged over the batch."""
    diff = tape.sub(pred, truth)
    n = pred.value.shape[0]
    return tape.div(tape.sum_(tape.mul(diff, diff)), float(n))


def _copy_params(params):
    return [
        {k: ([{kk: vv.copy() for kk, vv in s.items()} for s in v] if k == "block" else v.copy())
         for k, v in p.items()}
        for p in params
    ]


def train(spec, train_set, val_set, config, loss_fn=sse_loss, params=None,
          extra_terms=None, val_loss_fn=None):
    """Mini-batch Adam with optional early stopping on validation loss.

    ``extra_terms(spec, param_nodes, xb, yb) -> (node | None, logs)`` lets a
    caller add differentiable penalty terms per batch (used by the
    physics-constrained trainer); logged values are averaged per epoch.
    """
    Xtr, Ytr = train_set
    Xva, Yva = val_set
    Xtr = np.asarray(Xtr, dtype=np.float64)
    Ytr = np.asarray(Ytr, dtype=np.float64)
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = init_params(spec, config.seed)
    state = adam_init(params)
    hyper = AdamHyper(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)

    history = []
    best_val = np.inf
    best_params = _copy_params(params)
    strikes = 0
    n = Xtr.shape[0]

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_logs = {}
        seen = 0
        run_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = Xtr[idx], Ytr[idx]
            pnodes = params_to_nodes(params)
            pred = forward_nodes(spec, pnodes, xb, training=True, rng=rng)
            loss = loss_fn(pred, tape.as_node(yb))
            logs = {}
            if extra_terms is not None:
                extra, logs = extra_terms(spec, pnodes, xb, yb)
                if extra is not None:
                    loss = tape.add(loss, extra)
            lval = float(loss.value)
            if not np.isfinite(lval):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch starting {start}"
                )
            run_loss += lval * len(idx)
            for k, v in logs.items():
                epoch_logs[k] = epoch_logs.get(k, 0.0) + v * len(idx)
            seen += len(idx)
            grads = _grads_structured(loss, pnodes)
            params, state = adam_step(params, grads, state, hyper)

        if val_loss_fn is not None:
            val_loss = float(val_loss_fn(spec, params, Xva, Yva))
        else:
            val_pred = forward(spec, params, Xva)
            val_loss = float(loss_fn(val_pred, tape.as_node(np.asarray(Yva))).value)
        row = {"epoch": epoch, "train_loss": run_loss / max(seen, 1), "val_loss": val_loss}
        for k, v in epoch_logs.items():
            row[k] = v / max(seen, 1)
        history.append(row)

        if val_loss < best_val:
            best_val = val_loss
            best_params = _copy_params(params)
            strikes = 0
        elif config.patience is not None:
            strikes += 1
            if strikes >= config.patience:
                break

    final = best_params if config.patience is not None else params
    return TrainedNet(spec=spec, params=final, history=history, config=config)


# ------------------------------------------------------------------ persistence

def write_history_csv(history, path):
    if not history:
        with open(path, "w") as fh:
            fh.write("epoch,train_loss,val_loss\n")
        return
    keys = ["epoch", "train_loss", "val_loss"]
    keys += [k for k in history[0] if k not in keys]
    with open(path, "w") as fh:
        fh.write(",".join(keys) + "\n")
        for row in history:
            fh.write(",".join(repr(row.get(k, "")) for k in keys) + "\n")


def spec_to_json(spec):
    def enc(layer):
        d = asdict(layer)
        if isinstance(layer, Residual):
            d["block"] = [enc(s) for s in layer.block]
        d["kind"] = type(layer).__name__
        return d

    return json.dumps(
        {
            "input_shape": list(spec.input_shape),
            "output_dim": spec.output_dim,
            "layers": [enc(l) for l in spec.layers],
        }
    )


_LAYER_KINDS = {
    c.__name__: c
    for c in (Dense, Conv1D, DilatedCausalConv1D, MaxPool1D, Dropout, Residual, Flatten, LastStep)
}


def spec_from_json(text):
    def dec(d):
        kind = _LAYER_KINDS[d.pop("kind")]
        if kind is Residual:
            d["block"] = tuple(dec(s) for s in d["block"])
        return kind(**d)

    raw = json.loads(text)
    return NetworkSpec(
        input_shape=tuple(raw["input_shape"]),
        output_dim=raw["output_dim"],
        layers=tuple(dec(l) for l in raw["layers"]),
    )


def save_checkpoint(trained, path):
    arrays = {"__format__": np.array(["pdemts-checkpoint-v1"])}
    arrays["__spec__"] = np.array([spec_to_json(trained.spec)])

    def put(prefix, p):
        for k, v in p.items():
            if k == "block":
                for i, s in enumerate(v):
                    put(f"{prefix}block{i}/", s)
            else:
                arrays[f"{prefix}{k}"] = v

    for i, p in enumerate(trained.params):
        put(f"L{i}/", p)
    np.savez(path, **arrays)


def load_checkpoint(path):
    data = np.load(path, allow_pickle=False)
    if str(data["__format__"][0]) != "pdemts-checkpoint-v1":
        raise ConfigError("unrecognized checkpoint format")
    spec = spec_from_json(str(data["__spec__"][0]))

    def grab(layer, prefix):
        if isinstance(layer, Residual):
            out = {"block": [grab(s, f"{prefix}block{i}/") for i, s in enumerate(layer.block)]}
            out["W_res"] = data[f"{prefix}W_res"]
            out["b_res"] = data[f"{prefix}b_res"]
            return out
        keys = [k for k in data.files if k.startswith(prefix) and "/" not in k[len(prefix):]]
        return {k[len(prefix):]: data[k] for k in keys}

    params = [grab(layer, f"L{i}/") for i, layer in enumerate(spec.layers)]
    return TrainedNet(spec=spec, params=params)
