"""Concrete log-density builders: sparse-discovery B-LASSO, (physics-
informed) Bayesian linear regression, and (physics-informed) Bayesian
dense networks, plus posterior-predictive evaluation.

All models are expressed over an unconstrained flat vector; scale
parameters ride on the log axis with their Jacobians included.
"""

import re
from dataclasses import dataclass, field, replace

import numpy as np

from .. import tape
from ..errors import ConfigError, DataError
from ..expr import evaluate_batch, evaluate_on_tape, free_symbols
from ..sparse import SparseFit, assemble_pde
from .core import (
    LogDensityModel,
    PosteriorSamples,
    gamma_logpdf,
    half_cauchy_logpdf,
    half_normal_logpdf,
    hdi,
    laplace_logpdf,
    normal_logpdf,
    posterior_mean,
)

_DERIV_RE = re.compile(r"^dY(\d+)_dX(\d+)$")
_STATE_RE = re.compile(r"^X(\d+)$")


# ------------------------------------------------------------------ B-LASSO

@dataclass
class BlassoSpec:
    design: np.ndarray  # (n, m) evaluated library
    y: np.ndarray  # (n,)
    column_names: list = None
    mu_beta: float = 0.0
    alpha_lam: float = 1.0
    beta_lam: float = 1.0
    mu_sigma: float = 0.0
    sigma_sigma: float = 1.0

    def __post_init__(self):
        self.design = np.asarray(self.design, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        if self.design.ndim != 2 or self.design.shape[0] != self.y.shape[0]:
            raise ConfigError(
                f"design {self.design.shape} does not match targets {self.y.shape}"
            )
        if not np.all(np.isfinite(self.design)):
            raise DataError("design matrix contains non-finite values")
        if self.alpha_lam <= 0 or self.beta_lam <= 0:
            raise ConfigError("Gamma hyperparameters must be positive")
        if self.column_names is None:
            self.column_names = [f"c{k}" for k in range(self.design.shape[1])]

    def hyper_dict(self):
        return {
            "mu_beta": self.mu_beta, "alpha_lam": self.alpha_lam,
            "beta_lam": self.beta_lam, "mu_sigma": self.mu_sigma,
            "sigma_sigma": self.sigma_sigma,
        }


def build_blasso(spec):
    """Laplace-prior regression with per-coefficient Gamma scales and a
    Half-Cauchy noise prior. Parameter layout: [beta, log lam, log sigma]."""
    m = spec.design.shape[1]
    design = spec.design
    y = spec.y
    dim = 2 * m + 1

    def logp_fn(theta):
        beta = theta[:m]
        lam = tape.exp(theta[m:2 * m])
        z_sig = theta[2 * m]
        sigma = spec.mu_sigma + tape.exp(z_sig)
        mean = tape.take(tape.matmul(tape.Node(design), tape.reshape(beta, (m, 1))),
                         (slice(None), 0))
        lp = normal_logpdf(y, mean, sigma)
        lp = lp + laplace_logpdf(beta, spec.mu_beta, lam)
        lp = lp + gamma_logpdf(lam, spec.alpha_lam, spec.beta_lam)
        lp = lp + half_cauchy_logpdf(sigma, spec.mu_sigma, spec.sigma_sigma)
        # Jacobians of the log transforms
        lp = lp + tape.sum_(theta[m:2 * m]) + z_sig
        return lp

    labels = [f"beta[{nm}]" for nm in spec.column_names]
    labels += [f"lam[{nm}]" for nm in spec.column_names]
    labels += ["sigma"]
    return LogDensityModel(
        dim=dim, logp_fn=logp_fn, labels=labels,
        log_coords=tuple(range(m, 2 * m + 1)),
        log_offsets={2 * m: spec.mu_sigma},
    )


def select_terms_blasso(samples, library, lhs, prob=0.95, mask_bit=0):
    """Keep terms whose HDI excludes zero; coefficients are posterior means."""
    if isinstance(samples, PosteriorSamples):
        flat = samples.flat()
        labels = samples.labels
    else:
        flat = np.asarray(samples)
        labels = [f"beta[c{k}]" for k in range(flat.shape[1])]
    if flat.shape[0] == 0:
        raise DataError("no posterior draws to select from")
    beta_cols = [k for k, lab in enumerate(labels) if lab.startswith("beta[")]
    if len(beta_cols) != len(library.exprs):
        raise ConfigError(
            f"{len(beta_cols)} coefficient columns vs {len(library.exprs)} library terms"
        )
    coefs = np.zeros(len(beta_cols))
    for out_idx, col in enumerate(beta_cols):
        draws = flat[:, col]
        lo, hi = hdi(draws, prob)
        if lo > 0.0 or hi < 0.0:
            coefs[out_idx] = draws.mean()
    return assemble_pde(SparseFit(coefficients=coefs, lam=0.0), library, lhs,
                        mask_bit=mask_bit)


# ------------------------------------------------------------------ (PI-)BLR

@dataclass
class BlrSpec:
    X: np.ndarray  # (n, d)
    Y: np.ndarray  # (n, p)
    alpha_lam: float = 2.0
    beta_lam: float = 2.0
    sigma_eps: float = 1.0
    mu_sigma: float = 0.0
    sigma_sigma: float = 1.0
    pdes: list = field(default_factory=list)
    sigma_pde: float = 0.1

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.Y.ndim == 1:
            self.Y = self.Y[:, None]
        if self.X.shape[0] != self.Y.shape[0]:
            raise ConfigError(f"X has {self.X.shape[0]} rows, Y has {self.Y.shape[0]}")
        if self.sigma_pde <= 0:
            raise ConfigError("sigma_pde must be positive")

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def p(self):
        return self.Y.shape[1]

    def hyper_dict(self):
        return {
            "alpha_lam": self.alpha_lam, "beta_lam": self.beta_lam,
            "sigma_eps": self.sigma_eps, "mu_sigma": self.mu_sigma,
            "sigma_sigma": self.sigma_sigma, "sigma_pde": self.sigma_pde,
        }


def _linear_bindings_np(beta, pdes, batch_X):
    d = beta.shape[1]
    bindings = {}
    for pde in pdes:
        for sym in free_symbols(pde.rhs) | {pde.lhs_symbol}:
            if sym in bindings:
                continue
            m = _DERIV_RE.match(sym)
            if m:
                j, i = int(m.group(1)), int(m.group(2))
                bindings[sym] = np.full(batch_X.shape[0], beta[j - 1, i - 1])
                continue
            m = _STATE_RE.match(sym)
            if m:
                i = int(m.group(1))
                if not 1 <= i <= d:
                    raise ConfigError(f"state symbol {sym} outside 1..{d}")
                bindings[sym] = batch_X[:, i - 1]
                continue
            raise ConfigError(f"cannot resolve constraint symbol {sym!r}")
    return bindings


def pde_residual_linear(beta, pdes, batch_X):
    """Constraint residuals of a linear model, one per constraint.

    For a linear map the derivative dY_j/dX_i is the coefficient
    beta[j-1, i-1] itself; state symbols bind to batch columns and the
    per-sample residual is averaged over the batch.
    """
    beta = np.asarray(beta, dtype=np.float64)
    batch_X = np.atleast_2d(np.asarray(batch_X, dtype=np.float64))
    bindings = _linear_bindings_np(beta, pdes, batch_X)
    out = []
    for pde in pdes:
        lhs = bindings[pde.lhs_symbol]
        rhs = evaluate_batch(pde.rhs, bindings, n=batch_X.shape[0])
        out.append(float(np.mean(lhs - rhs)))
    return np.asarray(out)


def build_blr(spec):
    """Non-centered Bayesian linear regression: beta = lam * eps elementwise.

    Parameter layout: [eps (p*d), log lam (p*d), log sigma]; the PDE
    potential is attached separately by add_pde_potential.
    """
    d, p = spec.d, spec.p
    k = p * d
    X, Y = spec.X, spec.Y
    n = X.shape[0]

    def beta_node(theta):
        eps = theta[:k]
        lam = tape.exp(theta[k:2 * k])
        return tape.reshape(tape.mul(lam, eps), (p, d))

    def logp_fn(theta):
        eps = theta[:k]
        lam = tape.exp(theta[k:2 * k])
        z_sig = theta[2 * k]
        sigma = spec.mu_sigma + tape.exp(z_sig)
        B = tape.reshape(tape.mul(lam, eps), (p, d))
        mean = tape.matmul(tape.Node(X), tape.transpose(B))  # (n, p)
        lp = normal_logpdf(Y, mean, sigma)
        lp = lp + normal_logpdf(eps, 0.0, spec.sigma_eps)
        lp = lp + gamma_logpdf(lam, spec.alpha_lam, spec.beta_lam)
        lp = lp + half_cauchy_logpdf(sigma, spec.mu_sigma, spec.sigma_sigma)
        lp = lp + tape.sum_(theta[k:2 * k]) + z_sig
        return lp

    def residual_builder(theta, pdes):
        B = beta_node(theta)
        bindings = {}
        for pde in pdes:
            for sym in free_symbols(pde.rhs) | {pde.lhs_symbol}:
                if sym in bindings:
                    continue
                m = _DERIV_RE.match(sym)
                if m:
                    j, i = int(m.group(1)), int(m.group(2))
                    if not (1 <= j <= p and 1 <= i <= d):
                        raise ConfigError(f"constraint symbol {sym} outside the model")
                    bindings[sym] = tape.take(B, (j - 1, i - 1))
                    continue
                m = _STATE_RE.match(sym)
                if m:
                    i = int(m.group(1))
                    if not 1 <= i <= d:
                        raise ConfigError(f"state symbol {sym} outside 1..{d}")
                    bindings[sym] = tape.Node(X[:, i - 1])
                    continue
                raise ConfigError(f"cannot resolve constraint symbol {sym!r}")
        residuals = []
        for pde in pdes:
            lhs = bindings[pde.lhs_symbol]
            rhs = evaluate_on_tape(pde.rhs, bindings)
            diff = tape.sub(lhs, rhs)
            if diff.value.ndim:
                diff = tape.mean(diff)
            residuals.append(diff)
        return residuals

    def predict_fn(theta, X_new):
        theta = np.asarray(theta, dtype=np.float64)
        eps = theta[:k]
        lam = np.exp(theta[k:2 * k])
        B = (lam * eps).reshape(p, d)
        return np.atleast_2d(X_new) @ B.T

    labels = [f"eps[Y{j + 1},X{i + 1}]" for j in range(p) for i in range(d)]
    labels += [f"lam[Y{j + 1},X{i + 1}]" for j in range(p) for i in range(d)]
    labels += ["sigma"]
    model = LogDensityModel(
        dim=2 * k + 1, logp_fn=logp_fn, labels=labels,
        log_coords=tuple(range(k, 2 * k + 1)),
        log_offsets={2 * k: spec.mu_sigma},
        residual_builder=residual_builder,
    )
    model.predict_fn = predict_fn
    return model


def blr_beta_draws(samples, spec):
    """Effective coefficient matrices lam*eps per draw: (draws, p, d)."""
    flat = samples.flat()
    k = spec.p * spec.d
    eps = flat[:, :k]
    lam = np.exp(flat[:, k:2 * k])
    return (lam * eps).reshape(-1, spec.p, spec.d)


def add_pde_potential(model, pdes, sigma_pde):
    """Multiply a zero-mean Normal potential on constraint residuals into
    the posterior: logp' = logp - sum(residual^2) / (2 sigma_pde^2).

    With no constraints the model is returned unchanged (the exact same
    object), so the physics-free special case is bit-identical.
    """
    if not pdes:
        return model
    if sigma_pde <= 0:
        raise ConfigError("sigma_pde must be positive")
    if model.residual_builder is None:
        raise ConfigError("model has no residual builder; cannot attach constraints")
    base = model.logp_fn
    scale = 1.0 / (2.0 * sigma_pde**2)

    def logp_fn(theta):
        lp = base(theta)
        for r in model.residual_builder(theta, pdes):
            lp = tape.sub(lp, tape.mul(scale, tape.mul(r, r)))
        return lp

    out = replace(model, logp_fn=logp_fn)
    out.predict_fn = getattr(model, "predict_fn", None)
    return out


def map_residual_norm(model, pdes, theta):
    """Euclidean norm of the constraint residuals at a parameter point."""
    if model.residual_builder is None or not pdes:
        return 0.0
    node = tape.as_node(np.asarray(theta, dtype=np.float64))
    vals = [float(r.value) for r in model.residual_builder(node, pdes)]
    return float(np.linalg.norm(vals))


# ------------------------------------------------------------------ B-PINN

@dataclass
class BpinnSpec:
    X: np.ndarray  # (n, T, d) windows or (n, f) flat
    Y: np.ndarray  # (n, p)
    hidden: tuple = (10, 10)
    c: float = 0.01
    sigma_w: float = 1.0  # prior std of W (variance 1)
    sigma_b: float = float(np.sqrt(0.1))  # prior std of b (variance 0.1)
    sigma_sigma: float = 1.0  # Half-Normal scale of the noise std
    pdes: list = field(default_factory=list)
    sigma_pde: float = 0.1

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.Y.ndim == 1:
            self.Y = self.Y[:, None]
        if self.X.shape[0] != self.Y.shape[0]:
            raise ConfigError("X and Y row counts differ")

    @property
    def window_shape(self):
        return self.X.shape[1:] if self.X.ndim == 3 else (1, self.X.shape[1])

    @property
    def flat_dim(self):
        return int(np.prod(self.X.shape[1:]))

    @property
    def p(self):
        return self.Y.shape[1]

    def layer_dims(self):
        dims = [self.flat_dim] + list(self.hidden) + [self.p]
        return list(zip(dims[:-1], dims[1:]))

    def hyper_dict(self):
        return {
            "hidden": list(self.hidden), "c": self.c, "sigma_w": self.sigma_w,
            "sigma_b": self.sigma_b, "sigma_sigma": self.sigma_sigma,
            "sigma_pde": self.sigma_pde,
        }


def _bpinn_slices(spec):
    slices, pos = [], 0
    for fan_in, fan_out in spec.layer_dims():
        w = (pos, pos + fan_in * fan_out, (fan_in, fan_out))
        pos += fan_in * fan_out
        b = (pos, pos + fan_out)
        pos += fan_out
        slices.append((w, b))
    return slices, pos


def _bpinn_forward(theta, spec, x_node):
    """tanh(H (c W) + b) stack with a linear head; x_node is (n, flat)."""
    slices, _ = _bpinn_slices(spec)
    h = x_node
    last = len(slices) - 1
    for l, ((w0, w1, wshape), (b0, b1)) in enumerate(slices):
        W = tape.reshape(theta[w0:w1], wshape)
        b = theta[b0:b1]
        z = tape.add(tape.matmul(h, tape.mul(spec.c, W)), b)
        h = z if l == last else tape.tanh(z)
    return h


def build_bpinn(spec):
    """Hierarchical dense network: Normal priors on weights/biases, a
    Half-Normal prior on the noise std, optional constraint potential
    wired through on-tape input gradients (attach with add_pde_potential)."""
    slices, n_wb = _bpinn_slices(spec)
    dim = n_wb + 1
    X_flat = spec.X.reshape(spec.X.shape[0], -1)
    Y = spec.Y
    T, d = spec.window_shape
    p = spec.p

    def logp_fn(theta):
        x = tape.Node(X_flat)
        yhat = _bpinn_forward(theta, spec, x)
        z_sig = theta[n_wb]
        sigma = tape.exp(z_sig)
        lp = normal_logpdf(Y, yhat, sigma)
        for (w0, w1, _), (b0, b1) in slices:
            lp = lp + normal_logpdf(theta[w0:w1], 0.0, spec.sigma_w)
            lp = lp + normal_logpdf(theta[b0:b1], 0.0, spec.sigma_b)
        lp = lp + half_normal_logpdf(sigma, spec.sigma_sigma)
        lp = lp + z_sig
        return lp

    def residual_builder(theta, pdes):
        x = tape.Node(X_flat)
        yhat = _bpinn_forward(theta, spec, x)
        needed = set()
        for pde in pdes:
            needed.add(pde.lhs[0])
            for sym in free_symbols(pde.rhs):
                m = _DERIV_RE.match(sym)
                if m:
                    needed.add(int(m.group(1)))
        grads = {}
        for j in sorted(needed):
            if not 1 <= j <= p:
                raise ConfigError(f"constraint output Y{j} outside 1..{p}")
            s = tape.sum_(tape.take(yhat, (slice(None), j - 1)))
            (g,) = tape.backward(s, [x])  # (n, T*d)
            grads[j] = g
        bindings = {}
        for pde in pdes:
            for sym in free_symbols(pde.rhs) | {pde.lhs_symbol}:
                if sym in bindings:
                    continue
                m = _DERIV_RE.match(sym)
                if m:
                    j, i = int(m.group(1)), int(m.group(2))
                    if not 1 <= i <= d:
                        raise ConfigError(f"symbol {sym} references X{i} outside 1..{d}")
                    col = (T - 1) * d + (i - 1)  # most recent lag step
                    bindings[sym] = tape.take(grads[j], (slice(None), col))
                    continue
                m = _STATE_RE.match(sym)
                if m:
                    i = int(m.group(1))
                    bindings[sym] = tape.Node(X_flat[:, (T - 1) * d + (i - 1)])
                    continue
                raise ConfigError(f"cannot resolve constraint symbol {sym!r}")
        residuals = []
        for pde in pdes:
            diff = tape.sub(bindings[pde.lhs_symbol], evaluate_on_tape(pde.rhs, bindings))
            residuals.append(tape.mean(diff))
        return residuals

    def predict_fn(theta, X_new):
        X_new = np.asarray(X_new, dtype=np.float64).reshape(len(X_new), -1)
        theta_node = tape.as_node(np.asarray(theta, dtype=np.float64))
        return _bpinn_forward(theta_node, spec, tape.Node(X_new)).value

    labels = []
    for l, ((w0, w1, shape), (b0, b1)) in enumerate(slices):
        labels += [f"W{l}[{k}]" for k in range(w1 - w0)]
        labels += [f"b{l}[{k}]" for k in range(b1 - b0)]
    labels += ["sigma"]
    model = LogDensityModel(
        dim=dim, logp_fn=logp_fn, labels=labels,
        log_coords=(n_wb,), residual_builder=residual_builder,
    )
    model.predict_fn = predict_fn
    return model


# ------------------------------------------------------------ posterior predict

def posterior_predict(model, samples, X_new, prob=0.95, max_draws=None):
    """Push posterior draws through the model's forward map.

    Returns (mean, lower, upper) arrays of shape (n_points, p). Intervals
    are per-point HDIs; with fewer than 10 draws they collapse to the
    min/max envelope.
    """
    predict_fn = getattr(model, "predict_fn", None)
    if predict_fn is None:
        raise ConfigError("model does not define a predictive forward map")
    flat = samples.flat() if isinstance(samples, PosteriorSamples) else np.asarray(samples)
    if flat.ndim == 1:
        flat = flat[None, :]
    if max_draws is not None and flat.shape[0] > max_draws:
        idx = np.linspace(0, flat.shape[0] - 1, max_draws).astype(int)
        flat = flat[idx]
    preds = np.stack([np.atleast_2d(predict_fn(theta, X_new)) for theta in flat])
    mean = preds.mean(axis=0)
    lo = np.empty_like(mean)
    hi = np.empty_like(mean)
    n_draws = preds.shape[0]
    for jj in range(mean.shape[1]):
        for ii in range(mean.shape[0]):
            col = preds[:, ii, jj]
            if n_draws < 10:
                lo[ii, jj], hi[ii, jj] = col.min(), col.max()
            else:
                lo[ii, jj], hi[ii, jj] = hdi(col, prob)
    return mean, lo, hi
