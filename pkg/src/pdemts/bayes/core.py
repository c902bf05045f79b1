"""Differentiable log densities, MAP, mean-field VI, NUTS, and posterior
summaries.

Positivity-constrained coordinates are sampled on the log scale with the
Jacobian folded into the log density, so gradient-based methods never
leave the support. Distribution primitives accept numpy arrays or tape
Nodes; out-of-support array arguments return -inf by convention.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .. import tape
from ..errors import ConfigError, DataError

LOG_2PI = math.log(2.0 * math.pi)
DIVERGENCE_ENERGY = 1000.0


def _values(x):
    return x.value if tape.is_node(x) else np.asarray(x, dtype=np.float64)


def _any_node(*xs):
    return any(tape.is_node(x) for x in xs)


def _sum_over(term, shape):
    """Sum ``term`` broadcast to ``shape`` (counts repeats of scalar params)."""
    if tape.is_node(term):
        return tape.sum_(tape.mul(term, np.ones(shape)))
    return float(np.sum(np.broadcast_to(term, shape)))


# ------------------------------------------------------------ distributions
# Each accepts numpy values or tape Nodes in any argument slot; the result
# is a scalar (Node when any input is a Node), summed over the elements of
# x as independent coordinates. Out-of-support plain values return -inf.

def normal_logpdf(x, mu, sigma):
    shape = _values(x).shape
    z = (x - mu) / sigma
    const = -0.5 * LOG_2PI * _values(x).size
    logs = tape.log(sigma) if tape.is_node(sigma) else np.log(_values(sigma))
    if _any_node(x, mu, sigma):
        return const - _sum_over(logs, shape) - 0.5 * tape.sum_(z * z)
    return const - _sum_over(logs, shape) - 0.5 * float(np.sum(z * z))


def laplace_logpdf(x, mu, b):
    shape = _values(x).shape
    const = -math.log(2.0) * _values(x).size
    logb = tape.log(b) if tape.is_node(b) else np.log(_values(b))
    if _any_node(x, mu, b):
        dev = tape.abs_(x - mu) / b
        return const - _sum_over(logb, shape) - tape.sum_(dev)
    return const - _sum_over(logb, shape) - float(np.sum(np.abs(x - mu) / _values(b)))


def gamma_logpdf(x, alpha, beta):
    """Shape/rate parameterization; x <= 0 is out of support."""
    shape = _values(x).shape
    if np.any(_values(x) <= 0):
        if tape.is_node(x):
            raise DataError("gamma_logpdf received non-positive Node values")
        return -np.inf
    a = np.broadcast_to(np.asarray(alpha, dtype=np.float64), shape)
    rate = np.broadcast_to(np.asarray(beta, dtype=np.float64), shape)
    const = float(np.sum(a * np.log(rate) - gammaln(a)))
    if tape.is_node(x):
        return const + tape.sum_((a - 1.0) * tape.log(x)) - tape.sum_(rate * x)
    return const + float(np.sum((a - 1.0) * np.log(x))) - float(np.sum(rate * x))


def half_cauchy_logpdf(x, loc, scale):
    """Support x >= loc."""
    shape = _values(x).shape
    if np.any(_values(x) < loc):
        if tape.is_node(x):
            raise DataError("half_cauchy_logpdf received values below the location")
        return -np.inf
    const = (math.log(2.0) - math.log(math.pi) - math.log(scale)) * _values(x).size
    z = (x - loc) / scale
    if tape.is_node(x):
        return const - tape.sum_(tape.log(1.0 + z * z))
    return const - float(np.sum(np.log1p(z * z)))


def half_normal_logpdf(x, sigma):
    """Support x >= 0."""
    if np.any(_values(x) < 0):
        if tape.is_node(x):
            raise DataError("half_normal_logpdf received negative values")
        return -np.inf
    const = (0.5 * math.log(2.0) - 0.5 * LOG_2PI - math.log(sigma)) * _values(x).size
    z = x / sigma
    if tape.is_node(x):
        return const - 0.5 * tape.sum_(z * z)
    return const - 0.5 * float(np.sum(z * z))


# ------------------------------------------------------------------ model

@dataclass
class LogDensityModel:
    """Unnormalized log posterior over a flat unconstrained vector.

    ``logp_fn(theta_node) -> scalar Node`` includes the log-transform
    Jacobians (what samplers need); with ``jacobian=False`` the methods
    strip them again so MAP estimates land on the natural-scale mode.
    """

    dim: int
    logp_fn: object  # Node(dim,) -> scalar Node, Jacobian included
    labels: list
    log_coords: tuple = ()  # indices living on the log scale
    log_offsets: dict = field(default_factory=dict)  # index -> location shift
    residual_builder: object = None  # (theta Node, pdes) -> list of scalar Nodes

    def _logp_node(self, node, jacobian):
        lp = self.logp_fn(node)
        if not jacobian and self.log_coords:
            idx = np.asarray(self.log_coords, dtype=np.intp)
            lp = tape.sub(lp, tape.sum_(tape.take(node, idx)))
        return lp

    def logp(self, theta, jacobian=True):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            node = tape.as_node(np.asarray(theta, dtype=np.float64))
            return float(self._logp_node(node, jacobian).value)

    def logp_and_grad(self, theta, jacobian=True):
        # overflow to inf/nan is expected far in the tails; the samplers
        # treat non-finite energies as divergences
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            node = tape.as_node(np.asarray(theta, dtype=np.float64))
            lp = self._logp_node(node, jacobian)
            (g,) = tape.backward(lp, [node])
            return float(lp.value), g.value

    def grad_logp(self, theta, jacobian=True):
        return self.logp_and_grad(theta, jacobian)[1]

    def constrain(self, theta):
        """Map an unconstrained vector to the natural parameter scale."""
        out = np.asarray(theta, dtype=np.float64).copy()
        for i in self.log_coords:
            out[..., i] = self.log_offsets.get(i, 0.0) + np.exp(out[..., i])
        return out


# ------------------------------------------------------------------ MAP

@dataclass
class MapResult:
    theta: np.ndarray
    logp: float
    grad_norm: float


def map_estimate(model, init, steps=500, lr=0.05):
    """Adam ascent on logp; returns the best point seen.

    Optimizes without the transform Jacobians, so the estimate is the
    posterior mode on the natural parameter scale.
    """
    theta = np.asarray(init, dtype=np.float64).copy()
    lp, grad = model.logp_and_grad(theta, jacobian=False)
    if not np.isfinite(lp):
        raise DataError(f"logp is not finite at the MAP initial point (logp={lp})")
    best_theta, best_lp = theta.copy(), lp
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    for t in range(1, steps + 1):
        m = 0.9 * m + 0.1 * grad
        v = 0.999 * v + 0.001 * grad**2
        mh = m / (1 - 0.9**t)
        vh = v / (1 - 0.999**t)
        theta = theta + lr * mh / (np.sqrt(vh) + 1e-8)
        lp, grad = model.logp_and_grad(theta, jacobian=False)
        if np.isfinite(lp) and lp > best_lp:
            best_lp, best_theta = lp, theta.copy()
    _, gbest = model.logp_and_grad(best_theta, jacobian=False)
    return MapResult(theta=best_theta, logp=best_lp, grad_norm=float(np.linalg.norm(gbest)))


# ------------------------------------------------------------------ ADVI

@dataclass
class VIApprox:
    mean: np.ndarray
    log_std: np.ndarray
    elbo_trace: list


class AdviDivergence(RuntimeError):
    def __init__(self, step, trace):
        super().__init__(f"ELBO became non-finite at step {step}")
        self.trace = trace


def advi_fit(model, steps=1000, mc_samples=4, lr=0.05, seed=0, init=None):
    """Mean-field Gaussian fit by reparameterized ELBO ascent."""
    rng = np.random.default_rng(seed)
    mu = np.zeros(model.dim) if init is None else np.asarray(init, dtype=np.float64).copy()
    omega = np.full(model.dim, -1.0)  # log standard deviations
    m_mu = np.zeros(model.dim)
    v_mu = np.zeros(model.dim)
    m_om = np.zeros(model.dim)
    v_om = np.zeros(model.dim)
    trace = []
    for t in range(1, steps + 1):
        g_mu = np.zeros(model.dim)
        g_om = np.zeros(model.dim)
        elbo = 0.0
        sd = np.exp(omega)
        for _ in range(mc_samples):
            eps = rng.standard_normal(model.dim)
            theta = mu + sd * eps
            lp, g = model.logp_and_grad(theta)
            elbo += lp
            g_mu += g
            g_om += g * sd * eps
        elbo = elbo / mc_samples + float(np.sum(omega)) + 0.5 * model.dim * (1 + LOG_2PI)
        trace.append(elbo)
        if not np.isfinite(elbo):
            raise AdviDivergence(t, trace)
        g_mu /= mc_samples
        g_om = g_om / mc_samples + 1.0  # entropy term

        for g, m, v, x in ((g_mu, m_mu, v_mu, mu), (g_om, m_om, v_om, omega)):
            m[:] = 0.9 * m + 0.1 * g
            v[:] = 0.999 * v + 0.001 * g**2
            x += lr * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    return VIApprox(mean=mu, log_std=omega, elbo_trace=trace)


# ------------------------------------------------------------------ NUTS

@dataclass
class SamplerConfig:
    chains: int = 1
    tune: int = 500
    draws: int = 1000
    target_accept: float = 0.9
    max_treedepth: int = 10
    step_size: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.tune < 1 or self.draws < 1:
            raise ConfigError("tune and draws must both be >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ConfigError("target_accept must lie strictly between 0 and 1")
        if self.max_treedepth < 1:
            raise ConfigError("max_treedepth must be >= 1")


@dataclass
class PosteriorSamples:
    samples: np.ndarray  # (chains, draws, dim); tuning draws excluded
    labels: list
    divergences: int = 0
    accept_rate: float = float("nan")
    step_sizes: list = field(default_factory=list)

    def flat(self):
        return self.samples.reshape(-1, self.samples.shape[-1])

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("chain,draw," + ",".join(self.labels) + "\n")
            for c in range(self.samples.shape[0]):
                for d in range(self.samples.shape[1]):
                    row = ",".join(repr(v) for v in self.samples[c, d])
                    fh.write(f"{c},{d},{row}\n")

    def diagnostics_text(self):
        return (
            f"chains: {self.samples.shape[0]}\n"
            f"draws per chain: {self.samples.shape[1]}\n"
            f"acceptance rate: {self.accept_rate:.4f}\n"
            f"divergences: {self.divergences}\n"
            f"step sizes: {', '.join(f'{s:.6g}' for s in self.step_sizes)}\n"
        )


class _Tree:
    __slots__ = (
        "tm", "rm", "gm", "tp", "rp", "gp", "prop", "prop_lp", "prop_grad",
        "logw", "sum_alpha", "n_alpha", "turning", "divergent",
    )


def _kinetic(r, minv):
    return 0.5 * float(np.sum(minv * r * r))


def _leapfrog(model, theta, r, grad, eps, minv):
    r1 = r + 0.5 * eps * grad
    theta1 = theta + eps * minv * r1
    lp1, g1 = model.logp_and_grad(theta1)
    r2 = r1 + 0.5 * eps * g1
    return theta1, r2, g1, lp1


def _leaf(model, theta, r, grad, lp, v, eps, minv, h0):
    t1, r1, g1, lp1 = _leapfrog(model, theta, r, grad, v * eps, minv)
    leaf = _Tree()
    leaf.tm = leaf.tp = t1
    leaf.rm = leaf.rp = r1
    leaf.gm = leaf.gp = g1
    leaf.prop, leaf.prop_lp, leaf.prop_grad = t1, lp1, g1
    if np.isfinite(lp1):
        h1 = -lp1 + _kinetic(r1, minv)
        delta = h0 - h1
    else:
        delta = -np.inf
    leaf.logw = delta
    leaf.divergent = not np.isfinite(delta) or (-delta) > DIVERGENCE_ENERGY
    leaf.turning = False
    leaf.sum_alpha = min(1.0, math.exp(min(delta, 0.0))) if np.isfinite(delta) else 0.0
    leaf.n_alpha = 1
    return leaf


def _uturn(tm, tp, rm, rp, minv):
    d = tp - tm
    return float(d @ (minv * rm)) < 0.0 or float(d @ (minv * rp)) < 0.0


def _build(model, theta, r, grad, lp, v, depth, eps, minv, h0, rng):
    if depth == 0:
        return _leaf(model, theta, r, grad, lp, v, eps, minv, h0)
    first = _build(model, theta, r, grad, lp, v, depth - 1, eps, minv, h0, rng)
    if first.divergent or first.turning:
        return first
    if v > 0:
        second = _build(model, first.tp, first.rp, first.gp, None, v, depth - 1,
                        eps, minv, h0, rng)
        first.tp, first.rp, first.gp = second.tp, second.rp, second.gp
    else:
        second = _build(model, first.tm, first.rm, first.gm, None, v, depth - 1,
                        eps, minv, h0, rng)
        first.tm, first.rm, first.gm = second.tm, second.rm, second.gm
    total = np.logaddexp(first.logw, second.logw)
    if np.isfinite(second.logw) and math.log(rng.random() + 1e-300) < second.logw - total:
        first.prop, first.prop_lp, first.prop_grad = second.prop, second.prop_lp, second.prop_grad
    first.logw = total
    first.sum_alpha += second.sum_alpha
    first.n_alpha += second.n_alpha
    first.divergent = second.divergent
    first.turning = second.turning or _uturn(first.tm, first.tp, first.rm, first.rp, minv)
    return first


def _transition(model, theta, lp, grad, eps, minv, max_depth, rng):
    r0 = rng.standard_normal(theta.shape) / np.sqrt(minv)
    h0 = -lp + _kinetic(r0, minv)
    tree = _Tree()
    tree.tm = tree.tp = theta
    tree.rm = tree.rp = r0
    tree.gm = tree.gp = grad
    tree.prop, tree.prop_lp, tree.prop_grad = theta, lp, grad
    tree.logw = 0.0
    sum_alpha, n_alpha, divergent = 0.0, 0, False
    for depth in range(max_depth):
        v = 1.0 if rng.random() < 0.5 else -1.0
        if v > 0:
            sub = _build(model, tree.tp, tree.rp, tree.gp, None, v, depth, eps, minv, h0, rng)
        else:
            sub = _build(model, tree.tm, tree.rm, tree.gm, None, v, depth, eps, minv, h0, rng)
        sum_alpha += sub.sum_alpha
        n_alpha += sub.n_alpha
        if sub.divergent:
            divergent = True
            break
        if sub.turning:
            break
        # biased progressive acceptance of the new half
        if math.log(rng.random() + 1e-300) < sub.logw - tree.logw:
            tree.prop, tree.prop_lp, tree.prop_grad = sub.prop, sub.prop_lp, sub.prop_grad
        tree.logw = np.logaddexp(tree.logw, sub.logw)
        if v > 0:
            tree.tp, tree.rp, tree.gp = sub.tp, sub.rp, sub.gp
        else:
            tree.tm, tree.rm, tree.gm = sub.tm, sub.rm, sub.gm
        if _uturn(tree.tm, tree.tp, tree.rm, tree.rp, minv):
            break
    accept = sum_alpha / max(n_alpha, 1)
    return tree.prop, tree.prop_lp, tree.prop_grad, accept, divergent


def _find_reasonable_eps(model, theta, lp, grad, minv, rng):
    eps = 1.0
    r = rng.standard_normal(theta.shape) / np.sqrt(minv)
    h0 = -lp + _kinetic(r, minv)
    _, r1, _, lp1 = _leapfrog(model, theta, r, grad, eps, minv)
    h1 = -lp1 + _kinetic(r1, minv) if np.isfinite(lp1) else np.inf
    while not np.isfinite(h1):
        eps *= 0.5
        _, r1, _, lp1 = _leapfrog(model, theta, r, grad, eps, minv)
        h1 = -lp1 + _kinetic(r1, minv) if np.isfinite(lp1) else np.inf
        if eps < 1e-10:
            raise DataError("cannot find a stable step size; gradients may be broken")
    a = 1.0 if (h0 - h1) > math.log(0.5) else -1.0
    for _ in range(50):
        if a * (h0 - h1) <= -a * math.log(2.0):
            break
        eps *= 2.0**a
        _, r1, _, lp1 = _leapfrog(model, theta, r, grad, eps, minv)
        h1 = -lp1 + _kinetic(r1, minv) if np.isfinite(lp1) else np.inf
    return eps


class _DualAveraging:
    def __init__(self, eps0, target):
        self.mu = math.log(10.0 * eps0)
        self.target = target
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.m = 0
        self.gamma, self.t0, self.kappa = 0.05, 10.0, 0.75

    def update(self, accept):
        self.m += 1
        frac = 1.0 / (self.m + self.t0)
        self.h_bar = (1 - frac) * self.h_bar + frac * (self.target - accept)
        log_eps = self.mu - math.sqrt(self.m) / self.gamma * self.h_bar
        eta = self.m**-self.kappa
        self.log_eps_bar = eta * log_eps + (1 - eta) * self.log_eps_bar
        return math.exp(log_eps)

    def final(self):
        return math.exp(self.log_eps_bar)


def nuts_sample(model, config, init):
    """No-U-Turn sampling with dual-averaging step size and a diagonal mass
    matrix estimated during tuning. Tuning draws are discarded."""
    init = np.asarray(init, dtype=np.float64)
    if init.shape != (model.dim,):
        raise ConfigError(f"init has shape {init.shape}, model dim is {model.dim}")
    all_samples = np.empty((config.chains, config.draws, model.dim))
    divergences = 0
    accept_accum = []
    step_sizes = []

    for chain in range(config.chains):
        rng = np.random.default_rng([config.seed, chain])
        theta = init.copy()
        lp, grad = model.logp_and_grad(theta)
        if not np.isfinite(lp):
            raise DataError(f"logp not finite at the chain {chain} initial point")
        minv = np.ones(model.dim)
        eps = config.step_size or _find_reasonable_eps(model, theta, lp, grad, minv, rng)
        da = _DualAveraging(eps, config.target_accept)
        # one mass-matrix update mid-tuning leaves the second half for the
        # step size to settle under the new metric
        checkpoint = config.tune // 2 if config.tune >= 100 else None
        window = []

        for it in range(config.tune):
            theta, lp, grad, accept, _ = _transition(
                model, theta, lp, grad, eps, minv, config.max_treedepth, rng
            )
            eps = da.update(accept)
            window.append(theta)
            if checkpoint is not None and it + 1 == checkpoint and len(window) > 4:
                w = np.asarray(window)
                var = w.var(axis=0)
                n_w = len(window)
                minv = (n_w / (n_w + 5.0)) * var + (5.0 / (n_w + 5.0)) * 1e-3
                minv = np.maximum(minv, 1e-10)
                eps = _find_reasonable_eps(model, theta, lp, grad, minv, rng)
                da = _DualAveraging(eps, config.target_accept)
                window = []
        eps = da.final()
        step_sizes.append(eps)

        for it in range(config.draws):
            theta, lp, grad, accept, div = _transition(
                model, theta, lp, grad, eps, minv, config.max_treedepth, rng
            )
            all_samples[chain, it] = theta
            accept_accum.append(accept)
            divergences += int(div)

    total = config.chains * config.draws
    if divergences > 0.25 * total:
        import warnings

        warnings.warn(
            f"{divergences}/{total} post-tuning divergences; posterior geometry is "
            "hostile at this step size"
        )
    return PosteriorSamples(
        samples=all_samples,
        labels=list(model.labels),
        divergences=divergences,
        accept_rate=float(np.mean(accept_accum)),
        step_sizes=step_sizes,
    )


# ------------------------------------------------------------------ summaries

def posterior_mean(samples):
    """Mean over all chains and draws (the flat double sum)."""
    arr = samples.samples if isinstance(samples, PosteriorSamples) else np.asarray(samples)
    if arr.size == 0:
        raise DataError("posterior_mean of zero draws")
    if arr.ndim == 3:
        return arr.reshape(-1, arr.shape[-1]).mean(axis=0)
    return arr.mean(axis=0)


def hdi(samples, prob=0.95):
    """Shortest interval holding ceil(prob * n) sorted samples; ties break
    toward the leftmost window."""
    if not 0.0 < prob < 1.0:
        raise ConfigError(f"prob must lie in (0, 1), got {prob}")
    s = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    n = len(s)
    if n < 10:
        raise DataError(f"need at least 10 samples for an HDI, got {n}")
    k = int(math.ceil(prob * n))
    if k >= n:
        return float(s[0]), float(s[-1])
    widths = s[k - 1:] - s[: n - k + 1]
    i = int(np.argmin(widths))
    return float(s[i]), float(s[i + k - 1])
