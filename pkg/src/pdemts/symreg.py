"""Genetic-programming regression over expression trees.

Individuals are Expr trees built from the protected primitive set, so
every candidate evaluates finite on finite data. Fitness is training MSE
plus a parsimony penalty on node count; elitism keeps the best-ever
fitness non-increasing across generations.
"""

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .expr import Binary, Constant, Unary, Var, depth, evaluate_batch, size, to_text

BINARY_OPS = ("+", "-", "*", "/")
UNARY_OPS = ("sin", "cos")


@dataclass
class GpConfig:
    population_size: int = 500
    generations: int = 30
    tournament: int = 7
    p_crossover: float = 0.7
    p_subtree: float = 0.2
    p_point: float = 0.05
    p_hoist: float = 0.05
    max_depth: int = 6
    parsimony: float = 1e-4
    const_range: tuple = (-1.0, 1.0)
    p_const_terminal: float = 0.3
    stop_mse: float = 0.0  # stop early once best MSE falls to this level
    seed: int = 0

    def __post_init__(self):
        probs = (self.p_crossover, self.p_subtree, self.p_point, self.p_hoist)
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ConfigError("variation probabilities must lie in [0, 1]")
        if sum(probs) > 1.0 + 1e-12:
            raise ConfigError("crossover + mutation probabilities exceed 1")
        if self.max_depth > 10:
            raise ConfigError("max_depth capped at 10")


@dataclass
class Individual:
    expr: object
    fitness: float
    mse: float
    size: int


def _random_tree(rng, feature_names, config, max_depth, full):
    if max_depth <= 1 or (not full and rng.random() < 0.3):
        if rng.random() < config.p_const_terminal:
            lo, hi = config.const_range
            return Constant(float(rng.uniform(lo, hi)))
        return Var(feature_names[rng.integers(len(feature_names))])
    if rng.random() < 0.8:
        op = BINARY_OPS[rng.integers(len(BINARY_OPS))]
        return Binary(
            op,
            _random_tree(rng, feature_names, config, max_depth - 1, full),
            _random_tree(rng, feature_names, config, max_depth - 1, full),
        )
    fn = UNARY_OPS[rng.integers(len(UNARY_OPS))]
    return Unary(fn, _random_tree(rng, feature_names, config, max_depth - 1, full))


def _all_subtrees(expr, path=()):
    yield path, expr
    if isinstance(expr, Unary):
        yield from _all_subtrees(expr.arg, path + ("arg",))
    elif isinstance(expr, Binary):
        yield from _all_subtrees(expr.left, path + ("left",))
        yield from _all_subtrees(expr.right, path + ("right",))


def _replace_at(expr, path, new):
    if not path:
        return new
    head, rest = path[0], path[1:]
    if isinstance(expr, Unary):
        return Unary(expr.fn, _replace_at(expr.arg, rest, new))
    if head == "left":
        return Binary(expr.op, _replace_at(expr.left, rest, new), expr.right)
    return Binary(expr.op, expr.left, _replace_at(expr.right, rest, new))


def _pick_subtree(rng, expr):
    nodes = list(_all_subtrees(expr))
    return nodes[rng.integers(len(nodes))]


def _evaluate(expr, columns, target, config):
    pred = evaluate_batch(expr, columns, n=len(target))
    with np.errstate(over="ignore", invalid="ignore"):
        resid = target - pred
        mse = float(np.mean(resid * resid))
    if not np.isfinite(mse):
        return Individual(expr=expr, fitness=np.inf, mse=np.inf, size=size(expr))
    s = size(expr)
    return Individual(expr=expr, fitness=mse + config.parsimony * s, mse=mse, size=s)


def _tournament(rng, population, k):
    idx = rng.integers(len(population), size=k)
    best = min(idx, key=lambda i: population[i].fitness)
    return population[best]


def _crossover(rng, a, b, max_depth):
    path, _ = _pick_subtree(rng, a)
    _, donor = _pick_subtree(rng, b)
    child = _replace_at(a, path, donor)
    return child if depth(child) <= max_depth else copy.deepcopy(a)


def _subtree_mutation(rng, a, feature_names, config):
    path, _ = _pick_subtree(rng, a)
    new = _random_tree(rng, feature_names, config, max_depth=3, full=False)
    child = _replace_at(a, path, new)
    return child if depth(child) <= config.max_depth else a


def _point_mutation(rng, a, feature_names, config):
    path, node = _pick_subtree(rng, a)
    if isinstance(node, Binary):
        new = Binary(BINARY_OPS[rng.integers(len(BINARY_OPS))], node.left, node.right)
    elif isinstance(node, Unary):
        new = Unary(UNARY_OPS[rng.integers(len(UNARY_OPS))], node.arg)
    elif isinstance(node, Var) and rng.random() < 0.5:
        new = Var(feature_names[rng.integers(len(feature_names))])
    else:
        lo, hi = config.const_range
        new = Constant(float(rng.uniform(lo, hi)))
    return _replace_at(a, path, new)


def _hoist_mutation(rng, a):
    path, node = _pick_subtree(rng, a)
    if isinstance(node, (Constant, Var)):
        return a
    _, inner = _pick_subtree(rng, node)
    return _replace_at(a, path, inner)


def evolve(features, target, config=GpConfig(), feature_names=None):
    """Search for an expression mapping the feature columns to the target.

    ``features`` is (n, k) with one column per terminal symbol. Returns
    (best individual ever seen, hall of fame of the final population).
    """
    features = np.asarray(features, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64).ravel()
    if features.ndim != 2 or features.shape[1] == 0:
        raise ConfigError("feature matrix must be (n, k>=1)")
    if features.shape[0] < 10:
        raise ConfigError("need at least 10 rows to evolve")
    feature_names = feature_names or [f"X{k + 1}" for k in range(features.shape[1])]
    columns = {nm: features[:, k] for k, nm in enumerate(feature_names)}
    rng = np.random.default_rng(config.seed)

    # ramped half-and-half
    population = []
    depths = list(range(2, config.max_depth + 1)) or [2]
    for i in range(config.population_size):
        d = depths[i % len(depths)]
        full = (i // len(depths)) % 2 == 0
        population.append(
            _evaluate(_random_tree(rng, feature_names, config, d, full), columns, target, config)
        )

    best = min(population, key=lambda ind: ind.fitness)
    p_cx = config.p_crossover
    p_sub = p_cx + config.p_subtree
    p_pt = p_sub + config.p_point
    p_ho = p_pt + config.p_hoist

    for _ in range(config.generations):
        if best.mse <= config.stop_mse:
            break
        nxt = [best]  # elitism of one
        while len(nxt) < config.population_size:
            parent = _tournament(rng, population, config.tournament)
            roll = rng.random()
            if roll < p_cx:
                mate = _tournament(rng, population, config.tournament)
                child = _crossover(rng, parent.expr, mate.expr, config.max_depth)
            elif roll < p_sub:
                child = _subtree_mutation(rng, parent.expr, feature_names, config)
            elif roll < p_pt:
                child = _point_mutation(rng, parent.expr, feature_names, config)
            elif roll < p_ho:
                child = _hoist_mutation(rng, parent.expr)
            else:
                child = parent.expr
            nxt.append(_evaluate(child, columns, target, config))
        population = nxt
        gen_best = min(population, key=lambda ind: ind.fitness)
        if gen_best.fitness < best.fitness:
            best = gen_best

    hall = sorted(population, key=lambda ind: ind.fitness)[:10]
    if best not in hall:
        hall = [best] + hall[:9]
    return best, hall


def simplify_size(ind):
    """Prune neutral subtrees (x+0, x-0, x*1, x/1) without changing outputs.

    The stored fitness is kept so rankings computed before pruning stay
    valid; only the tree and its size change.
    """

    def prune(e):
        if isinstance(e, Unary):
            return Unary(e.fn, prune(e.arg))
        if hasattr(e, "exponent"):  # Power
            return type(e)(prune(e.base), e.exponent)
        if not isinstance(e, Binary):
            return e
        left, right = prune(e.left), prune(e.right)
        if e.op in ("+", "-") and isinstance(right, Constant) and right.value == 0.0:
            return left
        if e.op == "+" and isinstance(left, Constant) and left.value == 0.0:
            return right
        if e.op in ("*", "/") and isinstance(right, Constant) and right.value == 1.0:
            return left
        if e.op == "*" and isinstance(left, Constant) and left.value == 1.0:
            return right
        return Binary(e.op, left, right)

    pruned = prune(ind.expr)
    return Individual(expr=pruned, fitness=ind.fitness, mse=ind.mse, size=size(pruned))


def write_hall_of_fame(hall, path):
    with open(path, "w") as fh:
        fh.write("rank\tfitness\tsize\texpression\n")
        for rank, ind in enumerate(hall, start=1):
            fh.write(f"{rank}\t{ind.fitness:.6g}\t{ind.size}\t{to_text(ind.expr)}\n")
