"""Credal prediction robustness under simultaneous epsilon-contamination.

Every sum node's weight vector w is relaxed to {(1-eps) w + eps v} over the
simplex, multinomial leaf factors likewise, and each Normal factor's mean
ranges over mu +/- eps*scale*sigma with fixed variance. A prediction y* is
robust at eps when, for every competitor y', the maximum of
p(x, y') - p(x, y*) over all contaminated parameter choices stays negative.
The maximum propagates bottom-up in one pass: a sum node with children
maxima m_i yields (1-eps) * sum_i w_i m_i + eps * max_i m_i, exact on
tree-shaped circuits because each parameter block occurs in one subtree.

For a fully observed instance every off-path subtree is indicator-killed
and contributes exactly zero, so propagation only walks the routed path of
each tree. Magnitudes are rescaled by a per-instance constant so the
linear-domain arithmetic survives high-dimensional leaves; signs, which
decide robustness, are unaffected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .circuit import (GeDT, GeFPlus, LeafDensity, Model, SumNode,
                      log_joint_per_class, predict, routed_path)


@dataclass(frozen=True)
class ContaminationSpec:
    """Contamination settings: eps in [0, 1] interpolates between the point
    estimate and the full simplex per node. Gaussian means move inside
    mu +/- eps * gaussian_mean_scale * sigma; variances stay fixed. The
    uniform mixture node over trees is contaminated too unless
    contaminate_root_mixture is off."""

    epsilon: float = 0.0
    contaminate_root_mixture: bool = True
    gaussian_mean_scale: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        if self.gaussian_mean_scale < 0:
            raise ValueError("gaussian_mean_scale must be >= 0")

    def at(self, epsilon: float) -> "ContaminationSpec":
        return ContaminationSpec(epsilon, self.contaminate_root_mixture,
                                 self.gaussian_mean_scale)


@dataclass(frozen=True)
class RobustnessResult:
    predicted_label: int
    epsilon_star: float
    iterations: int
    certified: bool


def _as_spec(epsilon, spec: ContaminationSpec | None) -> ContaminationSpec:
    base = spec if spec is not None else ContaminationSpec()
    return base.at(float(epsilon))


def _exp_sat(v: float) -> float:
    """exp saturating to inf; overflowed magnitudes keep the right sign
    through the downstream 0-guarded products."""
    try:
        return math.exp(v)
    except OverflowError:
        return math.inf


def _signed_unscale(value: float, log_scale: float) -> float:
    if value == 0.0:
        return 0.0
    return value * _exp_sat(log_scale)


# ---------------------------------------------------------------------------
# leaf bounds


def _leaf_cat_codes(leaf: LeafDensity, x_cat: np.ndarray) -> np.ndarray | None:
    """Codes of the categorical features, or None when x leaves the cell."""
    codes = x_cat.astype(np.intp)
    for k, code in enumerate(codes):
        if not leaf.cell.allowed[k][code]:
            return None
    return codes


def _leaf_log_factor_bounds(leaf: LeafDensity, x_cont, x_cat, eps, scale):
    """(logA, logB): log of the min/max contaminated feature-factor product.
    Returns None when x violates the cell, meaning the leaf is exactly 0."""
    obs = ~np.isnan(x_cont)
    if not obs.all() or np.isnan(x_cat).any():
        raise ValueError("credal analysis requires fully observed instances")
    if not leaf.contains(x_cont, obs):
        return None
    codes = _leaf_cat_codes(leaf, x_cat)
    if codes is None:
        return None
    logA = 0.0
    logB = 0.0
    if len(x_cont):
        z = np.abs(x_cont - leaf.mu) / leaf.sigma
        half = eps * scale
        d_near = np.maximum(z - half, 0.0)
        d_far = z + half
        const = -leaf._log_sigma - math.log(math.sqrt(2.0 * math.pi))
        if leaf.truncation:
            const = const - leaf.log_cell_mass
        logB += float((-0.5 * d_near * d_near + const).sum())
        logA += float((-0.5 * d_far * d_far + const).sum())
    if len(x_cat):
        q = np.array([leaf.cat_probs[k][c] for k, c in enumerate(codes)])
        with np.errstate(divide="ignore"):
            logA += float(np.log((1.0 - eps) * q).sum())
            logB += float(np.log((1.0 - eps) * q + eps).sum())
    return logA, logB


def _class_diff_interval(class_probs: np.ndarray, y: int, y_prime, eps):
    """Range of q'_{y'} - q'_y over the contaminated class multinomial."""
    delta = class_probs[y_prime] - class_probs[y]
    return (1.0 - eps) * delta - eps, (1.0 - eps) * delta + eps


def _corner_products(A, B, c_lo, c_hi):
    """Extrema of F * c over F in [A, B] >= 0 and c in [c_lo, c_hi].

    0 * inf corners (overflowed magnitude times an exactly-zero class term)
    are resolved to 0, the true value of the corner.
    """
    def mul(a, c):
        return np.where(c == 0.0, 0.0, a * c)

    corners = np.stack([mul(A, c_lo), mul(A, c_hi), mul(B, c_lo), mul(B, c_hi)])
    return corners.min(axis=0), corners.max(axis=0)


def leaf_diff_bounds(leaf: LeafDensity, x_cont, x_cat, y: int, y_prime: int,
                     epsilon: float, spec: ContaminationSpec | None = None):
    """Interval of the contaminated leaf value of p(x, y') - p(x, y).

    x_cont / x_cat are the instance's continuous and categorical feature
    values (fully observed). A leaf whose cell excludes x contributes
    exactly (0, 0).
    """
    if y == y_prime:
        raise ValueError("labels must differ")
    s = _as_spec(epsilon, spec)
    lb = _leaf_log_factor_bounds(leaf, np.asarray(x_cont, dtype=np.float64),
                                 np.asarray(x_cat, dtype=np.float64),
                                 s.epsilon, s.gaussian_mean_scale)
    if lb is None:
        return 0.0, 0.0
    logA, logB = lb
    c_lo, c_hi = _class_diff_interval(leaf.class_probs, y, y_prime, s.epsilon)
    lo, hi = _corner_products(math.exp(logA), math.exp(logB), c_lo, c_hi)
    return float(lo), float(hi)


# ---------------------------------------------------------------------------
# instance-level propagation


class CredalInstance:
    """Everything about (model, x) that the epsilon search reuses: the
    routed path weights per tree, the routed leaf's factor statistics, and
    a shared log-scale that keeps linear-domain values representable."""

    def __init__(self, model: Model, x, spec: ContaminationSpec | None = None):
        self.model = model
        self.spec = spec if spec is not None else ContaminationSpec()
        x = np.asarray(x, dtype=np.float64)
        if np.isnan(x).any():
            raise ValueError("credal analysis requires fully observed instances")
        self.x = x
        cont = model.schema.continuous_features()
        cat = model.schema.categorical_features()
        self.x_cont = x[cont]
        self.x_cat = x[cat]
        gedts = [model] if isinstance(model, GeDT) else model.components
        self.is_mixture = isinstance(model, GeFPlus)
        self.path_w: list[np.ndarray] = []
        self.leaves: list[LeafDensity] = []
        log_mag = []
        for g in gedts:
            path, leaf = routed_path(g, x)
            w = np.array([node.weights[i] for node, i in path])
            self.path_w.append(w)
            self.leaves.append(leaf)
            feat = _leaf_log_factor_bounds(leaf, self.x_cont, self.x_cat, 0.0,
                                           self.spec.gaussian_mean_scale)
            assert feat is not None  # routing keeps x inside its leaf cell
            log_mag.append(feat[0] + float(np.log(w).sum()))
        self.log_scale = max(log_mag)
        if not math.isfinite(self.log_scale):
            # zero-density evidence everywhere: leave values unscaled
            self.log_scale = 0.0

    def max_diffs(self, y: int, eps: float) -> np.ndarray:
        """Scaled max of p(x, y') - p(x, y) over the contamination set, for
        every y' simultaneously (the y-th entry is meaningless). Multiply
        by exp(self.log_scale) for true values."""
        scale = self.spec.gaussian_mean_scale
        C = self.model.schema.n_classes
        ys = np.arange(C)
        per_tree = []
        for w_path, leaf in zip(self.path_w, self.leaves):
            logA, logB = _leaf_log_factor_bounds(leaf, self.x_cont, self.x_cat, eps, scale)
            A = math.exp(logA - self.log_scale)
            B = math.exp(logB - self.log_scale)
            c_lo, c_hi = _class_diff_interval(leaf.class_probs, y, ys, eps)
            m = _corner_products(A, B, c_lo, c_hi)[1]
            # fold the routed path bottom-up; off-path children are exactly 0,
            # so the general sum rule collapses to this one-child form
            if eps >= 1.0:
                for _ in w_path:
                    m = np.maximum(m, 0.0)
            else:
                for w in w_path[::-1]:
                    m = (1.0 - eps) * (w * m) + eps * np.maximum(m, 0.0)
            per_tree.append(m)
        if not self.is_mixture:
            return per_tree[0]
        stacked = np.stack(per_tree)
        n_t = len(per_tree)
        if self.spec.contaminate_root_mixture:
            return _fold_sum(np.full(n_t, 1.0 / n_t), stacked, eps)
        return np.full(n_t, 1.0 / n_t) @ stacked


def _fold_sum(weights: np.ndarray, child_maxima: np.ndarray, eps: float) -> np.ndarray:
    """(1-eps) * sum_i w_i m_i + eps * max_i m_i, vectorized over the class
    axis. At eps == 1 the linear term is dropped outright so an overflowed
    child (inf) cannot produce 0 * inf."""
    top = child_maxima.max(axis=0)
    if eps >= 1.0:
        return top
    return (1.0 - eps) * (weights @ child_maxima) + eps * top


def contaminated_sum_max(weights, child_maxima, epsilon: float) -> float:
    """Scalar form of the sum-node propagation rule."""
    w = np.asarray(weights, dtype=np.float64)
    m = np.asarray(child_maxima, dtype=np.float64)
    return float(_fold_sum(w, m[:, None], float(epsilon))[0])


# ---------------------------------------------------------------------------
# public queries


def credal_max_diff(model: Model, x, y: int, y_prime: int, epsilon: float,
                    spec: ContaminationSpec | None = None,
                    _instance: CredalInstance | None = None) -> float:
    """Maximum of p_w(x, y') - p_w(x, y) over all parameters in the
    contamination set; negative means no contaminated model prefers y'.
    Sign-equivalent to the paper-level conditional expectation criterion
    since p_w(x) > 0."""
    if y == y_prime:
        raise ValueError("labels must differ")
    s = _as_spec(epsilon, spec)
    inst = _instance if _instance is not None else CredalInstance(model, x, s)
    diffs = inst.max_diffs(int(y), s.epsilon)
    return float(diffs[int(y_prime)] * math.exp(inst.log_scale))


def is_robust_at(model: Model, x, y_star: int, epsilon: float,
                 spec: ContaminationSpec | None = None,
                 _instance: CredalInstance | None = None) -> bool:
    """True iff every competing label keeps a strictly negative credal max."""
    s = _as_spec(epsilon, spec)
    inst = _instance if _instance is not None else CredalInstance(model, x, s)
    diffs = inst.max_diffs(int(y_star), s.epsilon)
    mask = np.arange(len(diffs)) != int(y_star)
    return bool(np.all(diffs[mask] < 0.0))


def robustness_epsilon(model: Model, x, tol: float = 1e-3,
                       spec: ContaminationSpec | None = None) -> RobustnessResult:
    """Binary-search the largest eps at which the prediction stays robust.

    Monotonicity of the credal max in eps (nested contamination sets) makes
    the search exact up to tol: the returned value is verified robust and
    its upper neighbour (within tol) verified not. A tied prediction fails
    already at eps = 0 and reports 0 uncertified.
    """
    if not 0 < tol < 1:
        raise ValueError("tol must be in (0, 1)")
    y_star = predict(model, x)
    base = spec if spec is not None else ContaminationSpec()
    inst = CredalInstance(model, x, base)
    if not is_robust_at(model, x, y_star, 0.0, base, _instance=inst):
        return RobustnessResult(y_star, 0.0, 0, certified=False)
    if is_robust_at(model, x, y_star, 1.0, base, _instance=inst):
        return RobustnessResult(y_star, 1.0, 0, certified=True)
    lo, hi = 0.0, 1.0
    iterations = math.ceil(math.log2(1.0 / tol))
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if is_robust_at(model, x, y_star, mid, base, _instance=inst):
            lo = mid
        else:
            hi = mid
    return RobustnessResult(y_star, lo, iterations, certified=True)


def robustness_epsilon_table(model: Model, table, tol: float = 1e-3,
                             spec: ContaminationSpec | None = None) -> list[RobustnessResult]:
    return [robustness_epsilon(model, x, tol, spec) for x in table.X]


# ---------------------------------------------------------------------------
# full-circuit propagation (reference form) and random contaminations


def credal_max_diff_full(model: Model, x, y: int, y_prime: int, epsilon: float,
                         spec: ContaminationSpec | None = None) -> float:
    """Same maximum computed by visiting every node instead of only the
    routed path; off-path subtrees evaluate to exactly 0 through their
    indicators, so this agrees bit-for-bit with credal_max_diff."""
    if y == y_prime:
        raise ValueError("labels must differ")
    s = _as_spec(epsilon, spec)
    inst = CredalInstance(model, x, s)  # reuse its log scale
    eps = s.epsilon
    scale = s.gaussian_mean_scale
    x_cont, x_cat = inst.x_cont, inst.x_cat

    def visit(node) -> float:
        if isinstance(node, LeafDensity):
            lb = _leaf_log_factor_bounds(node, x_cont, x_cat, eps, scale)
            if lb is None:
                return 0.0
            logA, logB = lb
            A = math.exp(logA - inst.log_scale)
            B = math.exp(logB - inst.log_scale)
            c_lo, c_hi = _class_diff_interval(node.class_probs, y, np.array([y_prime]), eps)
            return float(_corner_products(A, B, c_lo, c_hi)[1][0])
        child = np.array([visit(c) for c in node.children])
        return float(_fold_sum(node.weights, child[:, None], eps)[0])

    gedts = [model] if isinstance(model, GeDT) else model.components
    per_tree = np.array([visit(g.root) for g in gedts])
    if isinstance(model, GeDT):
        result = per_tree[0]
    elif s.contaminate_root_mixture:
        result = float(_fold_sum(np.full(len(per_tree), 1.0 / len(per_tree)),
                                 per_tree[:, None], eps)[0])
    else:
        result = float(np.full(len(per_tree), 1.0 / len(per_tree)) @ per_tree)
    return float(result * math.exp(inst.log_scale))


def contaminate(model: Model, epsilon: float, rng: np.random.Generator,
                spec: ContaminationSpec | None = None):
    """Draw one random member of the contamination set and return a
    log-joint function for it: sum weights and multinomials move by
    (1-eps) p + eps Dirichlet, Gaussian means uniformly inside their
    interval. Useful for empirical soundness checks of certified levels."""
    s = _as_spec(epsilon, spec)
    eps = s.epsilon

    def perturb_probs(p: np.ndarray) -> np.ndarray:
        support = p > 0
        v = np.zeros_like(p)
        v[support] = rng.dirichlet(np.ones(int(support.sum())))
        return (1.0 - eps) * p + eps * v

    def perturb(node):
        if isinstance(node, LeafDensity):
            half = eps * s.gaussian_mean_scale * node.sigma
            mu = node.mu + rng.uniform(-1.0, 1.0, size=node.mu.shape) * half
            return LeafDensity(node.cell, mu, node.sigma, node.log_cell_mass,
                               [perturb_probs(q) for q in node.cat_probs],
                               perturb_probs(node.class_probs), node.truncation)
        children = [perturb(c) for c in node.children]
        return SumNode(node.feature, node.test, children, perturb_probs(node.weights))

    gedts = [model] if isinstance(model, GeDT) else model.components
    roots = [GeDT(perturb(g.root), g.schema, g.config) for g in gedts]
    if isinstance(model, GeDT):
        return lambda x: log_joint_per_class(roots[0], x)
    n_t = len(roots)
    top = np.full(n_t, 1.0 / n_t)
    if s.contaminate_root_mixture:
        top = perturb_probs(top)
    log_top = np.log(top)

    def log_joint_fn(x):
        parts = np.stack([log_joint_per_class(g, x) for g in roots])
        return logsumexp(parts + log_top[:, None], axis=0)

    return log_joint_fn
