"""Generative circuit form of a decision tree or forest.

A fitted tree becomes a tree-shaped circuit: each decision node turns into
a sum node whose weights are the fractions of training rows routed to each
child, and each leaf turns into a fully-factorised density (univariate
Normal per continuous feature, Multinomial per categorical feature, times
a class Multinomial) restricted to the leaf's cell. A forest becomes a
uniform mixture of these circuits, representing one joint density over
features and class. All queries run in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import log_ndtr, logsumexp

from .dataset import CATEGORICAL, CONTINUOUS, DataTable, Schema
from .forest import CategoryEquals, Decision, Leaf, RandomForest, Threshold, TreeNode

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@lru_cache(maxsize=64)
def _feature_positions(schema: Schema) -> tuple[np.ndarray, np.ndarray]:
    return schema.continuous_features(), schema.categorical_features()


@dataclass(frozen=True)
class LeafConfig:
    """Leaf density fitting knobs.

    alpha is the additive smoothing count for class and categorical
    factors. Normal stds are floored at
    max(sigma_min_abs, sigma_min_rel * global feature std). With
    truncation on, each Normal factor is renormalized by its mass inside
    the leaf cell so the circuit integrates to one; off reproduces the
    plain density-times-indicator form.
    """

    alpha: float = 1.0
    sigma_min_abs: float = 1e-6
    sigma_min_rel: float = 1e-3
    truncation: bool = True


def sigma_floor(table: DataTable, config: LeafConfig) -> np.ndarray:
    """Per-continuous-feature std floor derived from the whole table."""
    cont = table.schema.continuous_features()
    if len(cont) == 0:
        return np.empty(0)
    global_std = table.X[:, cont].std(axis=0)
    return np.maximum(config.sigma_min_abs, config.sigma_min_rel * global_std)


@dataclass
class Cell:
    """Axis-aligned region: (lo, hi] per continuous feature plus an
    allowed-category mask per categorical feature."""

    lo: np.ndarray            # over continuous features, cell order = schema order
    hi: np.ndarray
    allowed: list[np.ndarray]  # boolean masks over categorical features

    @staticmethod
    def full(schema: Schema) -> "Cell":
        n_cont = len(schema.continuous_features())
        allowed = [np.ones(c.cardinality, dtype=bool)
                   for c in schema.features if c.kind == CATEGORICAL]
        return Cell(np.full(n_cont, -np.inf), np.full(n_cont, np.inf), allowed)

    def split(self, cont_pos: dict[int, int], cat_pos: dict[int, int],
              feature: int, test) -> tuple["Cell", "Cell"]:
        """Children cells for a decision test (true branch first)."""
        left = Cell(self.lo.copy(), self.hi.copy(), [a.copy() for a in self.allowed])
        right = Cell(self.lo.copy(), self.hi.copy(), [a.copy() for a in self.allowed])
        if isinstance(test, Threshold):
            k = cont_pos[feature]
            left.hi[k] = min(left.hi[k], test.t)
            right.lo[k] = max(right.lo[k], test.t)
        else:
            k = cat_pos[feature]
            mask = np.zeros_like(left.allowed[k])
            mask[test.c] = True
            left.allowed[k] = left.allowed[k] & mask
            right.allowed[k] = right.allowed[k] & ~mask
        return left, right


def _log_normal_interval_mass(lo_z: np.ndarray, hi_z: np.ndarray) -> np.ndarray:
    """log(Phi(hi_z) - Phi(lo_z)), elementwise, stable in both tails."""
    lo_z = np.asarray(lo_z, dtype=np.float64)
    hi_z = np.asarray(hi_z, dtype=np.float64)
    out = np.empty(lo_z.shape)
    # mirror intervals on the positive side so the CDF arguments stay small
    flip = lo_z > 0
    a = np.where(flip, -hi_z, lo_z)
    b = np.where(flip, -lo_z, hi_z)
    log_cdf_b = log_ndtr(b)
    log_cdf_a = log_ndtr(a)
    with np.errstate(invalid="ignore"):
        out = log_cdf_b + np.log1p(-np.exp(log_cdf_a - log_cdf_b))
    # a == -inf gives exp(-inf)=0 cleanly; a == b cannot happen for real cells
    return out


@dataclass(eq=False)
class LeafDensity:
    """Fully-factorised density restricted to a leaf cell."""

    cell: Cell
    mu: np.ndarray                 # per continuous feature
    sigma: np.ndarray
    log_cell_mass: np.ndarray      # per-factor Normal mass inside the cell
    cat_probs: list[np.ndarray]    # per categorical feature, zero outside cell
    class_probs: np.ndarray
    truncation: bool

    def __post_init__(self):
        self._log_sigma = np.log(self.sigma)
        with np.errstate(divide="ignore"):
            self._cat_logp = [np.log(p) for p in self.cat_probs]
            self._class_logp = np.log(self.class_probs)

    @property
    def truncation_log_mass(self) -> float:
        return float(self.log_cell_mass.sum()) if self.truncation else 0.0

    @property
    def class_dist(self) -> np.ndarray:
        return self.class_probs

    def contains(self, x_cont: np.ndarray, observed: np.ndarray) -> bool:
        """Observed continuous coordinates inside the (lo, hi] box?"""
        if not observed.any():
            return True
        v = x_cont[observed]
        return bool(np.all((v > self.cell.lo[observed]) & (v <= self.cell.hi[observed])))

    def log_density_per_class(self, x_cont: np.ndarray, x_cat: np.ndarray) -> np.ndarray:
        """Vector of log p(x_obs, y) over all classes; NaN marks a missing
        feature, which is integrated out of the leaf."""
        total = 0.0
        obs = ~np.isnan(x_cont)
        if not self.contains(x_cont, obs):
            return np.full(self.class_probs.shape, -np.inf)
        if obs.any():
            z = (x_cont[obs] - self.mu[obs]) / self.sigma[obs]
            lp = -0.5 * z * z - self._log_sigma[obs] - LOG_SQRT_2PI
            if self.truncation:
                lp = lp - self.log_cell_mass[obs]
            total += lp.sum()
        if not self.truncation and not obs.all():
            # integrating an unnormalized factor over the cell leaves its mass
            total += self.log_cell_mass[~obs].sum()
        for k, code in enumerate(x_cat):
            if np.isnan(code):
                continue  # cell-restricted smoothing: factor sums to one
            total += self._cat_logp[k][int(code)]
        return total + self._class_logp


@dataclass(eq=False)
class SumNode:
    """Decision node in circuit form: a convex mixture whose children carry
    the decision test as edge indicators (left edge = test true)."""

    feature: int
    test: Threshold | CategoryEquals
    children: list
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("sum weights must be convex coefficients")
        self.weights = w
        with np.errstate(divide="ignore"):
            self._log_w = np.log(w)


CircuitNode = SumNode | LeafDensity


@dataclass(eq=False)
class GeDT:
    """One tree in circuit form: sum nodes inside, leaf densities below."""

    root: CircuitNode
    schema: Schema
    config: LeafConfig


@dataclass(eq=False)
class GeFPlus:
    """Uniform mixture of per-tree circuits: a single joint density."""

    components: list[GeDT]
    schema: Schema
    config: LeafConfig

    @property
    def n_trees(self) -> int:
        return len(self.components)


Model = GeDT | GeFPlus


# ---------------------------------------------------------------------------
# construction


def fit_leaf_density(X_rows: np.ndarray, y_rows: np.ndarray, cell: Cell,
                     schema: Schema, alpha: float = 1.0,
                     sigma_min=1e-6, truncation: bool = True) -> LeafDensity:
    """Fit the fully-factorised density of one leaf from its routed rows.

    Normals use the sample mean and std (floored at sigma_min, scalar or
    per-feature vector); categorical factors smooth counts by alpha over
    the cell's allowed categories only, so indicators never cut smoothed
    mass; the class factor smooths over all classes.
    """
    if len(X_rows) == 0:
        raise ValueError("cannot fit a leaf density on zero rows")
    cont = schema.continuous_features()
    cat = schema.categorical_features()
    sigma_min = np.broadcast_to(np.asarray(sigma_min, dtype=np.float64), (len(cont),))

    Xc = X_rows[:, cont]
    mu = Xc.mean(axis=0) if len(cont) else np.empty(0)
    sigma = np.maximum(Xc.std(axis=0), sigma_min) if len(cont) else np.empty(0)
    log_mass = (_log_normal_interval_mass((cell.lo - mu) / sigma, (cell.hi - mu) / sigma)
                if len(cont) else np.empty(0))

    cat_probs = []
    for k, f in enumerate(cat):
        card = schema.features[f].cardinality
        counts = np.bincount(X_rows[:, f].astype(np.intp), minlength=card).astype(np.float64)
        allowed = cell.allowed[k]
        probs = np.zeros(card)
        smoothed = counts[allowed] + alpha
        probs[allowed] = smoothed / smoothed.sum()
        cat_probs.append(probs)

    C = schema.n_classes
    cc = np.bincount(y_rows, minlength=C).astype(np.float64) + alpha
    class_probs = cc / cc.sum()
    return LeafDensity(cell, mu, sigma, log_mass, cat_probs, class_probs, truncation)


def _child_count(node: TreeNode) -> int:
    return node.n_routed if isinstance(node, Decision) else node.n


def convert_tree(tree: TreeNode, table: DataTable, config: LeafConfig | None = None) -> GeDT:
    """Rebuild a fitted tree as a circuit over the table it was fit on.

    Decision nodes become sum nodes weighted by routed-sample fractions;
    leaves become densities fit on their recorded row indices.
    """
    config = config or LeafConfig()
    schema = table.schema
    s_min = sigma_floor(table, config)
    cont = schema.continuous_features()
    cat = schema.categorical_features()
    cont_pos = {int(f): k for k, f in enumerate(cont)}
    cat_pos = {int(f): k for k, f in enumerate(cat)}

    def build(node: TreeNode, cell: Cell) -> CircuitNode:
        if isinstance(node, Leaf):
            if len(node.row_indices) != node.n:
                raise ValueError("leaf row_indices inconsistent with its count")
            return fit_leaf_density(table.X[node.row_indices], table.labels[node.row_indices],
                                    cell, schema, config.alpha, s_min, config.truncation)
        n_left = _child_count(node.left)
        n_right = _child_count(node.right)
        if n_left + n_right != node.n_routed:
            raise ValueError("decision node count does not match its children")
        left_cell, right_cell = cell.split(cont_pos, cat_pos, node.feature, node.test)
        children = [build(node.left, left_cell), build(node.right, right_cell)]
        w = np.array([n_left, n_right], dtype=np.float64) / node.n_routed
        return SumNode(node.feature, node.test, children, w)

    return GeDT(build(tree, Cell.full(schema)), schema, config)


def convert_forest(forest: RandomForest, table: DataTable,
                   config: LeafConfig | None = None) -> GeFPlus:
    """Convert every tree over its own bootstrap rows and mix uniformly."""
    config = config or LeafConfig()
    gedts = [convert_tree(t, table.subset(idx), config)
             for t, idx in zip(forest.trees, forest.bootstrap_rows)]
    return build_gef_plus(gedts)


def build_gef_plus(gedts: list[GeDT]) -> GeFPlus:
    if not gedts:
        raise ValueError("need at least one component")
    schema = gedts[0].schema
    config = gedts[0].config
    for g in gedts[1:]:
        if g.schema != schema:
            raise ValueError("components disagree on schema")
        if g.config != config:
            raise ValueError("components disagree on leaf config")
    return GeFPlus(list(gedts), schema, config)


# ---------------------------------------------------------------------------
# inference


def _split_x(schema: Schema, x) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (schema.n_features,):
        raise ValueError(f"expected {schema.n_features} feature values")
    cont, cat = _feature_positions(schema)
    return x[cont], x[cat]


def _node_log_per_class(node: CircuitNode, x: np.ndarray,
                        x_cont: np.ndarray, x_cat: np.ndarray) -> np.ndarray:
    # iterative descent along observed splits; recursion only where a
    # split feature is missing and both branches contribute
    acc = 0.0
    while isinstance(node, SumNode):
        v = x[node.feature]
        if np.isnan(v):
            lo = node._log_w[0] + _node_log_per_class(node.children[0], x, x_cont, x_cat)
            hi = node._log_w[1] + _node_log_per_class(node.children[1], x, x_cont, x_cat)
            return acc + np.logaddexp(lo, hi)
        i = 0 if node.test.evaluate(v) else 1
        acc += node._log_w[i]
        node = node.children[i]
    return acc + node.log_density_per_class(x_cont, x_cat)


def log_joint_per_class(model: Model, x) -> np.ndarray:
    """log p(x_obs, y) for every class y in one circuit pass. Missing
    features (NaN) are marginalized exactly."""
    schema = model.schema
    x = np.asarray(x, dtype=np.float64)
    x_cont, x_cat = _split_x(schema, x)
    if isinstance(model, GeDT):
        return _node_log_per_class(model.root, x, x_cont, x_cat)
    parts = np.stack([_node_log_per_class(g.root, x, x_cont, x_cat)
                      for g in model.components])
    return logsumexp(parts, axis=0) - math.log(model.n_trees)


def log_joint(model: Model, x, y: int) -> float:
    """log p(x_obs, y); x may be partially observed (NaN entries)."""
    C = model.schema.n_classes
    if not 0 <= int(y) < C:
        raise ValueError(f"label {y} outside [0, {C})")
    return float(log_joint_per_class(model, x)[int(y)])


def log_marginal(model: Model, x) -> float:
    """log p(x_obs) = logsumexp over class labels."""
    return float(logsumexp(log_joint_per_class(model, x)))


def posterior(model: Model, x) -> np.ndarray:
    """Normalized p(y | x_obs). Raises on impossible evidence."""
    lj = log_joint_per_class(model, x)
    lz = logsumexp(lj)
    if not np.isfinite(lz):
        raise ValueError("evidence has zero density under the model")
    return np.exp(lj - lz)


def predict(model: Model, x) -> int:
    """argmax_y p(y | x_obs), ties to the lowest class index."""
    lj = log_joint_per_class(model, x)
    if not np.isfinite(logsumexp(lj)):
        raise ValueError("evidence has zero density under the model")
    return int(np.argmax(lj))


def routed_path(gedt: GeDT, x) -> tuple[list[tuple[SumNode, int]], LeafDensity]:
    """Root-to-leaf path for fully observed x: the only path whose edge
    indicators are all satisfied. Returns ((node, taken child index)...,
    leaf)."""
    x = np.asarray(x, dtype=np.float64)
    if np.isnan(x).any():
        raise ValueError("routed_path needs a fully observed instance")
    path = []
    node = gedt.root
    while isinstance(node, SumNode):
        i = 0 if node.test.evaluate(x[node.feature]) else 1
        path.append((node, i))
        node = node.children[i]
    return path, node


def iter_circuit_nodes(model: Model):
    roots = [model.root] if isinstance(model, GeDT) else [g.root for g in model.components]
    stack = list(roots)
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, SumNode):
            stack.extend(node.children)
