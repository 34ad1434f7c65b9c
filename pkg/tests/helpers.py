"""Shared builders and independent oracles for the test suite."""

from __future__ import annotations

import itertools
import math

import numpy as np

from gefc.circuit import (Cell, GeDT, GeFPlus, LeafConfig, LeafDensity,
                          SumNode, _log_normal_interval_mass, routed_path)
from gefc.dataset import CATEGORICAL, CONTINUOUS, Column, DataTable, Schema
from gefc.forest import Threshold


def make_schema(n_cont: int, cat_cards=(), n_classes: int = 2) -> Schema:
    cols = [Column(f"c{j}", CONTINUOUS) for j in range(n_cont)]
    cols += [Column(f"k{j}", CATEGORICAL, card) for j, card in enumerate(cat_cards)]
    cols.append(Column("y", CATEGORICAL, n_classes))
    return Schema(tuple(cols), len(cols) - 1)


def make_table(rng, n: int, n_cont: int, cat_cards=(), n_classes: int = 2,
               informative: bool = True) -> DataTable:
    """Random mixed-type table; labels depend on the features when
    informative so trees have something to find."""
    schema = make_schema(n_cont, cat_cards, n_classes)
    parts = [rng.normal(0, 1, size=(n, n_cont))]
    for card in cat_cards:
        parts.append(rng.integers(0, card, size=(n, 1)).astype(float))
    X = np.hstack(parts) if parts else np.empty((n, 0))
    if informative and n_cont:
        score = X[:, 0] + 0.5 * rng.normal(size=n)
        edges = np.quantile(score, np.linspace(0, 1, n_classes + 1)[1:-1])
        y = np.searchsorted(edges, score)
    else:
        y = rng.integers(0, n_classes, size=n)
    return DataTable(schema, X, y.astype(np.int64))


# ---------------------------------------------------------------------------
# exhaustive split-search oracle


def brute_force_best_split(table: DataTable, candidate_features, rows=None):
    """Enumerate every (feature, test) pair directly from row masks and
    keep the first strict minimum of the weighted gini, scanning features
    ascending and tests ascending."""
    rows = np.arange(table.n) if rows is None else np.asarray(rows)
    X = table.X[rows]
    y = table.labels[rows]
    n = len(rows)
    C = table.schema.n_classes
    kinds = table.schema.feature_kinds()

    def weighted(mask):
        nl = float(mask.sum())
        nr = n - nl
        if nl == 0 or nr == 0:
            return None
        cl = np.bincount(y[mask], minlength=C).astype(np.float64)
        cr = np.bincount(y[~mask], minlength=C).astype(np.float64)
        gl = 1.0 - ((cl / nl) ** 2).sum()
        gr = 1.0 - ((cr / nr) ** 2).sum()
        return (nl / n) * gl + (nr / n) * gr

    best = None
    for f in sorted(int(f) for f in candidate_features):
        x = X[:, f]
        if kinds[f] == CONTINUOUS:
            vals = np.unique(x)
            cands = [(vals[i] + vals[i + 1]) / 2 for i in range(len(vals) - 1)]
            masks = [x <= t for t in cands]
        else:
            card = table.schema.features[f].cardinality
            cands = list(range(card))
            masks = [x.astype(int) == c for c in cands]
        for value, mask in zip(cands, masks):
            w = weighted(mask)
            if w is None:
                continue
            cand = (w, f, float(value))
            if best is None or cand < best:
                best = cand
    return best  # (impurity, feature, value) or None


# ---------------------------------------------------------------------------
# hand-built random circuits


def random_gedt(rng, n_cont=2, n_classes=3, max_sums=3, truncation=None,
                box=3.0, sigma_range=(0.3, 1.5)) -> GeDT:
    """A random tree-shaped circuit over continuous features: axis-aligned
    threshold splits of a finite working box, Dirichlet weights and class
    distributions, Normal leaf factors."""
    schema = make_schema(n_cont, (), n_classes)
    truncation = bool(rng.integers(0, 2)) if truncation is None else truncation
    n_sums = int(rng.integers(0, max_sums + 1))

    def make_leaf(cell: Cell) -> LeafDensity:
        mu = rng.uniform(-box, box, size=n_cont)
        sigma = rng.uniform(*sigma_range, size=n_cont)
        mass = _log_normal_interval_mass((cell.lo - mu) / sigma, (cell.hi - mu) / sigma)
        class_probs = rng.dirichlet(np.ones(n_classes) * 2.0)
        return LeafDensity(cell, mu, sigma, mass, [], class_probs, truncation)

    def build(cell: Cell, budget: int):
        if budget <= 0 or n_cont == 0:
            return make_leaf(cell), 0
        f = int(rng.integers(0, n_cont))
        lo = max(cell.lo[f], -box)
        hi = min(cell.hi[f], box)
        if hi - lo < 1e-3:
            return make_leaf(cell), 0
        t = float(rng.uniform(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo)))
        left_cell = Cell(cell.lo.copy(), cell.hi.copy(), [])
        right_cell = Cell(cell.lo.copy(), cell.hi.copy(), [])
        left_cell.hi[f] = t
        right_cell.lo[f] = t
        used = 1
        split_left = int(rng.integers(0, 2))
        lbudget = (budget - used) if split_left else 0
        left, ul = build(left_cell, lbudget)
        right, ur = build(right_cell, budget - used - ul)
        w = rng.dirichlet(np.ones(2) * 3.0)
        return SumNode(f, Threshold(t), [left, right], w), used + ul + ur

    root, _ = build(Cell.full(schema), n_sums)
    return GeDT(root, schema, LeafConfig(truncation=truncation))


def random_instance(rng, model, box=3.0) -> np.ndarray:
    m = model.schema.n_features
    return rng.uniform(-box, box, size=m)


# ---------------------------------------------------------------------------
# vertex-enumeration credal oracle


def _leaf_contains_full(leaf: LeafDensity, x_cont, x_cat) -> bool:
    ok = np.all((x_cont > leaf.cell.lo) & (x_cont <= leaf.cell.hi))
    for k, code in enumerate(x_cat.astype(int)):
        ok = ok and bool(leaf.cell.allowed[k][code])
    return bool(ok)


def _dirichlet_vertices(p: np.ndarray, eps: float, support=None):
    """All vertices of {(1-eps) p + eps v} with v a distribution over the
    support of p (or the given mask)."""
    if eps == 0.0:
        return [p]
    support = p > 0 if support is None else support
    out = []
    for j in np.nonzero(support)[0]:
        v = np.zeros_like(p)
        v[j] = 1.0
        out.append((1.0 - eps) * p + eps * v)
    return out


def _gauss_candidates(mu, sigma, x, eps, scale):
    if eps == 0.0:
        return [mu]
    h = eps * scale * sigma
    return [mu - h, mu + h, np.clip(x, mu - h, mu + h)]


def oracle_credal_max_diff(model, x, y, y_prime, eps, contaminate_root=True,
                           gaussian_scale=1.0) -> float:
    """Brute-force maximum of p_w(x, y') - p_w(x, y): enumerate candidate
    parameter choices per block (simplex vertices; Gaussian interval
    endpoints and the clip point) and evaluate the contaminated circuit
    directly, product-of-factors, for every combination.

    Only routed leaves are enumerated: any other leaf's cell excludes x,
    making its indicator (hence its value) zero for every parameter choice,
    which the direct evaluation below reproduces."""
    x = np.asarray(x, dtype=np.float64)
    schema = model.schema
    cont = schema.continuous_features()
    cat = schema.categorical_features()
    x_cont, x_cat = x[cont], x[cat]
    gedts = [model] if isinstance(model, GeDT) else model.components

    blocks = []   # list of (key, candidate list)

    def collect_sums(node):
        if isinstance(node, SumNode):
            blocks.append((("w", id(node)), _dirichlet_vertices(node.weights, eps)))
            for c in node.children:
                collect_sums(c)

    routed_leaves = []
    for g in gedts:
        collect_sums(g.root)
        leaf = routed_path(g, x)[1]
        routed_leaves.append(leaf)
        for i in range(len(leaf.mu)):
            blocks.append((("mu", id(leaf), i),
                           _gauss_candidates(leaf.mu[i], leaf.sigma[i], x_cont[i],
                                             eps, gaussian_scale)))
        for k in range(len(leaf.cat_probs)):
            blocks.append((("cat", id(leaf), k),
                           _dirichlet_vertices(leaf.cat_probs[k], eps,
                                               support=leaf.cell.allowed[k])))
        blocks.append((("class", id(leaf)), _dirichlet_vertices(leaf.class_probs, eps)))

    top = np.full(len(gedts), 1.0 / len(gedts))
    if isinstance(model, GeFPlus) and contaminate_root and len(gedts) > 1:
        blocks.append((("top",), _dirichlet_vertices(top, eps)))

    def eval_leaf(leaf, assign):
        if not _leaf_contains_full(leaf, x_cont, x_cat):
            return 0.0
        val = 1.0
        for i in range(len(leaf.mu)):
            mu = assign.get(("mu", id(leaf), i), leaf.mu[i])
            s = leaf.sigma[i]
            val *= math.exp(-0.5 * ((x_cont[i] - mu) / s) ** 2) / (s * math.sqrt(2 * math.pi))
            if leaf.truncation:
                val /= math.exp(leaf.log_cell_mass[i])
        for k, code in enumerate(x_cat.astype(int)):
            q = assign.get(("cat", id(leaf), k), leaf.cat_probs[k])
            val *= q[code]
        qc = assign.get(("class", id(leaf)), leaf.class_probs)
        return val * (qc[y_prime] - qc[y])

    def eval_node(node, assign):
        if isinstance(node, LeafDensity):
            return eval_leaf(node, assign)
        w = assign.get(("w", id(node)), node.weights)
        return sum(wi * eval_node(c, assign) for wi, c in zip(w, node.children))

    best = -math.inf
    keys = [k for k, _ in blocks]
    for combo in itertools.product(*(cands for _, cands in blocks)):
        assign = dict(zip(keys, combo))
        tw = assign.get(("top",), top)
        total = sum(twj * eval_node(g.root, assign) for twj, g in zip(tw, gedts))
        best = max(best, total)
    return best
