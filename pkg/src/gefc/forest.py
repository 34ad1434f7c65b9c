"""Random forest learning: gini split search, deep trees grown to purity, voting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import CATEGORICAL, CONTINUOUS, DataTable, Schema, bootstrap_indices


@dataclass(frozen=True)
class Threshold:
    """Continuous test: true when value <= t (true branch goes left)."""
    t: float

    def evaluate(self, value: float) -> bool:
        return value <= self.t


@dataclass(frozen=True)
class CategoryEquals:
    """Categorical one-vs-rest test: true when code == c."""
    c: int

    def evaluate(self, value: float) -> bool:
        return int(value) == self.c


@dataclass
class Leaf:
    class_counts: np.ndarray
    n: int
    row_indices: np.ndarray

    @property
    def prediction(self) -> int:
        return int(np.argmax(self.class_counts))


@dataclass
class Decision:
    feature: int
    test: Threshold | CategoryEquals
    left: "Decision | Leaf | None"
    right: "Decision | Leaf | None"
    n_routed: int


TreeNode = Decision | Leaf


@dataclass
class RandomForest:
    trees: list[TreeNode]
    bootstrap_rows: list[np.ndarray]
    mtry: int
    seed: int
    schema: Schema

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def default_mtry(m: int) -> int:
    return int(math.ceil(math.sqrt(m)))


def gini_impurity(class_counts) -> float:
    """1 - sum_c p_c^2 over the class proportions."""
    counts = np.asarray(class_counts, dtype=np.float64)
    if np.any(counts < 0):
        raise ValueError("negative class count")
    total = counts.sum()
    if total <= 0:
        raise ValueError("gini of an empty node is undefined")
    return float(1.0 - ((counts / total) ** 2).sum())


def _scan_continuous(x, yv, n_classes):
    """Candidate thresholds (midpoints of consecutive distinct sorted values)
    with their weighted child impurities. Returns (thresholds, impurities)."""
    n = len(x)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ys = yv[order]
    boundary = np.nonzero(xs[:-1] < xs[1:])[0]
    if len(boundary) == 0:
        return None
    onehot = np.zeros((n, n_classes), dtype=np.float64)
    onehot[np.arange(n), ys] = 1.0
    cum = np.cumsum(onehot, axis=0)
    total = cum[-1]
    cl = cum[boundary]
    cr = total - cl
    nl = (boundary + 1).astype(np.float64)
    nr = n - nl
    gl = 1.0 - ((cl / nl[:, None]) ** 2).sum(axis=1)
    gr = 1.0 - ((cr / nr[:, None]) ** 2).sum(axis=1)
    imp = (nl / n) * gl + (nr / n) * gr
    thresholds = (xs[boundary] + xs[boundary + 1]) / 2
    return thresholds, imp


def _scan_categorical(x, yv, cardinality, n_classes):
    """One-vs-rest tests for every category present (and not exhaustive)."""
    n = len(x)
    codes = x.astype(np.intp)
    cnt = np.zeros((cardinality, n_classes), dtype=np.float64)
    np.add.at(cnt, (codes, yv), 1.0)
    n_per_code = cnt.sum(axis=1)
    valid = np.nonzero((n_per_code > 0) & (n_per_code < n))[0]
    if len(valid) == 0:
        return None
    total = cnt.sum(axis=0)
    cl = cnt[valid]
    cr = total - cl
    nl = n_per_code[valid]
    nr = n - nl
    gl = 1.0 - ((cl / nl[:, None]) ** 2).sum(axis=1)
    gr = 1.0 - ((cr / nr[:, None]) ** 2).sum(axis=1)
    imp = (nl / n) * gl + (nr / n) * gr
    return valid, imp


class _SplitContext:
    """Schema facts hoisted out of the per-node split loop."""

    __slots__ = ("X", "y", "is_continuous", "cards", "n_classes")

    def __init__(self, table: DataTable):
        self.X = table.X
        self.y = table.labels
        kinds = table.schema.feature_kinds()
        self.is_continuous = np.array([k == CONTINUOUS for k in kinds])
        self.cards = [c.cardinality for c in table.schema.features]
        self.n_classes = table.schema.n_classes


def _best_split_ctx(ctx: _SplitContext, candidate_features, rows):
    yv = ctx.y[rows]
    best = None  # (impurity, feature, value)
    for f in sorted(int(f) for f in candidate_features):
        x = ctx.X[rows, f]
        if ctx.is_continuous[f]:
            scanned = _scan_continuous(x, yv, ctx.n_classes)
        else:
            scanned = _scan_categorical(x, yv, ctx.cards[f], ctx.n_classes)
        if scanned is None:
            continue
        values, imp = scanned
        k = int(np.argmin(imp))
        cand = (float(imp[k]), f, float(values[k]))
        if best is None or cand < best:
            best = cand
    if best is None:
        return None
    imp, f, value = best
    test = Threshold(value) if ctx.is_continuous[f] else CategoryEquals(int(value))
    return f, test, imp


def best_split(table: DataTable, candidate_features, row_indices=None):
    """Minimize n_L/n * gini(L) + n_R/n * gini(R) over all candidate tests.

    Continuous features contribute thresholds at midpoints of consecutive
    distinct sorted values, categorical ones a one-vs-rest test per present
    category. Ties break on (lowest feature index, lowest threshold/code).
    Returns (feature, test, weighted_impurity) or None when no test
    separates the rows.
    """
    rows = np.arange(table.n, dtype=np.intp) if row_indices is None else np.asarray(row_indices, dtype=np.intp)
    if len(rows) == 0:
        raise ValueError("best_split on empty row set")
    return _best_split_ctx(_SplitContext(table), candidate_features, rows)


def _test_mask(x: np.ndarray, test) -> np.ndarray:
    if isinstance(test, Threshold):
        return x <= test.t
    return x.astype(np.intp) == test.c


def fit_tree(table: DataTable, mtry: int | None = None, seed: int = 0) -> TreeNode:
    """Grow one deep tree: split until each leaf is class-pure or a single
    sample (or no test separates its rows). Feature subsets are drawn per
    node from an RNG keyed on (seed, preorder node id), so growth is a pure
    function of (table, mtry, seed).

    When the mtry sample yields no valid split, the search falls back to
    all features; only truly unsplittable nodes become impure leaves.
    """
    if table.n < 1:
        raise ValueError("cannot fit a tree on an empty table")
    m = table.m
    if mtry is None:
        mtry = default_mtry(m)
    if not 1 <= mtry <= m:
        raise ValueError(f"mtry must be in [1, {m}]")
    y = table.labels
    C = table.schema.n_classes
    all_features = np.arange(m)
    ctx = _SplitContext(table)

    root_box: list = [None]
    # stack of (row index array, container, slot); right pushed first so
    # pops occur in preorder and node ids are reproducible
    stack = [(np.arange(table.n, dtype=np.intp), root_box, 0)]
    node_id = 0
    while stack:
        rows, box, slot = stack.pop()
        this_id = node_id
        node_id += 1
        counts = np.bincount(y[rows], minlength=C)
        split = None
        if len(rows) > 1 and counts.max() < len(rows):
            rng = np.random.default_rng([seed, this_id])
            cand = rng.choice(m, size=mtry, replace=False)
            split = _best_split_ctx(ctx, cand, rows)
            if split is None and mtry < m:
                split = _best_split_ctx(ctx, all_features, rows)
        if split is None:
            box[slot] = Leaf(counts, len(rows), rows)
            continue
        f, test, _ = split
        mask = _test_mask(table.X[rows, f], test)
        node = Decision(f, test, None, None, len(rows))
        box[slot] = node
        holder = [None, None]
        node.left = holder  # placeholders swapped below
        node.right = holder
        stack.append((rows[~mask], holder, 1))
        stack.append((rows[mask], holder, 0))
    # resolve placeholder holders into child links
    _wire_children(root_box[0])
    return root_box[0]


def _wire_children(root):
    stack = [root]
    while stack:
        node = stack.pop()
        if isinstance(node, Decision):
            holder = node.left
            node.left, node.right = holder[0], holder[1]
            stack.append(node.left)
            stack.append(node.right)


def fit_forest(table: DataTable, n_trees: int = 30, mtry: int | None = None,
               seed: int = 0) -> RandomForest:
    """Fit n_trees deep trees, each on an independent bootstrap.

    Per-tree seeds derive only from (seed, tree index), so the result does
    not depend on execution order.
    """
    if table.n < 1:
        raise ValueError("cannot fit a forest on an empty table")
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    if mtry is None:
        mtry = default_mtry(table.m)
    if seed < 0:
        raise ValueError("seed must be non-negative")
    trees = []
    boots = []
    for t in range(n_trees):
        boot_seed, tree_seed = (int(s) for s in np.random.SeedSequence([seed, t]).generate_state(2))
        idx = bootstrap_indices(table.n, boot_seed)
        trees.append(fit_tree(table.subset(idx), mtry=mtry, seed=tree_seed))
        boots.append(idx)
    return RandomForest(trees, boots, mtry, seed, table.schema)


# ---------------------------------------------------------------------------
# prediction


def route(tree: TreeNode, x: np.ndarray) -> Leaf:
    """Follow the decision tests down to x's leaf. x must be fully observed."""
    node = tree
    while isinstance(node, Decision):
        v = x[node.feature]
        if np.isnan(v):
            raise ValueError(f"feature {node.feature} is missing; tree routing needs full observations")
        node = node.left if node.test.evaluate(v) else node.right
    return node


def predict_tree(tree: TreeNode, x) -> int:
    """Majority class of x's leaf (ties -> lowest class index)."""
    return route(tree, np.asarray(x, dtype=np.float64)).prediction


def predict_forest(forest: RandomForest, x, aggregation: str = "vote") -> int:
    """Aggregate per-tree predictions: 'vote' majority or 'prob' averaging
    of leaf class proportions. Ties -> lowest class index."""
    x = np.asarray(x, dtype=np.float64)
    C = forest.schema.n_classes
    if aggregation == "vote":
        votes = np.bincount([predict_tree(t, x) for t in forest.trees], minlength=C)
        return int(np.argmax(votes))
    if aggregation == "prob":
        probs = np.zeros(C)
        for t in forest.trees:
            leaf = route(t, x)
            probs += leaf.class_counts / leaf.n
        return int(np.argmax(probs))
    raise ValueError(f"unknown aggregation {aggregation!r}")


def predict_table(tree_or_forest, table: DataTable, **kw) -> np.ndarray:
    if isinstance(tree_or_forest, RandomForest):
        return np.array([predict_forest(tree_or_forest, x, **kw) for x in table.X])
    return np.array([predict_tree(tree_or_forest, x) for x in table.X])


# ---------------------------------------------------------------------------
# structure traversal


def iter_nodes(tree: TreeNode):
    """Yield (node, depth) over the whole tree, preorder."""
    stack = [(tree, 0)]
    while stack:
        node, d = stack.pop()
        yield node, d
        if isinstance(node, Decision):
            stack.append((node.right, d + 1))
            stack.append((node.left, d + 1))


def node_count(tree: TreeNode) -> int:
    return sum(1 for _ in iter_nodes(tree))


def tree_depth(tree: TreeNode) -> int:
    """Maximum root-to-leaf edge count."""
    return max(d for node, d in iter_nodes(tree) if isinstance(node, Leaf))


def mean_leaf_depth(tree: TreeNode) -> float:
    """Average depth of a training sample's leaf (weighted by leaf size)."""
    tot = 0.0
    n = 0
    for node, d in iter_nodes(tree):
        if isinstance(node, Leaf):
            tot += d * node.n
            n += node.n
    return tot / n
