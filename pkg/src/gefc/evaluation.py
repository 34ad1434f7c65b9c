"""Outlier scoring, detection baselines, ROC AUC, and robustness curves."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .circuit import Model, log_joint_per_class
from .dataset import CATEGORICAL, DataTable
from .robustness import ContaminationSpec, robustness_epsilon


@dataclass(frozen=True)
class ScoreSeries:
    """Per-row scores with their row ids and a provenance tag. Lower
    log-density means more anomalous; -inf marks zero-density rows."""

    scores: np.ndarray
    row_ids: np.ndarray
    tag: str = ""

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        ids = np.asarray(self.row_ids, dtype=np.int64)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "row_ids", ids)
        if s.shape != ids.shape:
            raise ValueError("scores and row_ids must align")
        if np.isnan(s).any():
            raise ValueError("scores must be real or -inf, not NaN")


def outlier_scores(model: Model, table: DataTable, tag: str = "") -> ScoreSeries:
    """log p(x) per row: the marginal-density outlier signal."""
    scores = np.array([logsumexp(log_joint_per_class(model, x)) for x in table.X])
    return ScoreSeries(scores, np.arange(table.n), tag)


def confidence_scores(model: Model, table: DataTable, tag: str = "") -> ScoreSeries:
    """max_y p(y | x) per row: the predicted-class-confidence baseline."""
    out = np.empty(table.n)
    for i, x in enumerate(table.X):
        lj = log_joint_per_class(model, x)
        out[i] = np.exp(lj.max() - logsumexp(lj))
    return ScoreSeries(out, np.arange(table.n), tag)


# ---------------------------------------------------------------------------
# Gaussian KDE baseline


@dataclass(frozen=True)
class KdeModel:
    """Product-Gaussian kernel density over an embedded feature matrix."""

    points: np.ndarray
    bandwidth: np.ndarray
    categorical_positions: np.ndarray
    cardinalities: tuple[int, ...]

    def __post_init__(self):
        if np.any(self.bandwidth <= 0):
            raise ValueError("bandwidths must be positive")


def _one_hot_embed(table: DataTable) -> np.ndarray:
    """Continuous columns as-is; categorical columns one-hot expanded."""
    blocks = []
    for j, col in enumerate(table.schema.features):
        if col.kind == CATEGORICAL:
            codes = table.X[:, j].astype(np.intp)
            oh = np.zeros((table.n, col.cardinality))
            oh[np.arange(table.n), codes] = 1.0
            blocks.append(oh)
        else:
            blocks.append(table.X[:, j:j + 1])
    return np.hstack(blocks)


def kde_fit(table: DataTable, bandwidth_rule: str = "silverman") -> KdeModel:
    """Fit the baseline KDE; bandwidths from Silverman's rule per dimension."""
    if table.n < 2:
        raise ValueError("KDE needs at least two rows")
    if bandwidth_rule != "silverman":
        raise ValueError(f"unknown bandwidth rule {bandwidth_rule!r}")
    pts = _one_hot_embed(table)
    n, d = pts.shape
    sd = pts.std(axis=0)
    factor = (4.0 / ((d + 2.0) * n)) ** (1.0 / (d + 4.0))
    bw = np.maximum(sd * factor, 1e-6)
    cat_pos = table.schema.categorical_features()
    cards = tuple(int(table.schema.features[j].cardinality) for j in cat_pos)
    return KdeModel(pts, bw, cat_pos, cards)


def _kde_embed_x(kde: KdeModel, x: np.ndarray) -> np.ndarray:
    parts = []
    cat = set(int(p) for p in kde.categorical_positions)
    k = 0
    for j in range(len(x)):
        if j in cat:
            card = kde.cardinalities[k]
            k += 1
            oh = np.zeros(card)
            oh[int(x[j])] = 1.0
            parts.append(oh)
        else:
            parts.append(np.array([x[j]]))
    return np.concatenate(parts)


def kde_log_pdf(kde: KdeModel, x) -> float:
    """Log density at one (fully observed) instance."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1 and len(x) != kde.points.shape[1]:
        x = _kde_embed_x(kde, x)
    z = (x[None, :] - kde.points) / kde.bandwidth
    log_kernels = (-0.5 * z * z - np.log(kde.bandwidth) - 0.5 * np.log(2.0 * np.pi)).sum(axis=1)
    return float(logsumexp(log_kernels) - np.log(len(kde.points)))


def kde_scores(kde: KdeModel, table: DataTable, tag: str = "") -> ScoreSeries:
    scores = np.array([kde_log_pdf(kde, x) for x in table.X])
    return ScoreSeries(scores, np.arange(table.n), tag)


# ---------------------------------------------------------------------------
# ROC AUC


def roc_auc(positives, negatives) -> float:
    """P(score+ > score-) + 0.5 P(equal), by sorted sweep in O(k log k).

    The numerator is assembled from half-integer pair counts, so
    roc_auc(A, B) and roc_auc(B, A) share an exactly complementary
    numerator.
    """
    pos = np.asarray(positives, dtype=np.float64)
    neg = np.asarray(negatives, dtype=np.float64)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("both score sets must be non-empty")
    neg_sorted = np.sort(neg)
    below = np.searchsorted(neg_sorted, pos, side="left")
    below_or_equal = np.searchsorted(neg_sorted, pos, side="right")
    numerator = below.sum() + 0.5 * (below_or_equal - below).sum()
    return float(numerator / (len(pos) * len(neg)))


# ---------------------------------------------------------------------------
# robustness-vs-accuracy curves


@dataclass(frozen=True)
class CurvePoint:
    threshold: float
    acc_below: float | None
    acc_above: float | None
    n_below: int
    n_above: int


def default_threshold_grid(step: float = 0.05) -> np.ndarray:
    return np.round(np.arange(0.0, 1.0 + step / 2, step), 10)


def robustness_accuracy_curves(model: Model, table: DataTable, thresholds=None,
                               min_bucket: int = 30, tol: float = 1e-3,
                               spec: ContaminationSpec | None = None,
                               precomputed=None) -> list[CurvePoint]:
    """Accuracy of rows whose per-prediction epsilon-robustness falls below
    (strictly) and above each threshold; a bucket's accuracy is withheld
    (None) when it holds fewer than min_bucket rows.

    precomputed may carry (epsilon_star array, predicted label array) to
    reuse a previous per-row robustness pass.
    """
    thresholds = default_threshold_grid() if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    y = table.labels
    if precomputed is None:
        results = [robustness_epsilon(model, x, tol, spec) for x in table.X]
        eps_star = np.array([r.epsilon_star for r in results])
        y_hat = np.array([r.predicted_label for r in results])
    else:
        eps_star, y_hat = (np.asarray(a) for a in precomputed)
    correct = y_hat == y
    points = []
    for t in thresholds:
        below = eps_star < t
        nb = int(below.sum())
        na = int(table.n - nb)
        acc_b = float(correct[below].mean()) if nb >= min_bucket else None
        acc_a = float(correct[~below].mean()) if na >= min_bucket else None
        points.append(CurvePoint(float(t), acc_b, acc_a, nb, na))
    return points


def rank_extremes(series: ScoreSeries, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Ids of the k lowest- and k highest-scoring rows; ties order by id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    k = min(k, len(series.scores))
    asc = np.lexsort((series.row_ids, series.scores))
    desc = np.lexsort((series.row_ids, -series.scores))
    return series.row_ids[asc[:k]].copy(), series.row_ids[desc[:k]].copy()
