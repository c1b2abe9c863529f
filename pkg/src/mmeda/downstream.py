"""Downstream evaluation of frozen representations.

Regression is ordinary least squares, classification a bagged forest of
depth-limited Gini trees. Both are fit on training rows only and scored on
held-out rows. The positive class is label 1.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

__all__ = [
    "LinearRegressor",
    "linreg_fit",
    "ForestConfig",
    "Tree",
    "RandomForest",
    "rf_fit",
    "MetricsReport",
    "classification_metrics",
    "regression_mse",
    "evaluate",
    "format_table",
    "TABLE_COLUMNS",
]

TABLE_COLUMNS = ("F1", "Accuracy", "Precision", "Recall", "MSE")


# -- linear regression --------------------------------------------------------


@dataclass
class LinearRegressor:
    coef: np.ndarray
    intercept: float

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.coef + self.intercept


def linreg_fit(x: np.ndarray, y: np.ndarray, ridge: float = 1e-8) -> LinearRegressor:
    """Least squares with intercept via centred normal equations plus ``ridge·I``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValueError(f"expected X N×d and y N, got {x.shape} and {y.shape}")
    n, d = x.shape
    if n <= 1 and np.all(x == x[:1]):
        raise ValueError("degenerate input: need at least two distinct rows")
    xm = x.mean(axis=0)
    ym = y.mean()
    xc = x - xm
    gram = xc.T @ xc + ridge * np.eye(d)
    coef = np.linalg.solve(gram, xc.T @ (y - ym))
    return LinearRegressor(coef, float(ym - xm @ coef))


# -- random forest ---------------------------------------------------------------


@dataclass
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 2
    seed: int = 0
    # features tried per node; None means floor(sqrt(d)), at least 1
    max_features: int | None = None


@dataclass
class Tree:
    """Array-encoded binary tree; leaves have ``feature == -1``."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[int] = field(default_factory=list)  # majority class at the node

    def _add(self, value: int) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.value) - 1

    def depth(self, node: int = 0) -> int:
        if self.feature[node] == -1:
            return 0
        return 1 + max(self.depth(self.left[node]), self.depth(self.right[node]))

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=np.int64)
        feat = np.array(self.feature)
        thr = np.array(self.threshold)
        left = np.array(self.left)
        right = np.array(self.right)
        for _ in range(len(self.value)):
            f = feat[node]
            inner = f >= 0
            if not inner.any():
                break
            go_left = x[np.arange(x.shape[0]), np.where(inner, f, 0)] <= thr[node]
            node = np.where(inner, np.where(go_left, left[node], right[node]), node)
        return np.array(self.value)[node]


def _gini_counts(pos: np.ndarray, tot: np.ndarray) -> np.ndarray:
    p = np.divide(pos, tot, out=np.zeros_like(pos), where=tot > 0)
    return 2.0 * p * (1.0 - p)


def _best_split(x: np.ndarray, y: np.ndarray, w: np.ndarray, feats: np.ndarray):
    """Best (gain, feature, threshold) over ``feats``; ``w`` are bootstrap counts."""
    tot_w = w.sum()
    tot_pos = (w * y).sum()
    parent = _gini_counts(np.array([tot_pos]), np.array([tot_w]))[0]
    best = (0.0, -1, 0.0)
    for f in feats:
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        lw = np.cumsum(w[order])[:-1]
        lp = np.cumsum((w * y)[order])[:-1]
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        rw = tot_w - lw
        rp = tot_pos - lp
        child = (lw * _gini_counts(lp, lw) + rw * _gini_counts(rp, rw)) / tot_w
        gain = np.where(valid, parent - child, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] > best[0] + 1e-12:
            best = (float(gain[i]), int(f), float((xs[i] + xs[i + 1]) / 2.0))
    return best


def _grow(tree: Tree, x, y, w, depth, cfg: ForestConfig, k: int, rng) -> int:
    pos = (w * y).sum()
    node = tree._add(int(pos > w.sum() - pos))
    if depth >= cfg.max_depth or pos == 0 or pos == w.sum():
        return node
    feats = rng.choice(x.shape[1], size=k, replace=False)
    gain, f, thr = _best_split(x, y, w, feats)
    if f < 0:
        return node
    mask = x[:, f] <= thr
    tree.feature[node] = f
    tree.threshold[node] = thr
    tree.left[node] = _grow(tree, x[mask], y[mask], w[mask], depth + 1, cfg, k, rng)
    tree.right[node] = _grow(tree, x[~mask], y[~mask], w[~mask], depth + 1, cfg, k, rng)
    return node


@dataclass
class RandomForest:
    config: ForestConfig
    trees: list[Tree]

    def votes(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.sum([t.predict(x) for t in self.trees], axis=0)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Majority vote of the trees' leaf classes; an even split goes to class 0."""
        return (2 * self.votes(x) > len(self.trees)).astype(np.int64)


def rf_fit(x: np.ndarray, y: np.ndarray, cfg: ForestConfig | None = None) -> RandomForest:
    cfg = cfg or ForestConfig()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y).astype(np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValueError(f"expected X N×d and y N, got {x.shape} and {y.shape}")
    if x.shape[0] < 2:
        raise ValueError("need at least two rows")
    if np.unique(y).size < 2:
        raise ValueError("both classes must be present to fit a classifier")
    n, d = x.shape
    k = cfg.max_features or max(1, int(math.isqrt(d)))
    k = min(k, d)
    trees = []
    for child in np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees):
        rng = np.random.Generator(np.random.PCG64(child))
        w = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.float64)
        keep = w > 0
        tree = Tree()
        _grow(tree, x[keep], y[keep], w[keep], 0, cfg, k, rng)
        trees.append(tree)
    return RandomForest(cfg, trees)


# -- metrics -------------------------------------------------------------------


@dataclass
class MetricsReport:
    f1: float | None = None
    accuracy: float | None = None
    precision: float | None = None
    recall: float | None = None
    mse: float | None = None
    positive_class: int = 1

    def row(self) -> list[float | None]:
        return [self.f1, self.accuracy, self.precision, self.recall, self.mse]

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps({k: d[k] for k in ("f1", "accuracy", "precision", "recall", "mse")})


def classification_metrics(y, y_hat) -> MetricsReport:
    y = np.asarray(y).astype(np.int64)
    y_hat = np.asarray(y_hat).astype(np.int64)
    if y.shape != y_hat.shape or y.ndim != 1:
        raise ValueError(f"length mismatch: {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise ValueError("empty label vectors")
    tp = int(np.sum((y == 1) & (y_hat == 1)))
    fp = int(np.sum((y == 0) & (y_hat == 1)))
    fn = int(np.sum((y == 1) & (y_hat == 0)))
    tn = int(np.sum((y == 0) & (y_hat == 0)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MetricsReport(f1, (tp + tn) / y.size, precision, recall)


def regression_mse(y, y_hat) -> float:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {y_hat.shape}")
    return float(np.mean((y - y_hat) ** 2))


def evaluate(
    reps_train: np.ndarray,
    reps_test: np.ndarray,
    labels: tuple[np.ndarray, np.ndarray] | None = None,
    targets: tuple[np.ndarray, np.ndarray] | None = None,
    forest: ForestConfig | None = None,
    train_idx: np.ndarray | None = None,
    test_idx: np.ndarray | None = None,
) -> MetricsReport:
    """Fit on train representations, report metrics on test representations.

    ``labels`` and ``targets`` are ``(train, test)`` pairs; either may be None
    to skip that task. Index sets, when given, must be disjoint.
    """
    if train_idx is not None and test_idx is not None:
        overlap = np.intersect1d(train_idx, test_idx)
        if overlap.size:
            raise ValueError(f"train and test overlap on {overlap.size} rows, e.g. {overlap[:5].tolist()}")
    report = MetricsReport()
    if labels is not None:
        forest_model = rf_fit(reps_train, labels[0], forest)
        cls = classification_metrics(labels[1], forest_model.predict(reps_test))
        report.f1, report.accuracy = cls.f1, cls.accuracy
        report.precision, report.recall = cls.precision, cls.recall
    if targets is not None:
        reg = linreg_fit(reps_train, targets[0])
        report.mse = regression_mse(targets[1], reg.predict(reps_test))
    return report


def format_table(rows: list[tuple[str, MetricsReport]]) -> str:
    """Aligned text table, one row per named report, columns in TABLE_COLUMNS order."""
    name_w = max([len("Architecture")] + [len(n) for n, _ in rows])
    head = f"{'Architecture':<{name_w}}  " + "  ".join(f"{c:>9}" for c in TABLE_COLUMNS)
    lines = [head, "-" * len(head)]
    for name, rep in rows:
        cells = ["-" if v is None else f"{v:.4f}" for v in rep.row()]
        lines.append(f"{name:<{name_w}}  " + "  ".join(f"{c:>9}" for c in cells))
    return "\n".join(lines)
