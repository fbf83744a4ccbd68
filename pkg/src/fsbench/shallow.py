"""Shallow selectors: L1 logistic regression and three tree ensembles.

Trees need an ordered domain, so every categorical field is first
target-encoded: each value maps to its smoothed train-split positive
rate (pos + alpha * prior) / (count + alpha). Unseen values land on the
prior. Split search then runs in rank space: per field, value codes are
re-labelled by ascending encoded rate, and candidate thresholds are
enumerated from per-rank gradient histograms, which is exact for these
low-cardinality columns.

Ties in split gain (e.g. duplicated columns) are broken by a seeded
draw among the maximizers, so clones share the splits instead of one
shadowing the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ConfigError, NumericError
from .ranking import ImportanceRanking, make_ranking
from .rng import make_rng

TARGET_ENCODE_ALPHA = 20.0
_MIN_GAIN = 1e-12


@dataclass(frozen=True)
class EncodedColumns:
    """Target-encoded view of a dataset: one numeric column per field."""

    values: np.ndarray  # (rows, fields) smoothed positive rates
    prior: float


def target_encode(dataset: Dataset, alpha: float = TARGET_ENCODE_ALPHA) -> EncodedColumns:
    train = dataset.split_indices("train")
    if train.size == 0:
        raise ConfigError("train split is empty")
    y = dataset.labels[train].astype(np.float64)
    prior = float(y.mean())
    n_fields = len(dataset.schema)
    values = np.empty((dataset.rows, n_fields))
    for j, f in enumerate(dataset.schema):
        codes = dataset.features[train, j]
        cnt = np.bincount(codes, minlength=f.vocab_size).astype(np.float64)
        pos = np.bincount(codes, weights=y, minlength=f.vocab_size)
        enc = (pos + alpha * prior) / (cnt + alpha)
        values[:, j] = enc[dataset.features[:, j]]
    return EncodedColumns(values=values, prior=prior)


def _rank_codes(dataset: Dataset, enc: EncodedColumns) -> np.ndarray:
    """Relabel value codes so ascending code order is ascending encoded rate."""
    train = dataset.split_indices("train")
    y = dataset.labels[train].astype(np.float64)
    prior = enc.prior
    out = np.empty_like(dataset.features)
    for j, f in enumerate(dataset.schema):
        codes = dataset.features[train, j]
        cnt = np.bincount(codes, minlength=f.vocab_size).astype(np.float64)
        pos = np.bincount(codes, weights=y, minlength=f.vocab_size)
        values = (pos + TARGET_ENCODE_ALPHA * prior) / (cnt + TARGET_ENCODE_ALPHA)
        order = np.argsort(values, kind="stable")
        rank = np.empty(f.vocab_size, dtype=np.int32)
        rank[order] = np.arange(f.vocab_size, dtype=np.int32)
        out[:, j] = rank[dataset.features[:, j]]
    return out


def _check_not_degenerate(labels: np.ndarray) -> None:
    if labels.min() == labels.max():
        raise NumericError("train split has a constant label: degenerate model")


# ---------------------------------------------------------------------------
# decision trees over rank codes


@dataclass
class _Node:
    feature: int = -1
    threshold: int = -1  # go left when rank code <= threshold
    left: "_Node | None" = None
    right: "_Node | None" = None
    value: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


def _regression_split(c, g, h, n_ranks, kind, lam, gamma):
    """Best threshold for one feature; returns (gain, threshold) or None."""
    if n_ranks < 2:
        return None
    G = np.bincount(c, weights=g, minlength=n_ranks)
    N = np.bincount(c, minlength=n_ranks).astype(np.float64)
    cG_all = np.cumsum(G)
    cN_all = np.cumsum(N)
    tG, tN = cG_all[-1], cN_all[-1]
    cG, cN = cG_all[:-1], cN_all[:-1]
    valid = (cN > 0) & (tN - cN > 0)
    if not valid.any():
        return None
    if kind == "variance":
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = cG**2 / cN + (tG - cG) ** 2 / (tN - cN) - tG**2 / tN
    else:  # newton
        H = np.bincount(c, weights=h, minlength=n_ranks)
        cH = np.cumsum(H)[:-1]
        tH = cH[-1] + H[-1]
        gain = 0.5 * (
            cG**2 / (cH + lam)
            + (tG - cG) ** 2 / (tH - cH + lam)
            - tG**2 / (tH + lam)
        ) - gamma
    gain = np.where(valid, gain, -np.inf)
    t = int(np.argmax(gain))
    return float(gain[t]), t


def _build_regression_tree(
    codes, g, h, idx, n_ranks, depth, kind, lam, gamma, shrinkage, rng, gains_out
):
    node = _Node()
    if kind == "variance":
        num, den = g[idx].sum(), h[idx].sum()
    else:
        num, den = -g[idx].sum(), h[idx].sum() + lam
    node.value = shrinkage * (num / den if den > 0 else 0.0)
    if depth == 0 or idx.size < 2:
        return node
    best = None
    candidates = []
    for f in range(codes.shape[1]):
        found = _regression_split(codes[idx, f], g[idx], h[idx], n_ranks[f], kind, lam, gamma)
        if found is None:
            continue
        gain, t = found
        if best is None or gain > best:
            best = gain
            candidates = [(f, t, gain)]
        elif gain == best:
            candidates.append((f, t, gain))
    if best is None or best <= _MIN_GAIN:
        return node
    f, t, gain = candidates[int(rng.integers(0, len(candidates)))]
    mask = codes[idx, f] <= t
    gains_out[f] += gain
    node.feature, node.threshold = f, t
    node.left = _build_regression_tree(
        codes, g, h, idx[mask], n_ranks, depth - 1, kind, lam, gamma, shrinkage, rng, gains_out
    )
    node.right = _build_regression_tree(
        codes, g, h, idx[~mask], n_ranks, depth - 1, kind, lam, gamma, shrinkage, rng, gains_out
    )
    return node


def _predict_tree(node: _Node, codes: np.ndarray, idx: np.ndarray, out: np.ndarray) -> None:
    if node.is_leaf:
        out[idx] = node.value
        return
    mask = codes[idx, node.feature] <= node.threshold
    _predict_tree(node.left, codes, idx[mask], out)
    _predict_tree(node.right, codes, idx[~mask], out)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _boost(dataset: Dataset, n_trees, depth, shrinkage, seed, kind, lam, gamma):
    """Shared boosting loop; returns per-field accumulated split gain."""
    if n_trees < 1:
        raise ConfigError("n_trees must be >= 1")
    train = dataset.split_indices("train")
    y = dataset.labels[train].astype(np.float64)
    _check_not_degenerate(y)
    enc = target_encode(dataset)
    codes = _rank_codes(dataset, enc)[train]
    n_ranks = [f.vocab_size for f in dataset.schema]
    gains = np.zeros(len(dataset.schema))
    prior = float(np.clip(y.mean(), 1e-7, 1 - 1e-7))
    preds = np.full(train.size, math.log(prior / (1 - prior)))
    idx = np.arange(train.size)
    for t in range(n_trees):
        p = _sigmoid(preds)
        if kind == "variance":
            g, h = y - p, p * (1 - p)  # residual fit, newton leaf
        else:
            g, h = p - y, p * (1 - p)
        rng = make_rng("boost", seed, t)
        tree = _build_regression_tree(
            codes, g, h, idx, n_ranks, depth, kind, lam, gamma, shrinkage, rng, gains
        )
        step = np.empty(train.size)
        _predict_tree(tree, codes, idx, step)
        preds += step
    return gains


def gbdt_rank(
    dataset: Dataset, n_trees: int = 100, depth: int = 6, shrinkage: float = 0.1,
    seed: int = 0,
) -> ImportanceRanking:
    """Gradient boosting on residuals; score is total squared-gain per field."""
    gains = _boost(dataset, n_trees, depth, shrinkage, seed, "variance", 0.0, 0.0)
    return make_ranking(dataset.field_names, gains, method="gbdt", seed=seed)


def xgb_rank(
    dataset: Dataset,
    n_trees: int = 100,
    depth: int = 6,
    reg_lambda: float = 1.0,
    gamma: float = 0.0,
    shrinkage: float = 0.1,
    seed: int = 0,
) -> ImportanceRanking:
    """Second-order boosting; split gain uses the regularized Newton form."""
    gains = _boost(dataset, n_trees, depth, shrinkage, seed, "newton", reg_lambda, gamma)
    return make_ranking(dataset.field_names, gains, method="xgb", seed=seed)


# ---------------------------------------------------------------------------
# random forest (Gini importance)


def _gini_split(c, y1, n_ranks):
    if n_ranks < 2:
        return None
    N = np.bincount(c, minlength=n_ranks).astype(np.float64)
    P = np.bincount(c, weights=y1, minlength=n_ranks)
    cN_all = np.cumsum(N)
    cP_all = np.cumsum(P)
    tN, tP = cN_all[-1], cP_all[-1]
    cN, cP = cN_all[:-1], cP_all[:-1]
    valid = (cN > 0) & (tN - cN > 0)
    if not valid.any():
        return None

    def gini_weighted(n, p):
        # n * impurity = n - (p^2 + (n-p)^2) / n
        with np.errstate(divide="ignore", invalid="ignore"):
            return n - (p**2 + (n - p) ** 2) / n

    parent = gini_weighted(tN, tP)
    decrease = parent - gini_weighted(cN, cP) - gini_weighted(tN - cN, tP - cP)
    decrease = np.where(valid, decrease, -np.inf)
    t = int(np.argmax(decrease))
    return float(decrease[t]), t


def _build_gini_tree(codes, y, idx, n_ranks, depth, n_candidates, rng, gains_out, n_root):
    if depth == 0 or idx.size < 2 or y[idx].min() == y[idx].max():
        return
    feats = rng.choice(codes.shape[1], size=n_candidates, replace=False)
    best = None
    candidates = []
    for f in feats:
        found = _gini_split(codes[idx, f], y[idx], n_ranks[f])
        if found is None:
            continue
        decrease, t = found
        if best is None or decrease > best:
            best = decrease
            candidates = [(int(f), t)]
        elif decrease == best:
            candidates.append((int(f), t))
    if best is None or best <= _MIN_GAIN:
        return
    f, t = candidates[int(rng.integers(0, len(candidates)))]
    gains_out[f] += best / n_root
    mask = codes[idx, f] <= t
    _build_gini_tree(codes, y, idx[mask], n_ranks, depth - 1, n_candidates, rng, gains_out, n_root)
    _build_gini_tree(codes, y, idx[~mask], n_ranks, depth - 1, n_candidates, rng, gains_out, n_root)


def rf_rank(
    dataset: Dataset, n_trees: int = 100, depth: int = 8, seed: int = 0
) -> ImportanceRanking:
    """Bootstrapped Gini trees with sqrt-F feature subsampling per split."""
    if n_trees < 1:
        raise ConfigError("n_trees must be >= 1")
    train = dataset.split_indices("train")
    y = dataset.labels[train].astype(np.float64)
    _check_not_degenerate(y)
    enc = target_encode(dataset)
    codes = _rank_codes(dataset, enc)[train]
    n_ranks = [f.vocab_size for f in dataset.schema]
    n_fields = len(dataset.schema)
    n_candidates = max(1, math.ceil(math.sqrt(n_fields)))
    importances = np.zeros(n_fields)
    for t in range(n_trees):
        rng = make_rng("forest", seed, t)
        boot = rng.integers(0, train.size, size=train.size)
        gains = np.zeros(n_fields)
        _build_gini_tree(
            codes[boot], y[boot], np.arange(train.size), n_ranks, depth,
            n_candidates, rng, gains, float(train.size),
        )
        importances += gains
    return make_ranking(dataset.field_names, importances / n_trees, method="rf", seed=seed)


# ---------------------------------------------------------------------------
# L1 logistic regression on one-hot values


def soft_threshold(w: np.ndarray, t: float) -> np.ndarray:
    return np.sign(w) * np.maximum(np.abs(w) - t, 0.0)


def lasso_rank(
    dataset: Dataset,
    lam: float = 1e-4,
    epochs: int = 10,
    lr: float = 0.5,
    batch_size: int = 4096,
    seed: int = 0,
) -> ImportanceRanking:
    """Proximal mini-batch gradient descent; score is sum of |w| per field.

    Weights live on one-hot value indicators (shared index space across
    fields); the soft-threshold step after every gradient step is the
    proximal operator of the L1 penalty, so lam = 0 is plain logistic
    regression.
    """
    if lam < 0:
        raise ConfigError("lasso: lambda must be >= 0")
    train = dataset.split_indices("train")
    _check_not_degenerate(dataset.labels[train])
    offsets = np.zeros(len(dataset.schema) + 1, dtype=np.int64)
    for j, f in enumerate(dataset.schema):
        offsets[j + 1] = offsets[j] + f.vocab_size
    flat = dataset.features.astype(np.int64) + offsets[:-1]
    w = np.zeros(int(offsets[-1]))
    bias = 0.0
    y = dataset.labels.astype(np.float64)
    for epoch in range(epochs):
        rng = make_rng("lasso", seed, epoch)
        order = rng.permutation(train)
        for start in range(0, order.size, batch_size):
            rows = order[start : start + batch_size]
            cols = flat[rows]
            logits = bias + w[cols].sum(axis=1)
            p = _sigmoid(logits)
            err = (p - y[rows]) / rows.size
            grad = np.zeros_like(w)
            np.add.at(grad, cols.reshape(-1), np.repeat(err, cols.shape[1]))
            w -= lr * grad
            bias -= lr * err.sum()
            if lam > 0:
                w = soft_threshold(w, lr * lam)
        if not np.all(np.isfinite(w)) or not np.isfinite(bias):
            raise NumericError("lasso diverged (non-finite weights): lower the learning rate")
    scores = [float(np.abs(w[offsets[j] : offsets[j + 1]]).sum()) for j in range(len(dataset.schema))]
    return make_ranking(dataset.field_names, scores, method="lasso", seed=seed)
