"""Evaluation metrics: AUC, logloss, AUKC, Spearman, embedding memory.

AUC uses the rank-sum identity: with M positives, N negatives, and
average ranks for tied predictions,

    AUC = (sum of positive ranks - M(M+1)/2) / (M * N),

which equals the probability a random positive outscores a random
negative, counting ties as one half.

AUKC summarizes a selector's (k, AUC) curve as the normalized trapezoid
area of AUC_k - 0.5 over k = 0..|K|, anchored at the chance point
AUC_0 = 0.5. The uniform form needs a measurement at every k; the
segmented form accepts any strictly increasing grid that ends at |K| and
weighs each trapezoid by its width.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError
from .ranking import ImportanceRanking

CHANCE_AUC = 0.5


def average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks in ascending order; ties get the mean of their positions."""
    values = np.asarray(values)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.shape[0], dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(sorted_vals):
        j = i
        while j + 1 < len(sorted_vals) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


@dataclass(frozen=True)
class RankedScores:
    """Predictions with labels, their average ranks, and class counts."""

    predictions: np.ndarray
    labels: np.ndarray
    ranks: np.ndarray
    positives: int
    negatives: int

    @classmethod
    def from_arrays(cls, predictions, labels) -> "RankedScores":
        p = np.asarray(predictions, dtype=np.float64).reshape(-1)
        y = np.asarray(labels).reshape(-1)
        if p.shape != y.shape:
            raise ConfigError("predictions and labels must have equal length")
        if not np.all((y == 0) | (y == 1)):
            raise ConfigError("labels must be exactly 0 or 1")
        m = int(np.sum(y == 1))
        n = int(np.sum(y == 0))
        return cls(p, y.astype(np.int8), average_ranks(p), m, n)


def auc(predictions, labels) -> float:
    rs = RankedScores.from_arrays(predictions, labels)
    if rs.positives < 1 or rs.negatives < 1:
        raise NumericError("auc undefined: need at least one sample of each class")
    rank_sum = float(np.sum(rs.ranks[rs.labels == 1]))
    m, n = rs.positives, rs.negatives
    return (rank_sum - m * (1 + m) / 2.0) / (m * n)


def logloss(predictions, labels) -> float:
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if p.shape != y.shape:
        raise ConfigError("predictions and labels must have equal length")
    pc = np.clip(p, 1e-7, 1.0 - 1e-7)
    return float(-np.mean(y * np.log(pc) + (1.0 - y) * np.log1p(-pc)))


# ---------------------------------------------------------------------------
# k-performance curves


@dataclass(frozen=True)
class KCurve:
    """(k, AUC, logloss) measurements for one selector/backbone pair.

    k is strictly increasing within [1, total_fields]; the k = 0 anchor
    at AUC 0.5 is implied, never stored.
    """

    points: tuple[tuple[int, float, float], ...]
    total_fields: int

    def __post_init__(self):
        ks = [k for k, _, _ in self.points]
        if not ks:
            raise ConfigError("KCurve needs at least one point")
        if ks != sorted(set(ks)):
            raise ConfigError("KCurve k values must be strictly increasing")
        if ks[0] < 1 or ks[-1] > self.total_fields:
            raise ConfigError(
                f"KCurve k values must lie in [1, {self.total_fields}]"
            )
        for _, a, _ in self.points:
            if not 0.0 <= a <= 1.0:
                raise ConfigError("AUC values must lie in [0, 1]")

    @property
    def ks(self) -> list[int]:
        return [k for k, _, _ in self.points]

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("k,auc,logloss\n")
            for k, a, ll in self.points:
                fh.write(f"{k},{a!r},{ll!r}\n")

    @classmethod
    def load_csv(cls, path, total_fields: int) -> "KCurve":
        points = []
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header != "k,auc,logloss":
                raise ConfigError(f"unexpected curve header: {header}")
            for line in fh:
                if not line.strip():
                    continue
                k, a, ll = line.strip().split(",")
                points.append((int(k), float(a), float(ll)))
        return cls(points=tuple(points), total_fields=total_fields)


@dataclass(frozen=True)
class Segment:
    left_k: int
    right_k: int
    left_auc: float
    right_auc: float

    @property
    def width(self) -> int:
        return self.right_k - self.left_k


@dataclass(frozen=True)
class SegmentedCurve:
    """Trapezoid segments tiling [0, total_fields] without gaps or overlap."""

    segments: tuple[Segment, ...]
    total_fields: int

    def validate(self) -> None:
        if not self.segments:
            raise ConfigError("no segments")
        first = self.segments[0]
        if first.left_k != 0:
            raise ConfigError(f"segments must start at k=0, got k={first.left_k}")
        if first.left_auc != CHANCE_AUC:
            raise ConfigError("the k=0 anchor must carry AUC 0.5")
        prev = None
        for seg in self.segments:
            if seg.width <= 0:
                raise ConfigError(
                    f"segment [{seg.left_k}, {seg.right_k}] has non-positive width"
                )
            if prev is not None and seg.left_k != prev.right_k:
                raise ConfigError(
                    f"segment tiling broken between k={prev.right_k} and k={seg.left_k}"
                )
            prev = seg
        if prev.right_k != self.total_fields:
            raise ConfigError(
                f"segments end at k={prev.right_k}, expected k={self.total_fields}"
            )

    @classmethod
    def from_curve(cls, curve: KCurve) -> "SegmentedCurve":
        """Anchor at (0, 0.5) and connect consecutive measured points."""
        segs = []
        prev_k, prev_auc = 0, CHANCE_AUC
        for k, a, _ in curve.points:
            segs.append(Segment(prev_k, k, prev_auc, a))
            prev_k, prev_auc = k, a
        return cls(segments=tuple(segs), total_fields=curve.total_fields)


def aukc_uniform(curve: KCurve) -> float:
    """Area form that requires one measurement at every k = 1..|K|."""
    if curve.ks != list(range(1, curve.total_fields + 1)):
        raise ConfigError(
            "aukc_uniform needs a point at every k; use aukc_segmented for "
            "partial grids"
        )
    total = 0.0
    prev = CHANCE_AUC
    for _, a, _ in curve.points:
        total += a + prev - 1.0
        prev = a
    return total / curve.total_fields


def aukc_segmented(curve: KCurve | SegmentedCurve) -> float:
    """General trapezoid form over an arbitrary tiling of [0, |K|]."""
    seg = SegmentedCurve.from_curve(curve) if isinstance(curve, KCurve) else curve
    seg.validate()
    total = 0.0
    for s in seg.segments:
        total += (s.left_auc + s.right_auc - 1.0) * s.width
    return total / seg.total_fields


def aukc(curve: KCurve) -> float:
    """Uniform form when the grid is complete, segmented otherwise."""
    if curve.ks == list(range(1, curve.total_fields + 1)):
        return aukc_uniform(curve)
    return aukc_segmented(curve)


# ---------------------------------------------------------------------------
# ranking similarity


def spearman(r1: ImportanceRanking, r2: ImportanceRanking) -> float:
    """Spearman rho over rank positions, average ranks for tied scores."""
    f1, f2 = set(r1.fields), set(r2.fields)
    if f1 != f2:
        diff = sorted(f1 ^ f2)
        raise ConfigError(f"rankings cover different fields: {diff}")
    names = sorted(f1)
    s1 = np.array([r1.score_of(n) for n in names])
    s2 = np.array([r2.score_of(n) for n in names])
    a = average_ranks(s1)
    b = average_ranks(s2)
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt(np.sum(a * a) * np.sum(b * b))
    if denom == 0.0:
        raise NumericError("spearman undefined: a ranking is entirely tied")
    return float(np.sum(a * b) / denom)


# ---------------------------------------------------------------------------
# embedding-table memory accounting


def memory_remain(schema, selected_fields=None, value_mask=None) -> float:
    """Fraction of embedding rows kept by a field subset or a value mask."""
    total = np.sum([f.vocab_size for f in schema])
    if (selected_fields is None) == (value_mask is None):
        raise ConfigError("pass exactly one of selected_fields or value_mask")
    if selected_fields is not None:
        by_name = {f.name: f.vocab_size for f in schema}
        kept = 0
        for name in selected_fields:
            if name not in by_name:
                raise ConfigError(f"unknown field: {name}")
            kept += by_name[name]
    else:
        kept = 0
        for f in schema:
            if f.name not in value_mask:
                raise ConfigError(f"value mask missing field: {f.name}")
            mask = np.asarray(value_mask[f.name], dtype=bool)
            if mask.shape != (f.vocab_size,):
                raise ConfigError(f"value mask for {f.name} has wrong length")
            kept += int(mask.sum())
    return float(kept / total)


def format_percent(fraction: float) -> str:
    """Five-decimal percent string, e.g. 1.0 -> '100.00000%'."""
    return f"{fraction * 100.0:.5f}%"
