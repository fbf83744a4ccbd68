"""Importance rankings: the common output of every field-level selector.

Serialized as tab-separated text, one ``field<TAB>score`` line per field
in descending score order, so downstream tools (retraining, similarity)
consume one format regardless of the selector that produced it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError


@dataclass(frozen=True)
class ImportanceRanking:
    """Total order over feature fields; ties break by declaration order."""

    entries: tuple[tuple[str, float], ...]
    method: str = ""
    seed: int = 0
    tiebreak: str = field(default="declaration_order", compare=False)

    @property
    def fields(self) -> list[str]:
        return [name for name, _ in self.entries]

    def top_k(self, k: int) -> list[str]:
        if not 1 <= k <= len(self.entries):
            raise ConfigError(f"top_k: k={k} outside [1, {len(self.entries)}]")
        return self.fields[:k]

    def score_of(self, name: str) -> float:
        for n, s in self.entries:
            if n == name:
                return s
        raise ConfigError(f"unknown field in ranking: {name}")

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for name, score in self.entries:
                fh.write(f"{name}\t{score!r}\n")

    @classmethod
    def load(cls, path, method: str = "", seed: int = 0) -> "ImportanceRanking":
        entries = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                name, score = line.split("\t")
                entries.append((name, float(score)))
        return cls(entries=tuple(entries), method=method, seed=seed)


def make_ranking(
    field_names: list[str], scores, method: str, seed: int = 0
) -> ImportanceRanking:
    """Order fields by descending score; equal scores keep declaration order."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (len(field_names),):
        raise ConfigError("make_ranking: one score per field required")
    if not np.all(np.isfinite(scores)):
        raise NumericError(f"{method}: non-finite importance score")
    order = sorted(range(len(field_names)), key=lambda i: (-scores[i], i))
    entries = tuple((field_names[i], float(scores[i])) for i in order)
    return ImportanceRanking(entries=entries, method=method, seed=seed)
