"""Dataset schemas, CSV ingestion, encoding, splits, and synthetic data.

All features are categorical integer indices. Index 0 is reserved for
the out-of-vocabulary bucket of every field; vocabularies are built on
the training split only and then applied to every split, so validation
and test rows can never influence the encoding.

Numeric source columns are quantile-bucketized (edges fit on the train
split) so the embedding-row memory model applies uniformly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from .errors import ConfigError, LabelError, SchemaError
from .rng import make_rng

TRAIN, VAL, TEST = 0, 1, 2
SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class FieldSchema:
    """One categorical feature field. vocab_size counts the OOV bucket."""

    name: str
    vocab_size: int
    kind: str = "categorical"

    def __post_init__(self):
        if self.vocab_size < 1:
            raise SchemaError(f"field {self.name}: vocab_size must be >= 1")


@dataclass
class Dataset:
    """Encoded samples with a fixed train/val/test assignment.

    Immutable after construction; safe to share between concurrent jobs.
    """

    schema: list[FieldSchema]
    features: np.ndarray  # (rows, fields) int32 value indices
    labels: np.ndarray  # (rows,) values in {0, 1}
    split_assignment: np.ndarray  # (rows,) values in {TRAIN, VAL, TEST}

    def __post_init__(self):
        names = [f.name for f in self.schema]
        if len(set(names)) != len(names):
            raise SchemaError("field names must be unique")
        if self.features.shape != (len(self.labels), len(self.schema)):
            raise SchemaError("features shape does not match schema/labels")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise LabelError("labels must be exactly 0 or 1")
        for j, f in enumerate(self.schema):
            column = self.features[:, j]
            if column.size and (column.min() < 0 or column.max() >= f.vocab_size):
                raise SchemaError(
                    f"field {f.name}: value index outside [0, {f.vocab_size})"
                )
        self.features.setflags(write=False)
        self.labels.setflags(write=False)
        self.split_assignment.setflags(write=False)

    @property
    def rows(self) -> int:
        return int(self.labels.shape[0])

    @property
    def field_names(self) -> list[str]:
        return [f.name for f in self.schema]

    def field_index(self, name: str) -> int:
        for i, f in enumerate(self.schema):
            if f.name == name:
                return i
        raise SchemaError(f"unknown field: {name}")

    def split_indices(self, split: str) -> np.ndarray:
        code = SPLIT_NAMES.index(split)
        return np.flatnonzero(self.split_assignment == code)

    def subset_schema(self, names: list[str]) -> "Dataset":
        """Same rows, only the named fields (in schema order)."""
        keep = [i for i, f in enumerate(self.schema) if f.name in set(names)]
        return Dataset(
            schema=[self.schema[i] for i in keep],
            features=self.features[:, keep].copy(),
            labels=self.labels.copy(),
            split_assignment=self.split_assignment.copy(),
        )


def split_sizes(n: int, ratio: tuple[float, float, float]) -> tuple[int, int, int]:
    """Largest-remainder allocation: sizes sum to n, each within 1 of quota."""
    total = float(np.sum(ratio))
    if total <= 0 or len(ratio) != 3:
        raise ConfigError(f"split ratio must be three positive parts, got {ratio}")
    quotas = [n * r / total for r in ratio]
    base = [math.floor(q) for q in quotas]
    remainder = n - int(np.sum(base))
    order = sorted(range(3), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[:remainder]:
        base[i] += 1
    return tuple(base)


def assign_splits(n: int, ratio, seed: int) -> np.ndarray:
    """Deterministic pseudo-random assignment with exact split sizes."""
    n_train, n_val, _ = split_sizes(n, tuple(ratio))
    perm = make_rng("split", seed, n, tuple(ratio)).permutation(n)
    out = np.empty(n, dtype=np.int8)
    out[perm[:n_train]] = TRAIN
    out[perm[n_train : n_train + n_val]] = VAL
    out[perm[n_train + n_val :]] = TEST
    return out


def build_vocab(column: list[str], min_count: int = 1, max_vocab: int = 1_000_000) -> dict[str, int]:
    """Map values to 1..V by descending frequency (ties lexicographic).

    Values below min_count or beyond max_vocab fall to the OOV index 0.
    """
    if min_count < 1 or max_vocab < 1:
        raise ConfigError("build_vocab: min_count and max_vocab must be >= 1")
    counts: dict[str, int] = {}
    for v in column:
        counts[v] = counts.get(v, 0) + 1
    kept = [(v, c) for v, c in counts.items() if c >= min_count]
    kept.sort(key=lambda vc: (-vc[1], vc[0]))
    return {v: i + 1 for i, (v, _) in enumerate(kept[:max_vocab])}


# ---------------------------------------------------------------------------
# CSV ingestion


@dataclass(frozen=True)
class LabelRule:
    """binary: values must be 0/1; threshold: numeric value > gt maps to 1."""

    kind: str = "binary"
    gt: float | None = None

    def apply(self, raw: str, row: int) -> int:
        if self.kind == "binary":
            if raw == "0":
                return 0
            if raw == "1":
                return 1
            raise LabelError(f"row {row}: label {raw!r} is not binary")
        if self.kind == "threshold":
            try:
                value = float(raw)
            except ValueError:
                raise LabelError(f"row {row}: label {raw!r} is not numeric") from None
            return 1 if value > self.gt else 0
        raise ConfigError(f"unknown label rule kind: {self.kind}")


@dataclass(frozen=True)
class IngestConfig:
    label_column: str
    field_columns: tuple[str, ...] | None = None  # None: all other columns
    numeric_columns: tuple[str, ...] = ()
    drop_columns: tuple[str, ...] = ()
    delimiter: str = ","
    ratio: tuple[float, float, float] = (7, 2, 1)
    seed: int = 0
    min_count: int = 1
    max_vocab: int = 1_000_000
    numeric_bins: int = 32
    label_rule: LabelRule = field(default_factory=LabelRule)


def _bucketize(raw: list[str], train_idx: np.ndarray, n_bins: int) -> list[str]:
    """Quantile-bin a numeric column; edges are fit on the train rows only."""
    values = np.full(len(raw), np.nan)
    for i, v in enumerate(raw):
        try:
            values[i] = float(v)
        except ValueError:
            pass
    train_vals = values[train_idx]
    train_vals = train_vals[~np.isnan(train_vals)]
    if train_vals.size == 0:
        return ["missing" if np.isnan(v) else "b000" for v in values]
    edges = np.unique(np.quantile(train_vals, np.linspace(0, 1, n_bins + 1)[1:-1]))
    bins = np.searchsorted(edges, values, side="right")
    return [
        "missing" if np.isnan(v) else f"b{b:03d}" for v, b in zip(values, bins)
    ]


def load_csv(path, spec: IngestConfig) -> Dataset:
    """Ingest a headered CSV: split first, then fit vocabularies on train."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=spec.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        rows = list(reader)

    col_index = {name: i for i, name in enumerate(header)}
    if spec.label_column not in col_index:
        raise SchemaError(f"missing label column: {spec.label_column}")
    if spec.field_columns is None:
        skip = {spec.label_column, *spec.drop_columns}
        field_names = [c for c in header if c not in skip]
    else:
        field_names = list(spec.field_columns)
        for c in field_names:
            if c not in col_index:
                raise SchemaError(f"missing field column: {c}")
    if not field_names:
        raise SchemaError("no feature columns left after dropping")

    n = len(rows)
    labels = np.empty(n, dtype=np.int8)
    for i, row in enumerate(rows):
        labels[i] = spec.label_rule.apply(row[col_index[spec.label_column]], i + 2)

    split = assign_splits(n, spec.ratio, spec.seed)
    train_idx = np.flatnonzero(split == TRAIN)

    raw_columns: dict[str, list[str]] = {
        name: [row[col_index[name]] for row in rows] for name in field_names
    }
    for name in spec.numeric_columns:
        if name not in raw_columns:
            raise SchemaError(f"numeric column {name} is not an ingested field")
        raw_columns[name] = _bucketize(raw_columns[name], train_idx, spec.numeric_bins)

    schema: list[FieldSchema] = []
    features = np.zeros((n, len(field_names)), dtype=np.int32)
    for j, name in enumerate(field_names):
        column = raw_columns[name]
        vocab = build_vocab(
            [column[i] for i in train_idx], spec.min_count, spec.max_vocab
        )
        schema.append(FieldSchema(name=name, vocab_size=len(vocab) + 1))
        features[:, j] = [vocab.get(v, 0) for v in column]

    return Dataset(schema=schema, features=features, labels=labels, split_assignment=split)


def field_value_counts(dataset: Dataset, field_name: str) -> dict[int, int]:
    """Train-split frequency of each value index of one field."""
    j = dataset.field_index(field_name)
    train = dataset.split_indices("train")
    values, counts = np.unique(dataset.features[train, j], return_counts=True)
    return {int(v): int(c) for v, c in zip(values, counts)}


# ---------------------------------------------------------------------------
# synthetic data with planted informative fields


@dataclass(frozen=True)
class SyntheticSpec:
    n_fields: int
    n_informative: int
    vocab_sizes: tuple[int, ...]
    n_samples: int
    noise_sigma: float = 0.5
    seed: int = 0
    weight_scale: float = 1.0
    ratio: tuple[float, float, float] = (7, 2, 1)

    def __post_init__(self):
        if self.n_informative > self.n_fields:
            raise ConfigError("n_informative cannot exceed n_fields")
        if self.n_informative < 0 or self.n_fields < 1 or self.n_samples < 1:
            raise ConfigError("synthetic spec values must be positive")
        if len(self.vocab_sizes) != self.n_fields:
            raise ConfigError("one vocab size per field required")
        if any(v < 2 for v in self.vocab_sizes):
            raise ConfigError("synthetic vocab sizes must be >= 2")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")


def generate_synthetic(spec: SyntheticSpec) -> tuple[Dataset, list[str]]:
    """Plant a label signal in the first n_informative fields.

    The label is Bernoulli(sigmoid(sum of per-value weights + gaussian
    noise)); noise fields never enter the logit. Returns the dataset and
    the ground-truth field order (informative fields first).
    """
    rng = make_rng("synthetic", spec.seed)
    n, f = spec.n_samples, spec.n_fields
    features = np.empty((n, f), dtype=np.int32)
    logits = np.zeros(n)
    for j in range(f):
        vocab = spec.vocab_sizes[j]
        # index 0 stays reserved for OOV, values are drawn from 1..vocab-1
        features[:, j] = rng.integers(1, vocab, size=n)
        weights = rng.normal(0.0, 1.0, size=vocab)
        if j < spec.n_informative:
            # standardize the drawn values so every informative field
            # carries the same signal strength
            live = weights[1:vocab]
            live = (live - live.mean()) / live.std()
            weights[1:vocab] = live * spec.weight_scale
            logits += weights[features[:, j]]
    if spec.noise_sigma > 0:
        logits += rng.normal(0.0, spec.noise_sigma, size=n)
    probs = 1.0 / (1.0 + np.exp(-logits))
    labels = (rng.random(n) < probs).astype(np.int8)
    schema = [
        FieldSchema(name=f"f{j:02d}", vocab_size=spec.vocab_sizes[j]) for j in range(f)
    ]
    split = assign_splits(n, spec.ratio, spec.seed)
    dataset = Dataset(
        schema=schema, features=features, labels=labels, split_assignment=split
    )
    truth = [s.name for s in schema[: spec.n_informative]] + [
        s.name for s in schema[spec.n_informative :]
    ]
    return dataset, truth


def save_csv(dataset: Dataset, path, truth: list[str] | None = None) -> None:
    """Write the same CSV shape load_csv ingests, plus a truth sidecar."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(dataset.field_names + ["label"])
        for i in range(dataset.rows):
            writer.writerow(
                [f"v{v}" for v in dataset.features[i]] + [int(dataset.labels[i])]
            )
    if truth is not None:
        with open(str(path) + ".truth", "w", encoding="utf-8") as fh:
            for name in truth:
                fh.write(name + "\n")


def load_truth(path) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# dataset presets (split ratios and label rules only)


def load_preset(name: str) -> IngestConfig:
    """Named ingestion preset shipped with the package."""
    try:
        text = resources.files("fsbench.presets").joinpath(f"{name}.json").read_text()
    except FileNotFoundError:
        raise ConfigError(f"unknown dataset preset: {name}") from None
    raw = json.loads(text)
    rule = raw.pop("label_rule", {"kind": "binary"})
    allowed = set(IngestConfig.__dataclass_fields__) - {"label_rule"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"preset {name}: unknown keys {sorted(unknown)}")
    for key in ("field_columns", "numeric_columns", "drop_columns", "ratio"):
        if key in raw and raw[key] is not None:
            raw[key] = tuple(raw[key])
    return IngestConfig(label_rule=LabelRule(**rule), **raw)


def with_overrides(config: IngestConfig, **kwargs) -> IngestConfig:
    return replace(config, **kwargs)
