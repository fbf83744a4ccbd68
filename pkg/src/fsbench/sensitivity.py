"""Sensitivity selectors: permutation, first-order Taylor, gate gradients.

* permutation: shuffle one field's validation column at a time and score
  the drop in AUC against the unshuffled baseline. Negative scores are
  kept as-is; a field whose shuffling helps ranks as harmful.
* shark-style first-order scores: |grad_e L . e| per sample, the Taylor
  estimate of the loss change from zeroing that field's embedding,
  averaged over validation batches of a trained model.
* sfs-style gate gradients: a scalar gate pinned at 1.0 on every field
  of a freshly initialized model; during the first training epoch the
  mean |dL/dgate| per field is the importance score.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .backbones import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_LR,
    BackboneConfig,
    Model,
    iter_batches,
)
from .data import Dataset
from .errors import ConfigError, MissingInputError
from .metrics import auc as auc_metric
from .optim import Adam
from .ranking import ImportanceRanking, make_ranking
from .rng import make_rng


@dataclass(frozen=True)
class SensitivityReport:
    """Raw per-field sensitivities plus how they were measured."""

    fields: tuple[str, ...]
    raw: tuple[float, ...]
    std: tuple[float, ...]
    n_evaluations: int
    base_metric: float | None = None  # permutation stores the unshuffled AUC

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("field,score,std\n")
            for name, score, std in zip(self.fields, self.raw, self.std):
                fh.write(f"{name},{score!r},{std!r}\n")


def _require_trained(model: Model) -> None:
    if not model.trained:
        raise MissingInputError("selector needs a trained model checkpoint")


# ---------------------------------------------------------------------------
# permutation


def permutation_report(
    model: Model,
    dataset: Dataset,
    n_repeats: int = 3,
    seed: int = 0,
    batch_size: int = 8192,
) -> SensitivityReport:
    _require_trained(model)
    val = dataset.split_indices("val")
    if val.size == 0:
        raise ConfigError("permutation scoring needs a validation split")
    feats = dataset.features[val]
    labels = dataset.labels[val]
    base = auc_metric(model.predict_proba(feats, batch_size), labels)
    raw, std = [], []
    for name in dataset.field_names:
        j = dataset.field_index(name)
        drops = []
        for r in range(n_repeats):
            perm = make_rng("perm", seed, name, r).permutation(val.size)
            shuffled = feats.copy()
            shuffled[:, j] = feats[perm, j]
            drops.append(base - auc_metric(model.predict_proba(shuffled, batch_size), labels))
        raw.append(float(np.mean(drops)))
        std.append(float(np.std(drops)))
    return SensitivityReport(
        fields=tuple(dataset.field_names),
        raw=tuple(raw),
        std=tuple(std),
        n_evaluations=n_repeats,
        base_metric=base,
    )


def permutation_rank(
    model: Model, dataset: Dataset, n_repeats: int = 3, seed: int = 0
) -> ImportanceRanking:
    report = permutation_report(model, dataset, n_repeats=n_repeats, seed=seed)
    return make_ranking(list(report.fields), report.raw, method="permutation", seed=seed)


# ---------------------------------------------------------------------------
# first-order Taylor scores


def first_order_scores(embeddings: list[Tensor]) -> np.ndarray:
    """Mean |grad . value| per embedding tensor; call after backward."""
    out = np.empty(len(embeddings))
    for i, e in enumerate(embeddings):
        grad = e.grad if e.grad is not None else np.zeros_like(e.data)
        out[i] = np.abs(np.sum(grad * e.data, axis=1)).mean()
    return out


def shark_report(
    model: Model,
    dataset: Dataset,
    n_batches: int = 50,
    batch_size: int = DEFAULT_BATCH_SIZE,
    seed: int = 0,
) -> SensitivityReport:
    _require_trained(model)
    if n_batches < 1:
        raise ConfigError("n_batches must be >= 1")
    val = dataset.split_indices("val")
    if val.size == 0:
        raise ConfigError("first-order scoring needs a validation split")
    order = make_rng("shark", seed).permutation(val)
    per_batch = []
    used = 0
    for batch_idx in iter_batches(order, batch_size):
        if used == n_batches:
            break
        with Tape() as tape:
            logit = model.forward(dataset.features[batch_idx], collect_embeddings=True)
            loss = ad.bce_loss(ad.sigmoid(logit), dataset.labels[batch_idx])
            tape.backward(loss)
        per_batch.append(first_order_scores(model.last_embeddings))
        model.params.zero_grad()
        used += 1
    stack = np.vstack(per_batch)
    return SensitivityReport(
        fields=tuple(model.field_names),
        raw=tuple(stack.mean(axis=0).tolist()),
        std=tuple(stack.std(axis=0).tolist()),
        n_evaluations=used,
    )


def shark_rank(
    model: Model,
    dataset: Dataset,
    n_batches: int = 50,
    batch_size: int = DEFAULT_BATCH_SIZE,
    seed: int = 0,
) -> ImportanceRanking:
    report = shark_report(model, dataset, n_batches, batch_size, seed)
    return make_ranking(list(report.fields), report.raw, method="shark", seed=seed)


# ---------------------------------------------------------------------------
# gate gradients on a fresh model


def gate_gradients(
    model: Model, gates: list[Tensor], batch: np.ndarray, labels: np.ndarray
) -> np.ndarray:
    """|dL/dgate| for one batch; model weights receive gradients too."""
    with Tape() as tape:
        logit = model.forward(batch, field_scalers=gates)
        loss = ad.bce_loss(ad.sigmoid(logit), labels)
        tape.backward(loss)
    return np.array(
        [0.0 if g.grad is None else float(np.abs(g.grad).sum()) for g in gates]
    )


def sfs_report(
    dataset: Dataset,
    backbone_config: BackboneConfig,
    n_batches: int = 50,
    batch_size: int = 1024,
    lr: float = DEFAULT_LR,
    seed: int = 0,
) -> SensitivityReport:
    # the window uses smaller batches than plain training so the model
    # takes enough steps inside one epoch for gate gradients to settle
    if n_batches < 1:
        raise ConfigError("n_batches must be >= 1")
    train_idx = dataset.split_indices("train")
    if train_idx.size == 0:
        raise ConfigError("train split is empty")
    epoch_batches = int(np.ceil(train_idx.size / batch_size))
    if n_batches > epoch_batches:
        warnings.warn(
            f"n_batches={n_batches} exceeds one epoch ({epoch_batches}); clipping",
            stacklevel=2,
        )
        n_batches = epoch_batches

    model = Model(backbone_config, dataset.schema, seed=seed)
    gates = [Tensor(np.ones(1), requires_grad=True) for _ in model.fields]
    opt = Adam(model.params, lr=lr)
    shuffle = make_rng("shuffle", seed, 0)
    per_batch = []
    for batch_idx in iter_batches(train_idx, batch_size, shuffle):
        if len(per_batch) == n_batches:
            break
        per_batch.append(
            gate_gradients(
                model, gates, dataset.features[batch_idx], dataset.labels[batch_idx]
            )
        )
        opt.step()  # gates stay fixed at 1.0: they are not in the optimizer
        model.params.zero_grad()
        for g in gates:
            g.grad = None
    stack = np.vstack(per_batch)
    return SensitivityReport(
        fields=tuple(model.field_names),
        raw=tuple(stack.mean(axis=0).tolist()),
        std=tuple(stack.std(axis=0).tolist()),
        n_evaluations=len(per_batch),
    )


def sfs_rank(
    dataset: Dataset,
    backbone_config: BackboneConfig,
    n_batches: int = 50,
    batch_size: int = 1024,
    lr: float = DEFAULT_LR,
    seed: int = 0,
) -> ImportanceRanking:
    report = sfs_report(dataset, backbone_config, n_batches, batch_size, lr, seed)
    return make_ranking(list(report.fields), report.raw, method="sfs", seed=seed)
