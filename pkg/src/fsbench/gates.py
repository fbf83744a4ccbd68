"""Gate-based selectors: learnable multipliers on field or value embeddings.

Four flavours:

* autofield: two logits per field, softmax keep-probability scales the
  field embedding; model weights step on train batches, gate logits step
  on validation batches (the two never mix inside one update).
* adafs: a per-sample controller MLP emits softmax field weights; it
  trains jointly with the model and produces no ranking.
* optfs: one scalar per feature value behind an annealed sigmoid; an
  increasing penalty on the summed gates pushes values out, and the
  final keep/drop mask is thresholded at 0.5.
* lpfs: one scalar per field through g = theta^2 / (theta^2 + eps) with
  eps shrinking per epoch, trained jointly; gates reach exactly 0 at
  theta = 0 and approach 1 as eps vanishes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

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
from .errors import ConfigError
from .metrics import auc as auc_metric
from .metrics import logloss as logloss_metric
from .optim import SGD, Adam, ParamStore
from .ranking import ImportanceRanking, make_ranking
from .rng import make_rng


@dataclass
class GatedModel:
    """A trained model whose forward pass includes its gate machinery."""

    model: Model
    predict: "callable"
    val_auc: float
    val_logloss: float
    test_auc: float
    test_logloss: float
    ranking: ImportanceRanking | None = None
    extra: dict = field(default_factory=dict)


def _evaluate(predict, dataset: Dataset, split: str) -> tuple[float, float]:
    idx = dataset.split_indices(split)
    probs = predict(dataset.features[idx])
    labels = dataset.labels[idx]
    return auc_metric(probs, labels), logloss_metric(probs, labels)


# ---------------------------------------------------------------------------
# autofield


def autofield_search(
    dataset: Dataset,
    backbone_config: BackboneConfig,
    epochs: int = 4,
    lr: float = DEFAULT_LR,
    gate_lr: float = 0.02,
    batch_size: int = 1024,
    seed: int = 0,
    warmup_epochs: int = 1,
    zero_embedding_fields: tuple[str, ...] = (),
) -> ImportanceRanking:
    """Alternating train/validation updates; score is the keep-probability.

    Gate logits stay frozen for ``warmup_epochs`` so the validation
    gradients act on partially fitted weights instead of random ones.
    ``zero_embedding_fields`` starts the named fields' embeddings at zero,
    a probe for how quickly the gates abandon a field that begins dead.
    """
    val_idx = dataset.split_indices("val")
    if val_idx.size == 0:
        raise ConfigError("autofield needs a validation split for gate updates")
    train_idx = dataset.split_indices("train")
    if train_idx.size == 0:
        raise ConfigError("train split is empty")

    model = Model(backbone_config, dataset.schema, seed=seed)
    for name in zero_embedding_fields:
        model.params[f"emb/{name}"].data[:] = 0.0
    gates = ParamStore()
    for f in model.fields:
        gates.add(f"gate/{f.name}", np.zeros((1, 2)))  # keep-prob starts at 0.5
    opt_model = Adam(model.params, lr=lr)
    # plain SGD so the logits integrate the raw validation-loss
    # sensitivity; adaptive scaling would erase the magnitude ordering
    opt_gates = SGD(gates, lr=gate_lr)

    def keep_probs() -> list[Tensor]:
        return [
            ad.col(ad.softmax(gates[f"gate/{f.name}"], axis=-1), 0)
            for f in model.fields
        ]

    def step(batch_idx: np.ndarray, optimizer: Adam) -> None:
        with Tape() as tape:
            logit = model.forward(
                dataset.features[batch_idx], field_scalers=keep_probs()
            )
            loss = ad.bce_loss(ad.sigmoid(logit), dataset.labels[batch_idx])
            tape.backward(loss)
        optimizer.step()
        model.params.zero_grad()
        gates.zero_grad()

    for epoch in range(epochs):
        train_rng = make_rng("shuffle", seed, epoch)
        val_rng = make_rng("autofield-val", seed, epoch)
        val_order = val_rng.permutation(val_idx)
        val_pos = 0
        for batch_idx in iter_batches(train_idx, batch_size, train_rng):
            step(batch_idx, opt_model)
            if epoch < warmup_epochs:
                continue
            if val_pos >= val_order.size:
                val_order = val_rng.permutation(val_idx)
                val_pos = 0
            step(val_order[val_pos : val_pos + batch_size], opt_gates)
            val_pos += batch_size

    scores = [
        float(ad.softmax(gates[f"gate/{f.name}"], axis=-1).data[0, 0])
        for f in model.fields
    ]
    return make_ranking(dataset.field_names, scores, method="autofield", seed=seed)


# ---------------------------------------------------------------------------
# adafs


def adafs_train(
    dataset: Dataset,
    backbone_config: BackboneConfig,
    epochs: int = 3,
    batch_size: int = DEFAULT_BATCH_SIZE,
    lr: float = DEFAULT_LR,
    patience: int = 2,
    seed: int = 0,
    controller_hidden: int = 32,
) -> GatedModel:
    """Joint training of backbone plus a per-sample softmax controller.

    The controller reads detached embeddings, so its gradients never leak
    into the embedding tables; there is no ranking to extract.
    """
    train_idx = dataset.split_indices("train")
    if train_idx.size == 0:
        raise ConfigError("train split is empty")
    model = Model(backbone_config, dataset.schema, seed=seed)
    n_fields = len(model.fields)
    d = backbone_config.embedding_dim
    ctrl = ParamStore()
    rng = make_rng("adafs-controller", seed)
    bound = np.sqrt(6.0 / (n_fields * d + controller_hidden))
    ctrl.add("ctrl/w1", rng.uniform(-bound, bound, size=(n_fields * d, controller_hidden)))
    ctrl.add("ctrl/b1", np.zeros(controller_hidden))
    bound = np.sqrt(6.0 / (controller_hidden + n_fields))
    ctrl.add("ctrl/w2", rng.uniform(-bound, bound, size=(controller_hidden, n_fields)))
    ctrl.add("ctrl/b2", np.zeros(n_fields))

    def field_weights(batch: np.ndarray) -> Tensor:
        frozen = [
            ad.detach(
                ad.embed_lookup(
                    model.params[f"emb/{f.name}"], batch[:, model.column[f.name]]
                )
            )
            for f in model.fields
        ]
        x = ad.concat(frozen)
        h = ad.relu(ad.add(ad.matmul(x, ctrl["ctrl/w1"]), ctrl["ctrl/b1"]))
        return ad.softmax(ad.add(ad.matmul(h, ctrl["ctrl/w2"]), ctrl["ctrl/b2"]), axis=-1)

    def forward(batch: np.ndarray) -> Tensor:
        weights = field_weights(batch)
        # weights sum to 1 per sample; scale by the field count so the
        # average embedding magnitude matches the ungated model
        scalers = [ad.mul(ad.col(weights, i), float(n_fields)) for i in range(n_fields)]
        return model.forward(batch, field_scalers=scalers)

    def predict(features: np.ndarray, batch_size_: int = 8192) -> np.ndarray:
        out = np.empty(features.shape[0])
        for start in range(0, features.shape[0], batch_size_):
            batch = features[start : start + batch_size_]
            out[start : start + batch_size_] = ad.sigmoid(forward(batch)).data.reshape(-1)
        return out

    opt = Adam(list(model.params.tensors()) + list(ctrl.tensors()), lr=lr)
    best = (-np.inf, None, None, -1, np.nan)
    for epoch in range(epochs):
        shuffle = make_rng("shuffle", seed, epoch)
        for batch_idx in iter_batches(train_idx, batch_size, shuffle):
            with Tape() as tape:
                loss = ad.bce_loss(
                    ad.sigmoid(forward(dataset.features[batch_idx])),
                    dataset.labels[batch_idx],
                )
                tape.backward(loss)
            opt.step()
            model.params.zero_grad()
            ctrl.zero_grad()
        val_auc, val_ll = _evaluate(predict, dataset, "val")
        if val_auc > best[0]:
            best = (val_auc, model.params.snapshot(), ctrl.snapshot(), epoch, val_ll)
        elif epoch - best[3] >= patience:
            break
    model.params.restore(best[1])
    ctrl.restore(best[2])
    model.trained = True
    test_auc, test_ll = _evaluate(predict, dataset, "test")
    return GatedModel(
        model=model,
        predict=predict,
        val_auc=best[0],
        val_logloss=best[4],
        test_auc=test_auc,
        test_logloss=test_ll,
        extra={"field_weights": lambda batch: field_weights(batch).data},
    )


# ---------------------------------------------------------------------------
# optfs


def optfs_search(
    dataset: Dataset,
    backbone_config: BackboneConfig,
    epochs: int = 6,
    tau0: float = 1.0,
    gamma: float = 0.7,
    lambda_max: float = 1e-3,
    lr: float = DEFAULT_LR,
    gate_lr: float = 0.05,
    batch_size: int = DEFAULT_BATCH_SIZE,
    seed: int = 0,
    theta_init: float | None = None,
) -> GatedModel:
    """Value-level gates under a linearly growing sparsity penalty.

    Gate(v) = sigmoid(theta_v / tau_t) with tau_t = tau0 * gamma^t per
    epoch; the loss adds lambda_t * sum of all gates with lambda_t rising
    from 0 to lambda_max. Values whose final theta is negative (gate
    below one half) are dropped; the field score is its keep rate.
    """
    if gamma >= 1.0:
        raise ConfigError("optfs: gamma must be < 1 so the temperature anneals downward")
    if gamma <= 0 or tau0 <= 0:
        raise ConfigError("optfs: tau0 and gamma must be positive")
    if lambda_max < 0:
        raise ConfigError("optfs: lambda_max must be >= 0")
    train_idx = dataset.split_indices("train")
    if train_idx.size == 0:
        raise ConfigError("train split is empty")

    model = Model(backbone_config, dataset.schema, seed=seed)
    theta0 = 1.0 * tau0 if theta_init is None else theta_init  # gates start near keep
    thetas = ParamStore()
    for f in model.fields:
        thetas.add(f"theta/{f.name}", np.full((f.vocab_size, 1), theta0))
    opt = Adam(model.params, lr=lr)
    opt_theta = Adam(thetas, lr=gate_lr)

    tau = tau0
    kept_history: list[int] = []

    def scalers_for(batch: np.ndarray) -> list[Tensor]:
        out = []
        for f in model.fields:
            looked = ad.embed_lookup(
                thetas[f"theta/{f.name}"], batch[:, model.column[f.name]]
            )
            out.append(ad.sigmoid(ad.mul(looked, 1.0 / tau)))
        return out

    def predict(features: np.ndarray, batch_size_: int = 8192) -> np.ndarray:
        out = np.empty(features.shape[0])
        for start in range(0, features.shape[0], batch_size_):
            batch = features[start : start + batch_size_]
            logit = model.forward(batch, field_scalers=scalers_for(batch))
            out[start : start + batch_size_] = ad.sigmoid(logit).data.reshape(-1)
        return out

    for epoch in range(epochs):
        tau = tau0 * gamma**epoch
        lam_t = lambda_max * (epoch / max(1, epochs - 1))
        shuffle = make_rng("shuffle", seed, epoch)
        for batch_idx in iter_batches(train_idx, batch_size, shuffle):
            with Tape() as tape:
                logit = model.forward(
                    dataset.features[batch_idx],
                    field_scalers=scalers_for(dataset.features[batch_idx]),
                )
                loss = ad.bce_loss(ad.sigmoid(logit), dataset.labels[batch_idx])
                if lam_t > 0:
                    reg = None
                    for f in model.fields:
                        s = ad.sum(ad.sigmoid(ad.mul(thetas[f"theta/{f.name}"], 1.0 / tau)))
                        reg = s if reg is None else ad.add(reg, s)
                    loss = ad.add(loss, ad.mul(reg, lam_t))
                tape.backward(loss)
            opt.step()
            opt_theta.step()
            model.params.zero_grad()
            thetas.zero_grad()
        kept_history.append(
            int(
                np.sum(
                    [
                        np.count_nonzero(thetas[f"theta/{f.name}"].data >= 0)
                        for f in model.fields
                    ]
                )
            )
        )

    masks = {
        f.name: (thetas[f"theta/{f.name}"].data.reshape(-1) >= 0.0)
        for f in model.fields
    }
    keep_rates = [float(masks[f.name].mean()) for f in model.fields]
    ranking = make_ranking(dataset.field_names, keep_rates, method="optfs", seed=seed)
    model.trained = True
    val_auc, val_ll = _evaluate(predict, dataset, "val")
    test_auc, test_ll = _evaluate(predict, dataset, "test")
    return GatedModel(
        model=model,
        predict=predict,
        val_auc=val_auc,
        val_logloss=val_ll,
        test_auc=test_auc,
        test_logloss=test_ll,
        ranking=ranking,
        extra={"value_masks": masks, "kept_history": kept_history},
    )


# ---------------------------------------------------------------------------
# lpfs


def lpfs_run(
    dataset: Dataset,
    backbone_config: BackboneConfig,
    epochs: int = 4,
    eps0: float = 1.0,
    delta: float = 0.5,
    lr: float = DEFAULT_LR,
    batch_size: int = DEFAULT_BATCH_SIZE,
    seed: int = 0,
) -> GatedModel:
    """Field gates g = theta^2 / (theta^2 + eps_t), eps_t = eps0 * delta^t.

    Model and gate parameters train jointly. The returned predict runs
    with the final soft gates; pass hard=True to zero gates below 0.5.
    """
    if eps0 <= 0:
        raise ConfigError("lpfs: eps0 must be positive")
    if not 0 < delta < 1:
        raise ConfigError("lpfs: delta must lie in (0, 1)")
    train_idx = dataset.split_indices("train")
    if train_idx.size == 0:
        raise ConfigError("train split is empty")

    model = Model(backbone_config, dataset.schema, seed=seed)
    thetas = ParamStore()
    for f in model.fields:
        thetas.add(f"theta/{f.name}", np.ones(1))
    opt = Adam(list(model.params.tensors()) + list(thetas.tensors()), lr=lr)

    eps = eps0

    def gate_tensors() -> list[Tensor]:
        return [ad.smooth_l0_gate(thetas[f"theta/{f.name}"], eps) for f in model.fields]

    def gate_values() -> list[float]:
        return [float(g.data[0]) for g in gate_tensors()]

    def predict(features: np.ndarray, batch_size_: int = 8192, hard: bool = False) -> np.ndarray:
        scalers = gate_tensors()
        if hard:
            scalers = [
                Tensor(np.where(g.data >= 0.5, g.data, 0.0)) for g in scalers
            ]
        out = np.empty(features.shape[0])
        for start in range(0, features.shape[0], batch_size_):
            batch = features[start : start + batch_size_]
            logit = model.forward(batch, field_scalers=scalers)
            out[start : start + batch_size_] = ad.sigmoid(logit).data.reshape(-1)
        return out

    for epoch in range(epochs):
        eps = eps0 * delta**epoch
        shuffle = make_rng("shuffle", seed, epoch)
        for batch_idx in iter_batches(train_idx, batch_size, shuffle):
            with Tape() as tape:
                logit = model.forward(
                    dataset.features[batch_idx], field_scalers=gate_tensors()
                )
                loss = ad.bce_loss(ad.sigmoid(logit), dataset.labels[batch_idx])
                tape.backward(loss)
            opt.step()
            model.params.zero_grad()
            thetas.zero_grad()

    ranking = make_ranking(dataset.field_names, gate_values(), method="lpfs", seed=seed)
    model.trained = True
    val_auc, val_ll = _evaluate(predict, dataset, "val")
    test_auc, test_ll = _evaluate(predict, dataset, "test")
    return GatedModel(
        model=model,
        predict=predict,
        val_auc=val_auc,
        val_logloss=val_ll,
        test_auc=test_auc,
        test_logloss=test_ll,
        ranking=ranking,
        extra={"eps_final": eps, "gate_values": dict(zip(dataset.field_names, gate_values()))},
    )


# ---------------------------------------------------------------------------
# value-mask serialization (optfs hard value selection)

_MASK_MAGIC = b"FSVM"


def save_value_masks(masks: dict[str, np.ndarray], path) -> None:
    """Per field: name length, name, vocab size, packed keep bits."""
    with open(path, "wb") as fh:
        fh.write(_MASK_MAGIC)
        fh.write(struct.pack("<I", len(masks)))
        for name, mask in masks.items():
            raw = name.encode("utf-8")
            bits = np.packbits(np.asarray(mask, dtype=bool))
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", len(mask)))
            fh.write(bits.tobytes())


def load_value_masks(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MASK_MAGIC:
        raise ConfigError("not a value-mask file (bad magic)")
    (count,) = struct.unpack_from("<I", blob, 4)
    off = 8
    masks = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off : off + nlen].decode("utf-8")
        off += nlen
        (vocab,) = struct.unpack_from("<I", blob, off)
        off += 4
        nbytes = (vocab + 7) // 8
        bits = np.unpackbits(
            np.frombuffer(blob, dtype=np.uint8, count=nbytes, offset=off)
        )[:vocab]
        off += nbytes
        masks[name] = bits.astype(bool)
    return masks
