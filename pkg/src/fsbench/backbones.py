"""The four click-model architectures over per-field embeddings.

Every model maps a batch of integer value indices to one logit per
sample. Embeddings are (vocab_size, d) per field with d = 8 by default;
only selected fields get embedding rows, so hard selection removes the
corresponding parameters entirely.

Initialization: embeddings and per-value linear weights uniform in
[-0.05, 0.05], dense layers Xavier-uniform, biases zero. Draws happen in
selected-field order and then a fixed layer order, so a model built on a
subset of fields is bit-identical to one built on a schema containing
only those fields.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .data import Dataset, FieldSchema
from .errors import ConfigError, DimensionError
from .metrics import auc as auc_metric
from .metrics import logloss as logloss_metric
from .optim import Adam, ParamStore
from .rng import make_rng

BACKBONE_KINDS = ("wide_deep", "deepfm", "dcn", "fibinet")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
DEFAULT_LR = 0.001
DEFAULT_BATCH_SIZE = 4096
DEFAULT_EMBED_DIM = 8


@dataclass(frozen=True)
class BackboneConfig:
    kind: str
    mlp_dims: tuple[int, ...] = (64, 32)
    cross_layers: int = 3
    senet_reduction: int = 3
    embedding_dim: int = DEFAULT_EMBED_DIM

    def __post_init__(self):
        if self.kind not in BACKBONE_KINDS:
            raise ConfigError(f"unknown backbone kind: {self.kind}")
        if not self.mlp_dims:
            raise ConfigError("mlp_dims must be non-empty")
        if self.cross_layers < 1:
            raise ConfigError("cross_layers must be >= 1")
        if self.senet_reduction < 1:
            raise ConfigError("senet_reduction must be >= 1")
        if self.embedding_dim < 1:
            raise ConfigError("embedding_dim must be >= 1")

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "mlp_dims": list(self.mlp_dims),
            "cross_layers": self.cross_layers,
            "senet_reduction": self.senet_reduction,
            "embedding_dim": self.embedding_dim,
        }

    @classmethod
    def from_json(cls, raw: dict) -> "BackboneConfig":
        return cls(
            kind=raw["kind"],
            mlp_dims=tuple(raw["mlp_dims"]),
            cross_layers=raw["cross_layers"],
            senet_reduction=raw["senet_reduction"],
            embedding_dim=raw["embedding_dim"],
        )


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Model:
    """One backbone instance over a field subset of a schema."""

    def __init__(
        self,
        config: BackboneConfig,
        schema: list[FieldSchema],
        selected_fields: list[str] | None = None,
        seed: int = 0,
    ):
        schema_names = [f.name for f in schema]
        if selected_fields is None:
            selected_fields = list(schema_names)
        if not selected_fields:
            raise ConfigError("selected_fields must be non-empty")
        unknown = set(selected_fields) - set(schema_names)
        if unknown:
            raise ConfigError(f"selected fields not in schema: {sorted(unknown)}")
        if config.kind == "fibinet" and len(selected_fields) < 2:
            raise ConfigError("fibinet needs at least two fields for bilinear terms")
        self.config = config
        self.seed = seed
        selected = set(selected_fields)
        self.fields = [f for f in schema if f.name in selected]
        self.column = {f.name: schema_names.index(f.name) for f in self.fields}
        self.params = ParamStore()
        self.value_row_scale: dict[str, np.ndarray] = {}
        self.trained = False
        self.last_embeddings: list[Tensor] | None = None
        self._init_params()

    # -- construction --------------------------------------------------------

    def _init_params(self) -> None:
        cfg = self.config
        d = cfg.embedding_dim
        rng = make_rng("model-init", cfg.kind, self.seed)
        for f in self.fields:
            self.params.add(
                f"emb/{f.name}", rng.uniform(-0.05, 0.05, size=(f.vocab_size, d))
            )
        n_fields = len(self.fields)
        wide_kinds = ("wide_deep", "deepfm")
        if cfg.kind in wide_kinds:
            for f in self.fields:
                self.params.add(
                    f"wide/{f.name}", rng.uniform(-0.05, 0.05, size=(f.vocab_size, 1))
                )
        concat_dim = n_fields * d
        if cfg.kind in ("wide_deep", "deepfm", "dcn"):
            self._add_mlp(rng, "mlp", concat_dim, cfg.mlp_dims)
        if cfg.kind == "dcn":
            for layer in range(cfg.cross_layers):
                self.params.add(f"cross/w{layer}", _xavier(rng, concat_dim, 1))
                self.params.add(f"cross/b{layer}", np.zeros(concat_dim))
            self.params.add(
                "final/w", _xavier(rng, concat_dim + cfg.mlp_dims[-1], 1)
            )
        if cfg.kind == "fibinet":
            hidden = max(1, math.ceil(n_fields / cfg.senet_reduction))
            self.params.add("senet/w1", _xavier(rng, n_fields, hidden))
            self.params.add("senet/w2", _xavier(rng, hidden, n_fields))
            self.params.add("bilinear/w", _xavier(rng, d, d))
            n_pairs = n_fields * (n_fields - 1) // 2
            self._add_mlp(rng, "mlp", 2 * n_pairs * d, cfg.mlp_dims)
        self.params.add("bias", np.zeros(1))

    def _add_mlp(self, rng, prefix: str, in_dim: int, dims: tuple[int, ...]) -> None:
        prev = in_dim
        for i, width in enumerate(dims):
            self.params.add(f"{prefix}/w{i}", _xavier(rng, prev, width))
            self.params.add(f"{prefix}/b{i}", np.zeros(width))
            prev = width
        self.params.add(f"{prefix}/out", _xavier(rng, prev, 1))

    @property
    def field_names(self) -> list[str]:
        return [f.name for f in self.fields]

    @property
    def embedding_rows(self) -> int:
        total = 0
        for f in self.fields:
            scale = self.value_row_scale.get(f.name)
            total += f.vocab_size if scale is None else int(np.count_nonzero(scale))
        return total

    @property
    def param_count(self) -> int:
        return self.params.count

    def set_value_masks(self, masks: dict[str, np.ndarray]) -> None:
        """Pin embedding rows of masked-out values to zero (no storage kept)."""
        for f in self.fields:
            if f.name not in masks:
                continue
            mask = np.asarray(masks[f.name], dtype=bool)
            if mask.shape != (f.vocab_size,):
                raise ConfigError(f"value mask for {f.name} has wrong length")
            self.value_row_scale[f.name] = mask.astype(np.float64)
            self.params[f"emb/{f.name}"].data[~mask] = 0.0

    # -- forward -------------------------------------------------------------

    def _field_batch(self, batch: np.ndarray, f: FieldSchema) -> np.ndarray:
        idx = batch[:, self.column[f.name]]
        if idx.size and (idx.min() < 0 or idx.max() >= f.vocab_size):
            raise DimensionError(
                f"field {f.name}: index outside [0, {f.vocab_size})"
            )
        return idx

    def forward(
        self,
        batch: np.ndarray,
        field_scalers: list[Tensor] | None = None,
        collect_embeddings: bool = False,
    ) -> Tensor:
        """Logits (B, 1). field_scalers multiplies each field embedding by a
        size-1 or (B, 1) tensor (soft selection / learned gates)."""
        if field_scalers is not None and len(field_scalers) != len(self.fields):
            raise DimensionError("one scaler per selected field required")
        embs: list[Tensor] = []
        raw_embs: list[Tensor] = []
        for i, f in enumerate(self.fields):
            idx = self._field_batch(batch, f)
            e = ad.embed_lookup(
                self.params[f"emb/{f.name}"], idx, self.value_row_scale.get(f.name)
            )
            raw_embs.append(e)
            if field_scalers is not None and field_scalers[i] is not None:
                e = ad.mul(e, field_scalers[i])
            embs.append(e)
        if collect_embeddings:
            self.last_embeddings = raw_embs

        kind = self.config.kind
        if kind == "wide_deep":
            logit = ad.add(
                self._wide_sum(batch, field_scalers), self._mlp(ad.concat(embs))
            )
        elif kind == "deepfm":
            logit = ad.add(
                ad.add(self._wide_sum(batch, field_scalers), self._fm(embs)),
                self._mlp(ad.concat(embs)),
            )
        elif kind == "dcn":
            x0 = ad.concat(embs)
            logit = self._dcn(x0)
        else:
            logit = self._fibinet(embs)
        return ad.add(logit, self.params["bias"])

    def _wide_sum(self, batch: np.ndarray, field_scalers=None) -> Tensor:
        # a field's gate scales every path that reads the field, the
        # per-value linear term included
        terms = []
        for i, f in enumerate(self.fields):
            t = ad.embed_lookup(
                self.params[f"wide/{f.name}"],
                self._field_batch(batch, f),
                self.value_row_scale.get(f.name),
            )
            if field_scalers is not None and field_scalers[i] is not None:
                t = ad.mul(t, field_scalers[i])
            terms.append(t)
        out = terms[0]
        for t in terms[1:]:
            out = ad.add(out, t)
        return out

    def _fm(self, embs: list[Tensor]) -> Tensor:
        """Sum of pairwise inner products: ((sum e)^2 - sum e^2) / 2."""
        s = embs[0]
        for e in embs[1:]:
            s = ad.add(s, e)
        sq = ad.mul(embs[0], embs[0])
        for e in embs[1:]:
            sq = ad.add(sq, ad.mul(e, e))
        diff = ad.sub(ad.mul(s, s), sq)
        return ad.mul(ad.sum(diff, axis=1, keepdims=True), 0.5)

    def _mlp(self, x: Tensor) -> Tensor:
        h = x
        for i in range(len(self.config.mlp_dims)):
            h = ad.relu(
                ad.add(ad.matmul(h, self.params[f"mlp/w{i}"]), self.params[f"mlp/b{i}"])
            )
        return ad.matmul(h, self.params["mlp/out"])

    def _dcn(self, x0: Tensor) -> Tensor:
        x = x0
        for layer in range(self.config.cross_layers):
            xw = ad.matmul(x, self.params[f"cross/w{layer}"])
            x = ad.add(
                ad.add(ad.mul(x0, xw), self.params[f"cross/b{layer}"]), x
            )
        deep = self._mlp_hidden(x0)
        return ad.matmul(ad.concat([x, deep]), self.params["final/w"])

    def _mlp_hidden(self, x: Tensor) -> Tensor:
        h = x
        for i in range(len(self.config.mlp_dims)):
            h = ad.relu(
                ad.add(ad.matmul(h, self.params[f"mlp/w{i}"]), self.params[f"mlp/b{i}"])
            )
        return h

    def _fibinet(self, embs: list[Tensor]) -> Tensor:
        pooled = ad.concat([ad.mean(e, axis=1, keepdims=True) for e in embs])
        hidden = ad.relu(ad.matmul(pooled, self.params["senet/w1"]))
        scales = ad.sigmoid(ad.matmul(hidden, self.params["senet/w2"]))
        scaled = [ad.mul(e, ad.col(scales, i)) for i, e in enumerate(embs)]
        w = self.params["bilinear/w"]
        interactions = []
        for group in (embs, scaled):
            proj = [ad.matmul(e, w) for e in group]
            for i in range(len(group)):
                for j in range(i + 1, len(group)):
                    interactions.append(ad.mul(proj[i], group[j]))
        return self._mlp(ad.concat(interactions))

    # -- inference -----------------------------------------------------------

    def predict_proba(
        self,
        features: np.ndarray,
        batch_size: int = 8192,
        field_scalers: list[Tensor] | None = None,
    ) -> np.ndarray:
        out = np.empty(features.shape[0])
        for start in range(0, features.shape[0], batch_size):
            batch = features[start : start + batch_size]
            logit = self.forward(batch, field_scalers=field_scalers)
            out[start : start + batch_size] = ad.sigmoid(logit).data.reshape(-1)
        return out

    # -- checkpointing -------------------------------------------------------

    def save(self, path) -> None:
        descriptor = {
            "backbone": self.config.to_json(),
            "selected_fields": self.field_names,
            "seed": self.seed,
            "trained": self.trained,
        }
        desc = json.dumps(descriptor, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(b"FSM1")
            fh.write(struct.pack("<I", len(desc)))
            fh.write(desc)
            fh.write(self.params.to_bytes())

    @classmethod
    def load(cls, path, schema: list[FieldSchema]) -> "Model":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != b"FSM1":
            raise ConfigError("not a model checkpoint (bad magic)")
        (dlen,) = struct.unpack_from("<I", blob, 4)
        descriptor = json.loads(blob[8 : 8 + dlen].decode("utf-8"))
        model = cls(
            BackboneConfig.from_json(descriptor["backbone"]),
            schema,
            descriptor["selected_fields"],
            seed=descriptor["seed"],
        )
        loaded = ParamStore.from_bytes(blob[8 + dlen :])
        model.params.restore(loaded.snapshot())
        model.trained = descriptor["trained"]
        return model


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: Model
    val_auc: float
    val_logloss: float
    test_auc: float
    test_logloss: float
    epochs_run: int
    best_epoch: int
    history: list = field(default_factory=list)


def iter_batches(indices: np.ndarray, batch_size: int, rng=None):
    idx = indices if rng is None else rng.permutation(indices)
    for start in range(0, len(idx), batch_size):
        yield idx[start : start + batch_size]


def evaluate(
    model: Model, dataset: Dataset, split: str = "test", batch_size: int = 8192
) -> tuple[float, float]:
    idx = dataset.split_indices(split)
    probs = model.predict_proba(dataset.features[idx], batch_size)
    labels = dataset.labels[idx]
    return auc_metric(probs, labels), logloss_metric(probs, labels)


def train(
    model: Model,
    dataset: Dataset,
    epochs: int = 10,
    batch_size: int = DEFAULT_BATCH_SIZE,
    lr: float = DEFAULT_LR,
    patience: int = 2,
    seed: int = 0,
) -> TrainResult:
    """Adam training with best-validation-AUC checkpointing.

    Epoch shuffles derive from (seed, epoch) only, so two runs with the
    same seed produce bit-identical parameters. The best-val checkpoint
    is restored before the test evaluation.
    """
    train_idx = dataset.split_indices("train")
    if train_idx.size == 0:
        raise ConfigError("train split is empty")
    opt = Adam(model.params, lr=lr, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS)
    best_auc, best_snapshot, best_epoch = -np.inf, None, -1
    best_logloss = np.nan
    history = []
    epochs_run = 0
    for epoch in range(epochs):
        rng = make_rng("shuffle", seed, epoch)
        for batch_idx in iter_batches(train_idx, batch_size, rng):
            with Tape() as tape:
                logit = model.forward(dataset.features[batch_idx])
                loss = ad.bce_loss(ad.sigmoid(logit), dataset.labels[batch_idx])
                tape.backward(loss)
            opt.step()
            opt.zero_grad()
        epochs_run = epoch + 1
        val_auc, val_ll = evaluate(model, dataset, "val", batch_size)
        history.append((epoch, val_auc, val_ll))
        if val_auc > best_auc:
            best_auc, best_snapshot, best_epoch = val_auc, model.params.snapshot(), epoch
            best_logloss = val_ll
        elif epoch - best_epoch >= patience:
            break
    model.params.restore(best_snapshot)
    model.trained = True
    test_auc, test_ll = evaluate(model, dataset, "test", batch_size)
    return TrainResult(
        model=model,
        val_auc=best_auc,
        val_logloss=best_logloss,
        test_auc=test_auc,
        test_logloss=test_ll,
        epochs_run=epochs_run,
        best_epoch=best_epoch,
        history=history,
    )
