"""Trainable-parameter registry, the Adam optimizer, and checkpoint I/O.

Checkpoint layout (all integers little-endian uint32, data little-endian
float64): magic ``FSP1``, version, parameter count, then per parameter
name length, utf-8 name, shape rank, the dims, and the raw values.
"""

from __future__ import annotations

import hashlib
import struct
from typing import Iterator

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, DimensionError

_MAGIC = b"FSP1"
_VERSION = 1


class ParamStore:
    """Named trainable tensors; insertion order is the canonical order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name: {name}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def adopt(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name: {name}")
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> Iterator[Tensor]:
        return iter(self._params.values())

    def items(self):
        return self._params.items()

    @property
    def count(self) -> int:
        return int(np.sum([t.size for t in self._params.values()])) if self._params else 0

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def state_hash(self) -> str:
        h = hashlib.sha256()
        for name, t in self._params.items():
            h.update(name.encode("utf-8"))
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, data in snap.items():
            t = self._params[name]
            if t.data.shape != data.shape:
                raise DimensionError(f"restore: shape mismatch for {name}")
            t.data = data.copy()

    # -- binary serialization ------------------------------------------------

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    def to_bytes(self) -> bytes:
        chunks = [_MAGIC, struct.pack("<II", _VERSION, len(self._params))]
        for name, t in self._params.items():
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(t.data, dtype="<f8")
            chunks.append(struct.pack("<I", len(raw)))
            chunks.append(raw)
            chunks.append(struct.pack("<I", arr.ndim))
            chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            chunks.append(arr.tobytes())
        return b"".join(chunks)

    @classmethod
    def load(cls, path) -> "ParamStore":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ParamStore":
        store = cls()
        if blob[:4] != _MAGIC:
            raise ConfigError("not a parameter checkpoint (bad magic)")
        version, count = struct.unpack_from("<II", blob, 4)
        if version != _VERSION:
            raise ConfigError(f"unsupported checkpoint version {version}")
        off = 12
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off : off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(dims)
            off += 8 * n
            store.add(name, data.astype(np.float64))
        return store


class Adam:
    """Adam with bias correction; the step counter starts at 1.

    Parameters with a ``None`` gradient are skipped entirely, so a step
    with no gradients leaves everything untouched.
    """

    def __init__(
        self,
        params: ParamStore | list[Tensor],
        lr: float = 0.001,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params.tensors()) if isinstance(params, ParamStore) else list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise DimensionError("adam: gradient/parameter shape mismatch")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class SGD:
    """Plain gradient descent; keeps gradient magnitudes meaningful where
    Adam's per-parameter normalization would flatten them."""

    def __init__(self, params: ParamStore | list[Tensor], lr: float):
        self.params = list(params.tensors()) if isinstance(params, ParamStore) else list(params)
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                continue
            if p.grad.shape != p.data.shape:
                raise DimensionError("sgd: gradient/parameter shape mismatch")
            p.data = p.data - self.lr * p.grad

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
