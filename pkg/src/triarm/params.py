"""Named parameter collections, a binary checkpoint container, and optimizers."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

Array = np.ndarray

CHECKPOINT_MAGIC = b"TACP"
CHECKPOINT_VERSION = 1


class ParamSet:
    """Ordered, named float64 tensors; the unit that optimizers act on.

    Flatten/unflatten is an exact bijection; two sets built from the same
    architecture share name order, which is what lets gradients, optimizer
    moments and Polyak averages be keyed by name.
    """

    def __init__(self, entries: Iterable[tuple[str, Array]], version: int = 0):
        self._names: list[str] = []
        self._values: dict[str, Array] = {}
        for name, value in entries:
            if name in self._values:
                raise ValueError(f"duplicate parameter name {name!r}")
            self._names.append(name)
            self._values[name] = np.ascontiguousarray(value, dtype=np.float64)
        self.version = version

    @property
    def names(self) -> list[str]:
        return list(self._names)

    def __getitem__(self, name: str) -> Array:
        return self._values[name]

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def items(self):
        for name in self._names:
            yield name, self._values[name]

    def copy(self) -> "ParamSet":
        return ParamSet(((n, v.copy()) for n, v in self.items()),
                        version=self.version)

    def replace(self, updates: dict[str, Array]) -> "ParamSet":
        """New ParamSet with some tensors swapped; bumps the version."""
        return ParamSet(
            ((n, updates[n] if n in updates else self._values[n])
             for n in self._names),
            version=self.version + 1)

    def flatten(self) -> Array:
        if not self._names:
            return np.zeros(0)
        return np.concatenate([self._values[n].reshape(-1) for n in self._names])

    def unflatten(self, flat: Array) -> "ParamSet":
        flat = np.asarray(flat, dtype=np.float64)
        out = []
        offset = 0
        for name in self._names:
            shape = self._values[name].shape
            size = self._values[name].size
            out.append((name, flat[offset:offset + size].reshape(shape).copy()))
            offset += size
        if offset != flat.size:
            raise ValueError(f"flat vector length {flat.size}, expected {offset}")
        return ParamSet(out, version=self.version)

    def num_params(self) -> int:
        return sum(v.size for v in self._values.values())

    def digest(self) -> str:
        """Content hash over names, shapes and values."""
        h = hashlib.sha256()
        for name, value in self.items():
            h.update(name.encode())
            h.update(str(value.shape).encode())
            h.update(np.ascontiguousarray(value).tobytes())
        return h.hexdigest()

    def allclose(self, other: "ParamSet", rtol=0.0, atol=0.0) -> bool:
        if self._names != other._names:
            return False
        return all(np.allclose(self._values[n], other._values[n],
                               rtol=rtol, atol=atol) for n in self._names)


# -- checkpoint container ----------------------------------------------------
#
# Layout (little-endian):
#   magic "TACP" | u32 format version | u32 tensor count
#   per tensor: u32 name length | name utf-8 | u32 ndim | u32 dims... | f64 data

def save_tensors(path, tensors: dict[str, Array]) -> None:
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(tensors)))
        for name, value in tensors.items():
            arr = np.ascontiguousarray(value, dtype=np.float64)
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<I", dim))
            f.write(arr.tobytes())


def load_tensors(path) -> dict[str, Array]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        version, count = struct.unpack("<II", f.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint format version {version}")
        out: dict[str, Array] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", f.read(4))
            name = f.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim)) if ndim else ()
            size = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(8 * size), dtype="<f8")
            out[name] = data.reshape(shape).copy()
        return out


def save_paramset(path, params: ParamSet) -> None:
    tensors = {name: value for name, value in params.items()}
    tensors["__paramset_version__"] = np.asarray([float(params.version)])
    save_tensors(path, tensors)


def load_paramset(path) -> ParamSet:
    tensors = load_tensors(path)
    version = int(tensors.pop("__paramset_version__", np.zeros(1))[0])
    return ParamSet(tensors.items(), version=version)


# -- optimizers --------------------------------------------------------------

def _check_grads(params: ParamSet, grads: dict[str, Array]) -> None:
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != params[name].shape:
            raise ValueError(
                f"gradient shape {np.shape(g)} != param shape "
                f"{params[name].shape} for {name!r}")


def sgd_step(params: ParamSet, grads: dict[str, Array], lr: float) -> ParamSet:
    """Plain gradient descent: p <- p - lr * g. Missing grads leave p as-is."""
    _check_grads(params, grads)
    return params.replace({n: params[n] - lr * g for n, g in grads.items()})


@dataclass
class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""
    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def init(cls, params: ParamSet) -> "AdamState":
        return cls(m={n: np.zeros_like(v) for n, v in params.items()},
                   v={n: np.zeros_like(v) for n, v in params.items()})


def adam_step(params: ParamSet, grads: dict[str, Array], lr: float,
              state: AdamState, betas=(0.9, 0.999), eps: float = 1e-8,
              weight_decay: float = 0.0) -> ParamSet:
    """Standard moment-tracking Adam update; mutates `state` in place.

    weight_decay is decoupled (applied to the parameter, not the
    gradient) and covers only gradient-bearing tensors, like the update.
    """
    _check_grads(params, grads)
    b1, b2 = betas
    state.t += 1
    t = state.t
    updates = {}
    for name, g in grads.items():
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(params[name])
            v = np.zeros_like(params[name])
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        mhat = m / (1.0 - b1 ** t)
        vhat = v / (1.0 - b2 ** t)
        updates[name] = params[name] - lr * mhat / (np.sqrt(vhat) + eps) \
            - weight_decay * params[name]
    return params.replace(updates)
