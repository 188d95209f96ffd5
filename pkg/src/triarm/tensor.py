"""Minimal tensor container and reverse-mode differentiation tape.

Everything runs on float64 numpy arrays. A Graph records operations on an
append-only tape; node inputs always reference earlier ids, so the tape is
acyclic by construction and backward() is a single reverse sweep.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np

Array = np.ndarray


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class Tensor:
    """Dense row-major float64 array with explicit shape metadata."""

    __slots__ = ("array",)

    def __init__(self, values, checked: bool = True):
        arr = np.ascontiguousarray(values, dtype=np.float64)
        if checked and not np.all(np.isfinite(arr)):
            raise ValueError("tensor rejects NaN/Inf in checked mode")
        self.array = arr

    @property
    def shape(self) -> list[int]:
        return list(self.array.shape)

    @property
    def data(self) -> Array:
        """Flat row-major view of the underlying storage."""
        return self.array.reshape(-1)

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.shape})"


def _as_array(values) -> Array:
    return np.ascontiguousarray(values, dtype=np.float64)


class Node:
    __slots__ = ("op", "parents", "value", "vjp")

    def __init__(self, op: str, parents: tuple[int, ...], value: Array,
                 vjp: Optional[Callable[[Array], Sequence[Array]]]):
        self.op = op
        self.parents = parents
        self.value = value
        self.vjp = vjp


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum grad over axes that were broadcast to reach its shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Graph:
    """Append-only operation tape with trainable-parameter bookkeeping.

    Node ids are list indices; an op's inputs always have smaller ids than
    the op itself, so reverse id order is a valid reverse topological order.
    A Graph instance is single-threaded; run disjoint Graphs for parallelism.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.parameters: set[int] = set()

    def _push(self, op, parents, value, vjp) -> int:
        self.nodes.append(Node(op, parents, value, vjp))
        return len(self.nodes) - 1

    def value(self, nid: int) -> Array:
        v = self.nodes[nid].value
        if v is None:
            raise RuntimeError("node buffer was freed by backward()")
        return v

    # -- leaves ---------------------------------------------------------

    def constant(self, values) -> int:
        return self._push("const", (), _as_array(values), None)

    def param(self, values) -> int:
        nid = self._push("param", (), _as_array(values), None)
        self.parameters.add(nid)
        return nid

    # -- arithmetic -----------------------------------------------------

    def add(self, a: int, b: int) -> int:
        va, vb = self.value(a), self.value(b)
        out = va + vb

        def vjp(g):
            return _unbroadcast(g, va.shape), _unbroadcast(g, vb.shape)

        return self._push("add", (a, b), out, vjp)

    def sub(self, a: int, b: int) -> int:
        va, vb = self.value(a), self.value(b)
        out = va - vb

        def vjp(g):
            return _unbroadcast(g, va.shape), -_unbroadcast(g, vb.shape)

        return self._push("sub", (a, b), out, vjp)

    def mul(self, a: int, b: int) -> int:
        va, vb = self.value(a), self.value(b)
        out = va * vb

        def vjp(g):
            return _unbroadcast(g * vb, va.shape), _unbroadcast(g * va, vb.shape)

        return self._push("mul", (a, b), out, vjp)

    def scale(self, a: int, c: float) -> int:
        out = self.value(a) * c
        return self._push("scale", (a,), out, lambda g: (g * c,))

    def neg(self, a: int) -> int:
        return self._push("neg", (a,), -self.value(a), lambda g: (-g,))

    def matmul(self, a: int, b: int) -> int:
        va, vb = self.value(a), self.value(b)
        if va.ndim != 2 or vb.ndim != 2 or va.shape[1] != vb.shape[0]:
            raise ShapeError(f"matmul shapes {va.shape} x {vb.shape}")
        out = va @ vb

        def vjp(g):
            return g @ vb.T, va.T @ g

        return self._push("matmul", (a, b), out, vjp)

    # -- nonlinearities -------------------------------------------------

    def tanh(self, a: int) -> int:
        t = np.tanh(self.value(a))
        return self._push("tanh", (a,), t, lambda g: (g * (1.0 - t * t),))

    def relu(self, a: int) -> int:
        va = self.value(a)
        mask = va > 0.0
        return self._push("relu", (a,), va * mask, lambda g: (g * mask,))

    def exp(self, a: int) -> int:
        e = np.exp(self.value(a))
        return self._push("exp", (a,), e, lambda g: (g * e,))

    def log(self, a: int) -> int:
        va = self.value(a)
        return self._push("log", (a,), np.log(va), lambda g: (g / va,))

    def square(self, a: int) -> int:
        va = self.value(a)
        return self._push("square", (a,), va * va, lambda g: (2.0 * g * va,))

    def softplus(self, a: int) -> int:
        va = self.value(a)
        out = np.logaddexp(0.0, va)
        return self._push("softplus", (a,), out,
                          lambda g: (g / (1.0 + np.exp(-va)),))

    def clamp(self, a: int, lo: float, hi: float) -> int:
        # Subgradient convention: identity inside [lo, hi] (bounds included),
        # zero outside.
        va = self.value(a)
        mask = (va >= lo) & (va <= hi)
        out = np.clip(va, lo, hi)
        return self._push("clamp", (a,), out, lambda g: (g * mask,))

    def minimum(self, a: int, b: int) -> int:
        va, vb = self.value(a), self.value(b)
        take_a = va <= vb

        def vjp(g):
            return g * take_a, g * ~take_a

        return self._push("minimum", (a, b), np.minimum(va, vb), vjp)

    # -- shape ops ------------------------------------------------------

    def concat(self, a: int, b: int, axis: int = -1) -> int:
        va, vb = self.value(a), self.value(b)
        out = np.concatenate([va, vb], axis=axis)
        split = va.shape[axis]

        def vjp(g):
            ga, gb = np.split(g, [split], axis=axis)
            return ga, gb

        return self._push("concat", (a, b), out, vjp)

    def reshape(self, a: int, shape: tuple[int, ...]) -> int:
        va = self.value(a)
        return self._push("reshape", (a,), va.reshape(shape),
                          lambda g: (g.reshape(va.shape),))

    def take_rows(self, table: int, idx: Array) -> int:
        vt = self.value(table)
        idx = np.asarray(idx, dtype=np.int64)
        out = vt[idx]

        def vjp(g):
            gt = np.zeros_like(vt)
            np.add.at(gt, idx, g)
            return (gt,)

        return self._push("take_rows", (table,), out, vjp)

    # -- reductions -----------------------------------------------------

    def sum(self, a: int) -> int:
        va = self.value(a)
        out = np.asarray(va.sum())
        return self._push("sum", (a,), out,
                          lambda g: (np.broadcast_to(g, va.shape),))

    def mean(self, a: int) -> int:
        va = self.value(a)
        n = va.size
        out = np.asarray(va.mean())
        return self._push("mean", (a,), out,
                          lambda g: (np.broadcast_to(g / n, va.shape),))

    def sum_axis(self, a: int, axis: int) -> int:
        va = self.value(a)
        out = va.sum(axis=axis)

        def vjp(g):
            return (np.broadcast_to(np.expand_dims(g, axis), va.shape),)

        return self._push("sum_axis", (a,), out, vjp)

    def mean_axis(self, a: int, axis: int) -> int:
        va = self.value(a)
        n = va.shape[axis]
        out = va.mean(axis=axis)

        def vjp(g):
            return (np.broadcast_to(np.expand_dims(g / n, axis), va.shape),)

        return self._push("mean_axis", (a,), out, vjp)

    def normalize_rows(self, a: int, eps: float = 1e-12) -> int:
        """Unit L2 norm along the last axis."""
        va = self.value(a)
        norm = np.sqrt((va * va).sum(axis=-1, keepdims=True)) + eps
        out = va / norm

        def vjp(g):
            dot = (g * va).sum(axis=-1, keepdims=True)
            return (g / norm - va * (dot / norm ** 3),)

        return self._push("normalize", (a,), out, vjp)

    # -- convolutions ---------------------------------------------------

    def conv1d(self, signal: int, kernels: int, stride: int = 1) -> int:
        """Valid cross-correlation. signal (N,Cin,L) or (Cin,L); kernels
        (Cout,Cin,k). Output length floor((L-k)/stride)+1."""
        x = self.value(signal)
        w = self.value(kernels)
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        if stride < 1:
            raise ShapeError("stride must be >= 1")
        n, cin, length = x.shape
        cout, cin_w, k = w.shape
        if cin != cin_w:
            raise ShapeError(f"conv1d channels {cin} vs {cin_w}")
        if k > length:
            raise ShapeError(f"conv1d kernel {k} longer than signal {length}")
        windows = np.lib.stride_tricks.sliding_window_view(x, k, axis=2)
        windows = windows[:, :, ::stride, :]          # (N,Cin,L',k)
        out = np.einsum("nclt,oct->nol", windows, w, optimize=True)
        lout = out.shape[2]

        def vjp(g):
            if squeeze:
                g = g.reshape(1, cout, lout)
            gw = np.einsum("nclt,nol->oct", windows, g, optimize=True)
            gx = np.zeros((n, cin, length))
            span = (lout - 1) * stride + 1
            for t in range(k):
                gx[:, :, t:t + span:stride] += np.einsum(
                    "nol,oc->ncl", g, w[:, :, t], optimize=True)
            if squeeze:
                gx = gx[0]
            return gx, gw

        if squeeze:
            out = out[0]
        return self._push("conv1d", (signal, kernels), out, vjp)

    def conv2d(self, image: int, kernels: int, stride: int = 1) -> int:
        """Valid cross-correlation. image (N,Cin,H,W) or (Cin,H,W); kernels
        (Cout,Cin,k,k)."""
        x = self.value(image)
        w = self.value(kernels)
        squeeze = x.ndim == 3
        if squeeze:
            x = x[None]
        if stride < 1:
            raise ShapeError("stride must be >= 1")
        n, cin, h, wid = x.shape
        cout, cin_w, k, k2 = w.shape
        if cin != cin_w or k != k2:
            raise ShapeError(f"conv2d kernels {w.shape} vs image {x.shape}")
        if k > h or k > wid:
            raise ShapeError("conv2d kernel larger than image")
        windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
        windows = windows[:, :, ::stride, ::stride, :, :]   # (N,Cin,H',W',k,k)
        out = np.einsum("nchwij,ocij->nohw", windows, w, optimize=True)
        hout, wout = out.shape[2], out.shape[3]

        def vjp(g):
            if squeeze:
                g = g.reshape(1, cout, hout, wout)
            gw = np.einsum("nchwij,nohw->ocij", windows, g, optimize=True)
            gx = np.zeros((n, cin, h, wid))
            hspan = (hout - 1) * stride + 1
            wspan = (wout - 1) * stride + 1
            for i in range(k):
                for j in range(k):
                    gx[:, :, i:i + hspan:stride, j:j + wspan:stride] += np.einsum(
                        "nohw,oc->nchw", g, w[:, :, i, j], optimize=True)
            if squeeze:
                gx = gx[0]
            return gx, gw

        if squeeze:
            out = out[0]
        return self._push("conv2d", (image, kernels), out, vjp)

    # -- losses ---------------------------------------------------------

    def cross_entropy(self, logits: int, labels: Array) -> int:
        """Mean softmax cross-entropy over rows; labels are class indices."""
        z = self.value(logits)
        labels = np.asarray(labels, dtype=np.int64)
        zmax = z.max(axis=1, keepdims=True)
        ez = np.exp(z - zmax)
        probs = ez / ez.sum(axis=1, keepdims=True)
        n = z.shape[0]
        nll = -(z[np.arange(n), labels] - zmax[:, 0]
                - np.log(ez.sum(axis=1)))
        out = np.asarray(nll.mean())

        def vjp(g):
            gz = probs.copy()
            gz[np.arange(n), labels] -= 1.0
            return (gz * (g / n),)

        return self._push("cross_entropy", (logits,), out, vjp)

    # -- backward -------------------------------------------------------

    def backward(self, loss: int) -> dict[int, Array]:
        """Reverse sweep from a scalar loss node.

        Returns gradients keyed by parameter node id. Buffers of
        non-parameter nodes are freed afterwards; the graph is spent.
        """
        if self.value(loss).size != 1:
            raise ShapeError("backward requires a scalar loss node")
        grads: dict[int, Array] = {loss: np.ones_like(self.nodes[loss].value)}
        for nid in range(loss, -1, -1):
            node = self.nodes[nid]
            if node.vjp is None:
                continue  # leaves keep their accumulated entry
            g = grads.pop(nid, None)
            if g is None:
                continue
            for pid, pg in zip(node.parents, node.vjp(g)):
                acc = grads.get(pid)
                if acc is None:
                    grads[pid] = pg
                else:
                    grads[pid] = acc + pg
        out = {nid: grads[nid] for nid in self.parameters if nid in grads}
        for nid, node in enumerate(self.nodes):
            if nid not in self.parameters:
                node.value = None
                node.vjp = None
        return out


# -- module-level conveniences (no tape, plain numpy) -------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.array.ndim != 2 or b.array.ndim != 2 or a.array.shape[1] != b.array.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} x {b.shape}")
    return Tensor(a.array @ b.array)


def conv1d(signal: Tensor, kernels: Tensor, stride: int = 1) -> Tensor:
    g = Graph()
    out = g.conv1d(g.constant(signal.array), g.constant(kernels.array), stride)
    return Tensor(g.value(out))


def conv2d(image: Tensor, kernels: Tensor, stride: int = 1) -> Tensor:
    g = Graph()
    out = g.conv2d(g.constant(image.array), g.constant(kernels.array), stride)
    return Tensor(g.value(out))


def log1m_tanh_sq(u: Array) -> Array:
    """log(1 - tanh(u)^2) computed stably as 2*(log 2 - u - softplus(-2u))."""
    return 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))
