"""Tape-based reverse-mode differentiation over dense float64 matrices.

Every value is a 2-D array. Shapes must match exactly except for adding a
``1 x cols`` row vector (a bias) to a matrix. A :class:`Tape` records nodes in
creation order, which is already a topological order, and is consumed by one
call to :meth:`Tape.backward`.

    tape = Tape()
    w = tape.param(store, "w")
    loss = mse(matmul(tape.constant(x), w), y)
    tape.backward(loss)
    store.grads["w"]
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .errors import SchemaViolation, ShapeError, TapeConsumed

_SIGMOID_CLAMP = 500.0

BackwardFn = Callable[[np.ndarray], tuple]


class Var:
    __slots__ = ("tape", "value", "grad", "parents", "backward_fn", "requires_grad", "param_name")

    def __init__(self, tape: "Tape", value: np.ndarray, parents: tuple = (), backward_fn=None,
                 requires_grad: bool = False, param_name: str | None = None):
        self.tape = tape
        self.value = value
        self.grad: np.ndarray | None = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.param_name = param_name

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        tag = f" param={self.param_name}" if self.param_name else ""
        return f"Var(shape={self.shape}{tag})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return hadamard(self, other)


class ParameterStore:
    """Named trainable matrices with a gradient slot each."""

    MAGIC = b"TGFCKPT\x00"
    VERSION = 1

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise SchemaViolation(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=np.float64)
        if value.ndim != 2:
            raise ShapeError(f"parameter {name!r} must be 2-D, got shape {value.shape}")
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def n_values(self) -> int:
        return sum(v.size for v in self.params.values())

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "ParameterStore":
        out = ParameterStore()
        for k, v in self.params.items():
            out.add(k, v.copy())
        return out

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(self.params[k].tobytes())
        return h.hexdigest()

    def save(self, path: str | Path) -> None:
        """Binary checkpoint: magic, version, count, then (name, rows, cols, float64 LE data)."""
        with open(path, "wb") as fh:
            fh.write(self.MAGIC)
            fh.write(struct.pack("<II", self.VERSION, len(self.params)))
            for name, value in self.params.items():
                raw = name.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<II", *value.shape))
                fh.write(value.astype("<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "ParameterStore":
        data = Path(path).read_bytes()
        if data[:8] != cls.MAGIC:
            raise SchemaViolation(f"{path}: not a checkpoint file")
        version, count = struct.unpack_from("<II", data, 8)
        if version != cls.VERSION:
            raise SchemaViolation(f"{path}: unsupported checkpoint version {version}")
        pos = 16
        store = cls()
        for _ in range(count):
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos : pos + n].decode("utf-8")
            pos += n
            rows, cols = struct.unpack_from("<II", data, pos)
            pos += 8
            size = rows * cols * 8
            value = np.frombuffer(data[pos : pos + size], dtype="<f8").reshape(rows, cols)
            pos += size
            store.add(name, value.astype(np.float64))
        return store


class Tape:
    def __init__(self) -> None:
        self.nodes: list[Var] = []
        self.consumed = False

    def __len__(self) -> int:
        return len(self.nodes)

    def _push(self, value, parents=(), backward_fn=None, requires_grad=False, param_name=None) -> Var:
        if self.consumed:
            raise TapeConsumed("tape already used for a backward pass")
        v = Var(self, value, parents, backward_fn, requires_grad, param_name)
        self.nodes.append(v)
        return v

    def constant(self, value) -> Var:
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2:
            raise ShapeError(f"constants must be 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise SchemaViolation("non-finite constant")
        return self._push(arr)

    def param(self, store: ParameterStore, name: str) -> Var:
        return self._push(store.params[name], requires_grad=True, param_name=name)

    def params(self, store: ParameterStore) -> dict[str, Var]:
        return {name: self.param(store, name) for name in store}

    def backward(self, loss: Var, store: ParameterStore | None = None) -> None:
        """Accumulate dloss/dparam into ``store.grads`` (if given) and each param Var's ``grad``."""
        if self.consumed:
            raise TapeConsumed("backward already called on this tape")
        if loss.tape is not self:
            raise SchemaViolation("loss was not recorded on this tape")
        if loss.shape != (1, 1):
            raise ShapeError(f"loss must be 1 x 1, got {loss.shape}")
        self.consumed = True
        loss.grad = np.ones((1, 1))
        for node in reversed(self.nodes):
            if node.grad is None or node.backward_fn is None:
                continue
            parent_grads = node.backward_fn(node.grad)
            for parent, g in zip(node.parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g
        if store is not None:
            for node in self.nodes:
                if node.param_name is not None and node.grad is not None:
                    store.grads[node.param_name] += node.grad


def _as_var(x, like: Var) -> Var:
    return x if isinstance(x, Var) else like.tape.constant(x)


def _op(value, parents, backward_fn) -> Var:
    tape = parents[0].tape
    req = any(p.requires_grad for p in parents)
    return tape._push(value, parents, backward_fn if req else None, req)


def _same_shape(a: Var, b: Var, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def matmul(a: Var, b) -> Var:
    b = _as_var(b, a)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _op(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def add(a: Var, b) -> Var:
    """Elementwise sum; ``b`` may be a ``1 x cols`` row vector added to every row."""
    b = _as_var(b, a)
    if a.shape == b.shape:
        return _op(a.value + b.value, (a, b), lambda g: (g, g))
    if b.shape == (1, a.shape[1]):
        return _op(a.value + b.value, (a, b), lambda g: (g, g.sum(axis=0, keepdims=True)))
    raise ShapeError(f"add: shapes {a.shape} and {b.shape} are incompatible")


def sub(a: Var, b) -> Var:
    b = _as_var(b, a)
    _same_shape(a, b, "sub")
    return _op(a.value - b.value, (a, b), lambda g: (g, -g))


def scale(a: Var, k: float) -> Var:
    k = float(k)
    return _op(a.value * k, (a,), lambda g: (g * k,))


def hadamard(a: Var, b) -> Var:
    b = _as_var(b, a)
    _same_shape(a, b, "hadamard")
    av, bv = a.value, b.value
    return _op(av * bv, (a, b), lambda g: (g * bv, g * av))


def sigmoid(a: Var) -> Var:
    s = 1.0 / (1.0 + np.exp(-np.clip(a.value, -_SIGMOID_CLAMP, _SIGMOID_CLAMP)))
    return _op(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Var) -> Var:
    t = np.tanh(a.value)
    return _op(t, (a,), lambda g: (g * (1.0 - t * t),))


def relu(a: Var) -> Var:
    mask = a.value > 0
    return _op(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def softmax_cols(a: Var) -> Var:
    """Softmax down each column (every column sums to 1), max-stabilized."""
    e = np.exp(a.value - a.value.max(axis=0, keepdims=True))
    s = e / e.sum(axis=0, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=0, keepdims=True)),)

    return _op(s, (a,), back)


def transpose(a: Var) -> Var:
    return _op(a.value.T.copy(), (a,), lambda g: (g.T,))


def concat_cols(*parts: Var) -> Var:
    if not parts:
        raise ShapeError("concat_cols needs at least one input")
    rows = parts[0].shape[0]
    if any(p.shape[0] != rows for p in parts):
        raise ShapeError(f"concat_cols: row counts {[p.shape[0] for p in parts]} differ")
    edges = np.cumsum([0] + [p.shape[1] for p in parts])

    def back(g):
        return tuple(g[:, edges[i] : edges[i + 1]] for i in range(len(parts)))

    return _op(np.concatenate([p.value for p in parts], axis=1), tuple(parts), back)


def slice_cols(a: Var, start: int, stop: int) -> Var:
    if not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(f"slice_cols [{start}:{stop}] out of range for {a.shape}")
    cols = a.shape[1]

    def back(g):
        full = np.zeros((g.shape[0], cols))
        full[:, start:stop] = g
        return (full,)

    return _op(a.value[:, start:stop].copy(), (a,), back)


def sum_all(a: Var) -> Var:
    shape = a.shape
    return _op(np.array([[a.value.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


def mse(pred: Var, target) -> Var:
    target = _as_var(target, pred)
    _same_shape(pred, target, "mse")
    diff = pred.value - target.value
    n = diff.size
    return _op(np.array([[np.mean(diff * diff)]]), (pred, target),
               lambda g: (g[0, 0] * 2.0 * diff / n, -g[0, 0] * 2.0 * diff / n))


def block_propagate(op: np.ndarray, x: Var) -> Var:
    """Apply a constant N x N operator to each N-row block of a stacked ``(B*N) x F`` input.

    With B = 1 this is ``op @ x``. Stacking samples this way lets one tape carry
    a whole mini-batch through the graph convolutions.
    """
    n = op.shape[0]
    rows, cols = x.shape
    if op.shape != (n, n) or rows % n:
        raise ShapeError(f"block_propagate: operator {op.shape} vs input {x.shape}")
    b = rows // n
    out = np.matmul(op, x.value.reshape(b, n, cols)).reshape(rows, cols)
    op_t = op.T

    def back(g):
        return (np.matmul(op_t, g.reshape(b, n, cols)).reshape(rows, cols),)

    return _op(out, (x,), back)
