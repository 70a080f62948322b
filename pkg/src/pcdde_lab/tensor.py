"""Dense float64 tensors and a small reverse-mode tape.

The tape records a fixed op set (matmul, add, scale, tanh, relu, concat,
slice) over rank <= 2 arrays. Batched states are ``(batch, dim)`` matrices;
``concat`` and ``slice`` act on the last axis, and ``add`` broadcasts a
vector across the rows of a matrix (bias terms).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

OPS = ("input", "matmul", "add", "scale", "tanh", "relu", "concat", "slice")


class ShapeError(ValueError):
    pass


class Tensor:
    """Immutable row-major float64 array of rank <= 2."""

    __slots__ = ("_value",)

    def __init__(self, value):
        arr = np.array(value, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeError(f"rank {arr.ndim} tensors are not supported")
        arr.setflags(write=False)
        self._value = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self._value.shape

    @property
    def data(self) -> np.ndarray:
        return self._value.reshape(-1)

    def numpy(self) -> np.ndarray:
        return self._value

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)}, data={self._value.tolist()})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._value, other._value))

    __hash__ = None


def as_array(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.numpy()
    return np.asarray(x, dtype=np.float64)


@dataclass
class TapeNode:
    op: str
    parents: tuple[int, ...]
    value: np.ndarray
    attrs: tuple = ()


@dataclass(eq=False)
class Var:
    """Handle to a tape node; only meaningful for the tape that made it."""

    tape: "Tape"
    index: int

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape


@dataclass(eq=False)
class Tape:
    nodes: list[TapeNode] = field(default_factory=list)
    inputs: list[int] = field(default_factory=list)
    output: int | None = None

    def _push(self, op: str, parents: tuple[int, ...], value: np.ndarray, attrs=()) -> Var:
        self.nodes.append(TapeNode(op, parents, value, attrs))
        return Var(self, len(self.nodes) - 1)

    def _check(self, *vars_: Var) -> None:
        for v in vars_:
            if not isinstance(v, Var) or v.tape is not self:
                raise ValueError("operand does not belong to this tape")

    def input(self, x) -> Var:
        arr = np.array(as_array(x), dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeError(f"input: rank {arr.ndim} not supported")
        arr.setflags(write=False)
        v = self._push("input", (), arr)
        self.inputs.append(v.index)
        return v

    def matmul(self, a: Var, b: Var) -> Var:
        self._check(a, b)
        sa, sb = a.shape, b.shape
        if len(sa) == 0 or len(sb) == 0 or sa[-1] != sb[0] or (len(sa) == 1 and len(sb) == 1):
            raise ShapeError(f"matmul: incompatible shapes {list(sa)} and {list(sb)}")
        return self._push("matmul", (a.index, b.index), a.value @ b.value)

    def add(self, a: Var, b: Var) -> Var:
        self._check(a, b)
        sa, sb = a.shape, b.shape
        if sa != sb and not (len(sa) == 2 and len(sb) == 1 and sa[1] == sb[0]):
            raise ShapeError(f"add: incompatible shapes {list(sa)} and {list(sb)}")
        return self._push("add", (a.index, b.index), a.value + b.value)

    def scale(self, a: Var, c: float) -> Var:
        self._check(a)
        c = float(c)
        return self._push("scale", (a.index,), c * a.value, (c,))

    def tanh(self, a: Var) -> Var:
        self._check(a)
        return self._push("tanh", (a.index,), np.tanh(a.value))

    def relu(self, a: Var) -> Var:
        self._check(a)
        return self._push("relu", (a.index,), np.maximum(a.value, 0.0))

    def concat(self, parts: Sequence[Var]) -> Var:
        self._check(*parts)
        if not parts:
            raise ShapeError("concat: no operands")
        lead = {p.shape[:-1] for p in parts}
        if len(lead) != 1 or any(len(p.shape) == 0 for p in parts):
            raise ShapeError(f"concat: incompatible shapes {[list(p.shape) for p in parts]}")
        widths = tuple(p.shape[-1] for p in parts)
        value = np.concatenate([p.value for p in parts], axis=-1)
        return self._push("concat", tuple(p.index for p in parts), value, widths)

    def slice(self, a: Var, start: int, stop: int) -> Var:
        self._check(a)
        width = a.shape[-1] if a.shape else 0
        if not 0 <= start < stop <= width:
            raise ShapeError(f"slice: [{start}:{stop}] out of range for shape {list(a.shape)}")
        return self._push("slice", (a.index,), a.value[..., start:stop], (start, stop))

    def replay(self, inputs: Sequence) -> np.ndarray:
        """Re-execute the recorded ops on new input values; returns the output."""
        if len(inputs) != len(self.inputs):
            raise ValueError(f"expected {len(self.inputs)} inputs, got {len(inputs)}")
        vals: list[np.ndarray | None] = [None] * len(self.nodes)
        for idx, x in zip(self.inputs, inputs):
            vals[idx] = as_array(x)
        for i, node in enumerate(self.nodes):
            if node.op == "input":
                continue
            p = [vals[j] for j in node.parents]
            if node.op == "matmul":
                vals[i] = p[0] @ p[1]
            elif node.op == "add":
                vals[i] = p[0] + p[1]
            elif node.op == "scale":
                vals[i] = node.attrs[0] * p[0]
            elif node.op == "tanh":
                vals[i] = np.tanh(p[0])
            elif node.op == "relu":
                vals[i] = np.maximum(p[0], 0.0)
            elif node.op == "concat":
                vals[i] = np.concatenate(p, axis=-1)
            elif node.op == "slice":
                vals[i] = p[0][..., node.attrs[0]:node.attrs[1]]
        return vals[self.output if self.output is not None else len(self.nodes) - 1]


def tape_forward(graph: Callable[..., Var], inputs: Sequence) -> tuple[Tensor, Tape]:
    """Evaluate ``graph(tape, *input_vars)`` while recording it.

    ``graph`` receives the tape and one :class:`Var` per input and must return
    the output :class:`Var`.
    """
    tape = Tape()
    handles = [tape.input(x) for x in inputs]
    out = graph(tape, *handles)
    if not isinstance(out, Var) or out.tape is not tape:
        raise ValueError("graph must return a Var recorded on the supplied tape")
    tape.output = out.index
    return Tensor(out.value), tape


def _backprop(tape: Tape, seeds: dict[int, np.ndarray]) -> list[np.ndarray | None]:
    grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    for i, g in seeds.items():
        grads[i] = g if grads[i] is None else grads[i] + g

    def acc(j: int, g: np.ndarray) -> None:
        cur = grads[j]
        grads[j] = g if cur is None else cur + g

    nodes = tape.nodes
    for i in range(len(nodes) - 1, -1, -1):
        g = grads[i]
        if g is None:
            continue
        node = nodes[i]
        op = node.op
        if op == "input":
            continue
        if op == "matmul":
            ia, ib = node.parents
            a, b = nodes[ia].value, nodes[ib].value
            if b.ndim == 1:
                acc(ia, np.outer(g, b))
                acc(ib, a.T @ g)
            elif a.ndim == 1:
                acc(ia, b @ g)
                acc(ib, np.outer(a, g))
            else:
                acc(ia, g @ b.T)
                acc(ib, a.T @ g)
        elif op == "add":
            ia, ib = node.parents
            acc(ia, g)
            acc(ib, g if nodes[ib].value.shape == g.shape else g.sum(axis=0))
        elif op == "scale":
            acc(node.parents[0], node.attrs[0] * g)
        elif op == "tanh":
            acc(node.parents[0], g * (1.0 - node.value * node.value))
        elif op == "relu":
            acc(node.parents[0], g * (nodes[node.parents[0]].value > 0.0))
        elif op == "concat":
            start = 0
            for j, w in zip(node.parents, node.attrs):
                acc(j, g[..., start:start + w])
                start += w
        elif op == "slice":
            j = node.parents[0]
            full = np.zeros_like(nodes[j].value)
            full[..., node.attrs[0]:node.attrs[1]] = g
            acc(j, full)
    return grads


def vjp(tape: Tape, cotangent) -> list[Tensor]:
    """Return J^T @ cotangent for every tape input, in input order."""
    if tape.output is None:
        raise ValueError("tape has no recorded output")
    out_shape = tape.nodes[tape.output].value.shape
    ct = as_array(cotangent)
    if ct.shape != out_shape:
        raise ShapeError(f"vjp: cotangent shape {list(ct.shape)} != output shape {list(out_shape)}")
    grads = _backprop(tape, {tape.output: ct})
    result = []
    for idx in tape.inputs:
        g = grads[idx]
        result.append(Tensor(np.zeros_like(tape.nodes[idx].value) if g is None else g))
    return result


def input_grads(tape: Tape, seeds: dict[Var, np.ndarray]) -> list[np.ndarray]:
    """Backpropagate cotangents seeded on arbitrary nodes; arrays per input."""
    grads = _backprop(tape, {v.index: as_array(g) for v, g in seeds.items()})
    return [np.zeros_like(tape.nodes[i].value) if grads[i] is None else grads[i] for i in tape.inputs]


def finite_diff_grad(scalar_fn: Callable[[np.ndarray], float], point, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``scalar_fn`` at ``point``."""
    if not step > 0:
        raise ValueError("step must be positive")
    x0 = np.array(as_array(point), dtype=np.float64)
    flat = x0.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(scalar_fn(x0.copy()))
        flat[i] = orig - step
        fm = float(scalar_fn(x0.copy()))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value when perturbing coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * step)
    return grad.reshape(x0.shape)
