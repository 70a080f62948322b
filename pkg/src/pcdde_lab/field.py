"""MLP vector fields ``f(concat(args), theta)``.

Weights are stored ``(out, in)``. Every layer but the last is followed by
the activation; the last layer is linear, so ``W_out tanh(W tanh(W_in x))``
is three layers with ``activation="tanh"``. The linear field ``a*z + b``
is a single layer with ``activation="identity"``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .tensor import Tape, Var, as_array, input_grads

ACTIVATIONS = ("tanh", "relu", "identity")


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray | None] = field(default_factory=list)
    activation: str = "tanh"

    def __post_init__(self):
        self.weights = [np.atleast_2d(np.asarray(w, dtype=np.float64)) for w in self.weights]
        if not self.biases:
            self.biases = [None] * len(self.weights)
        self.biases = [None if b is None else np.asarray(b, dtype=np.float64).reshape(-1) for b in self.biases]
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.biases) != len(self.weights):
            raise ValueError("one bias entry (or None) per layer is required")
        if len({b is None for b in self.biases}) > 1:
            raise ValueError("biases must be present on all layers or on none")
        for i, w in enumerate(self.weights):
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(
                    f"layer {i} expects {w.shape[1]} inputs but layer {i - 1} "
                    f"produces {self.weights[i - 1].shape[0]}"
                )
            b = self.biases[i]
            if b is not None and b.shape != (w.shape[0],):
                raise ValueError(f"layer {i} bias has shape {b.shape}, expected ({w.shape[0]},)")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def has_bias(self) -> bool:
        return self.biases[0] is not None

    @property
    def dims(self) -> list[int]:
        return [self.in_dim] + [w.shape[0] for w in self.weights]

    def n_params(self) -> int:
        return sum(w.size + (0 if b is None else b.size) for w, b in zip(self.weights, self.biases))

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            if b is not None:
                out.append(b)
        return out

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.reshape(-1) for a in self.arrays()])

    def with_flat(self, flat: np.ndarray) -> "MlpParams":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params():
            raise ValueError(f"expected {self.n_params()} values, got {flat.size}")
        pos = 0
        ws, bs = [], []
        for w, b in zip(self.weights, self.biases):
            ws.append(flat[pos:pos + w.size].reshape(w.shape).copy())
            pos += w.size
            if b is None:
                bs.append(None)
            else:
                bs.append(flat[pos:pos + b.size].copy())
                pos += b.size
        return MlpParams(ws, bs, self.activation)

    def zeros_like(self) -> "MlpParams":
        return self.with_flat(np.zeros(self.n_params()))

    def copy(self) -> "MlpParams":
        return self.with_flat(self.flatten())

    def to_json(self) -> dict:
        layers = []
        for w, b in zip(self.weights, self.biases):
            layer = {"w": w.tolist()}
            if b is not None:
                layer["b"] = b.tolist()
            layers.append(layer)
        return {"layers": layers, "activation": self.activation}

    @classmethod
    def from_json(cls, doc: dict) -> "MlpParams":
        layers = doc["layers"]
        return cls(
            [np.array(layer["w"], dtype=np.float64) for layer in layers],
            [None if "b" not in layer else np.array(layer["b"], dtype=np.float64) for layer in layers],
            doc.get("activation", "tanh"),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "MlpParams":
        return cls.from_json(json.loads(Path(path).read_text()))


def linear_field(a: float, b: float = 0.0) -> MlpParams:
    """Scalar ``f(z) = a*z + b``."""
    return MlpParams([np.array([[a]])], [np.array([b])], "identity")


ROLE_CURRENT = "current"
ROLE_DELAY = "delay"


def lag_role(j: int) -> str:
    return f"lag{j}"


def role_lag(role: str) -> int | None:
    """Grid lag encoded by a role name (``lag2`` -> 2), else None."""
    if role.startswith("lag") and role[3:].isdigit():
        return int(role[3:])
    return None


@dataclass(frozen=True)
class FieldSignature:
    """Ordered argument roles of a vector field.

    ``current`` is z(t), ``delay`` is z(t - tau) (NDDE only) and ``lag{j}``
    is the grid state z(floor((t - j tau)/tau) tau).
    """

    roles: tuple[str, ...]
    state_dim: int

    def __post_init__(self):
        if self.state_dim <= 0:
            raise ValueError("state_dim must be positive")
        if not self.roles:
            raise ValueError("a field needs at least one argument")
        for r in self.roles:
            if r not in (ROLE_CURRENT, ROLE_DELAY) and role_lag(r) is None:
                raise ValueError(f"unknown argument role {r!r}")
        if len(set(self.roles)) != len(self.roles):
            raise ValueError(f"duplicate argument roles in {self.roles}")

    @property
    def in_dim(self) -> int:
        return self.state_dim * len(self.roles)

    @property
    def has_current(self) -> bool:
        return ROLE_CURRENT in self.roles

    @property
    def lags(self) -> list[int]:
        return [role_lag(r) for r in self.roles if role_lag(r) is not None]


def _concat_args(params: MlpParams, args: Sequence) -> np.ndarray:
    arrs = [as_array(a) for a in args]
    if not arrs:
        raise ValueError("field called with no arguments")
    lead = arrs[0].shape[:-1]
    for i, a in enumerate(arrs):
        if a.ndim not in (1, 2) or a.shape[:-1] != lead:
            raise ValueError(f"argument {i} has shape {a.shape}, inconsistent with argument 0 {arrs[0].shape}")
    x = np.concatenate(arrs, axis=-1)
    if x.shape[-1] != params.in_dim:
        raise ValueError(
            f"arguments concatenate to width {x.shape[-1]} but the field expects {params.in_dim} "
            f"(argument widths {[a.shape[-1] for a in arrs]})"
        )
    return x


def mlp_apply(params: MlpParams, x: np.ndarray) -> np.ndarray:
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T
        if b is not None:
            h = h + b
        if i < last:
            if params.activation == "tanh":
                h = np.tanh(h)
            elif params.activation == "relu":
                h = np.maximum(h, 0.0)
    return h


def field_eval(params: MlpParams, args: Sequence, signature: FieldSignature | None = None) -> np.ndarray:
    """Evaluate f(concat(args)); args are vectors or ``(batch, dim)`` matrices."""
    if signature is not None:
        if len(args) != len(signature.roles):
            raise ValueError(f"expected {len(signature.roles)} arguments {signature.roles}, got {len(args)}")
        for role, a in zip(signature.roles, args):
            if as_array(a).shape[-1] != signature.state_dim:
                raise ValueError(f"argument {role!r} has width {as_array(a).shape[-1]}, expected {signature.state_dim}")
    return mlp_apply(params, _concat_args(params, args))


def record_mlp(tape: Tape, x: Var, layer_vars: Sequence[tuple[Var, Var | None]], activation: str) -> Var:
    """Record the MLP on ``tape``. Weight vars hold transposed weights ``(in, out)``."""
    h = x
    last = len(layer_vars) - 1
    for i, (wt, b) in enumerate(layer_vars):
        h = tape.matmul(h, wt)
        if b is not None:
            h = tape.add(h, b)
        if i < last:
            if activation == "tanh":
                h = tape.tanh(h)
            elif activation == "relu":
                h = tape.relu(h)
    return h


def param_vars(tape: Tape, params: MlpParams) -> list[tuple[Var, Var | None]]:
    return [(tape.input(w.T), None if b is None else tape.input(b)) for w, b in zip(params.weights, params.biases)]


def grads_from_vars(params: MlpParams, grads: Sequence[np.ndarray]) -> MlpParams:
    """Assemble gradients returned for ``param_vars`` inputs into an MlpParams."""
    it = iter(grads)
    ws, bs = [], []
    for b in params.biases:
        ws.append(np.array(next(it)).T)
        bs.append(None if b is None else np.array(next(it)))
    return MlpParams(ws, bs, params.activation)


def field_vjp(params: MlpParams, args: Sequence, cotangent) -> tuple[list[np.ndarray], MlpParams]:
    """Return (gradient per argument, parameter gradient) for cotangent^T f."""
    x = _concat_args(params, args)
    ct = as_array(cotangent)
    tape = Tape()
    xv = tape.input(x)
    pv = param_vars(tape, params)
    out = record_mlp(tape, xv, pv, params.activation)
    tape.output = out.index
    if ct.shape != out.shape:
        raise ValueError(f"cotangent shape {ct.shape} != field output shape {out.shape}")
    grads = input_grads(tape, {out: ct})
    gx = grads[0]
    widths = [as_array(a).shape[-1] for a in args]
    per_arg, start = [], 0
    for w in widths:
        per_arg.append(gx[..., start:start + w])
        start += w
    return per_arg, grads_from_vars(params, grads[1:])


def init_params(
    signature: FieldSignature,
    scheme: str = "xavier-uniform",
    seed: int = 0,
    hidden: Sequence[int] = (10, 10),
    biases: bool = False,
    activation: str = "tanh",
    out_dim: int | None = None,
) -> MlpParams:
    """Fresh parameters for ``signature``; deterministic in ``seed``."""
    if scheme not in ("zeros", "xavier-uniform"):
        raise ValueError(f"unknown init scheme {scheme!r}")
    dims = [signature.in_dim, *hidden, out_dim or signature.state_dim]
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        if scheme == "zeros":
            ws.append(np.zeros((fan_out, fan_in)))
        else:
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            ws.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out) if biases else None)
    return MlpParams(ws, bs, activation)
