"""Gradients of trajectory losses.

``backward`` runs the discrete adjoint interval by interval, newest first.
Within an interval the grid-lag inputs are constants, so their cotangents
are collected and added to the adjoint when the sweep reaches the grid
time they were read from (or to the input gradient for the virtual
history before t = 0). ``grads_via_bptt`` records the same scheme on the
tape and differentiates it directly; it is the reference and the only
path for NDDE.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .field import ROLE_CURRENT, MlpParams, param_vars, record_mlp, grads_from_vars, role_lag
from .solver import ForwardRecord, ModelSpec, frozen_args, grid_index, _as_batch, _kernel_method
from .tensor import Tape, Var, vjp


@dataclass
class AdjointAccumulator:
    """Running state of the reverse sweep."""

    a: np.ndarray
    cursor: int                                        # substep-grid index the adjoint refers to
    pending: dict[int, np.ndarray] = field(default_factory=dict)
    param_grads: list[np.ndarray] = field(default_factory=list)
    jumps: dict[int, np.ndarray] = field(default_factory=dict)   # every contribution ever sent to a grid index


def accumulate_observation(acc: AdjointAccumulator, index: int, grad: np.ndarray) -> AdjointAccumulator:
    """Add a loss cotangent observed at grid index ``index`` (must not lie ahead of the sweep)."""
    if index > acc.cursor:
        raise ValueError(f"observation at grid index {index} arrives after the sweep passed it (at {acc.cursor})")
    if index < acc.cursor:
        raise ValueError(f"observation at grid index {index} arrives before the sweep reached it (at {acc.cursor})")
    acc.a = acc.a + grad
    return acc


def _normalize_grads(spec: ModelSpec, batch: int, loss_grads) -> dict[int, np.ndarray]:
    D = spec.field_dim
    out: dict[int, np.ndarray] = {}
    for t, g in loss_grads:
        g = np.asarray(g, dtype=np.float64)
        if g.ndim == 1:
            g = g[None, :]
        if g.shape[1] == spec.state_dim and D > spec.state_dim:
            g = np.concatenate([g, np.zeros((g.shape[0], D - spec.state_dim))], axis=1)
        if g.shape != (batch, D):
            raise ValueError(f"loss gradient at t={t} has shape {g.shape}, expected {(batch, D)}")
        i = grid_index(float(t), spec)
        out[i] = out[i] + g if i in out else g
    return out


def _lag_slices(spec: ModelSpec) -> list[tuple[int, int]]:
    """(lag, column offset) for each frozen argument in role order."""
    D = spec.field_dim
    res, col = [], 0
    for role in spec.roles:
        j = role_lag(role)
        if j is not None:
            res.append((j, col))
            col += D
    return res


def _pack_param_grads(spec: ModelSpec, flats: list[np.ndarray]):
    if spec.kind == "UNPCDDE":
        return [p.with_flat(g) for p, g in zip(spec.params, flats)]
    return spec.params.with_flat(np.sum(flats, axis=0))


def backward(spec: ModelSpec, record: ForwardRecord, loss_grads, sabotage: bool = False):
    """Return ``(param_grads, input_grad)`` for ``sum_i <loss_grads_i, z(t_i)>``.

    ``loss_grads`` is a sequence of ``(t, dL/dz(t))`` pairs with t on the
    substep grid. ``param_grads`` mirrors ``spec.params`` (a list for
    UNPCDDE). ``sabotage`` deliberately drops the delayed-argument jumps and
    perturbs the result; it exists to prove that the gradient checker fails
    loudly.
    """
    acc = adjoint_sweep(spec, record, loss_grads, sabotage)
    input_grad = acc.a
    for target in sorted(acc.pending):
        input_grad = input_grad + acc.pending[target]
    flats = acc.param_grads[::-1]
    if sabotage:
        flats = [1.001 * g for g in flats]
    if spec.kind == "ANODE":
        input_grad = input_grad[:, :spec.state_dim]
    return _pack_param_grads(spec, flats), input_grad


def adjoint_sweep(spec: ModelSpec, record: ForwardRecord, loss_grads, sabotage: bool = False) -> AdjointAccumulator:
    """Run the reverse sweep and return the accumulator at t = 0.

    ``pending`` then holds only the virtual-history contributions (negative
    grid indices); ``param_grads`` is ordered from the last interval back.
    """
    if spec.kind == "NDDE":
        raise NotImplementedError("NDDE gradients are available through grads_via_bptt")
    for p in spec.param_list():
        if not isinstance(p, MlpParams):
            raise TypeError("adjoint gradients need MlpParams fields")
    n, S, h = spec.n_intervals, spec.substeps, spec.h
    grid = list(record.grid_states)
    z0 = grid[0]
    B, D = z0.shape
    obs = _normalize_grads(spec, B, loss_grads)
    has_current = spec.signature.has_current
    method = _kernel_method(spec.integrator)
    lags = _lag_slices(spec)

    acc = AdjointAccumulator(np.zeros((B, D)), n * S)
    if n * S in obs:
        accumulate_observation(acc, n * S, obs[n * S])
    for k in range(n - 1, -1, -1):
        block = None
        interior = [j for j in range(1, S) if k * S + j in obs]
        if interior:
            block = np.zeros((S + 1, B, D))
            for j in interior:
                block[j] = obs[k * S + j]
        p = spec.params_for(k)
        frozen = frozen_args(spec, k, grid, z0)
        a0, g_frozen, g_flat = kernels.interval_adjoint(
            p.flatten(), p.dims, p.has_bias, p.activation, record.substep_states[k], frozen,
            h, method, has_current, acc.a, block,
        )
        acc.param_grads.append(g_flat)
        if not sabotage:
            for j, col in lags:
                target = k - j
                g = g_frozen[:, col:col + D]
                acc.pending[target] = acc.pending[target] + g if target in acc.pending else g
                acc.jumps[target] = acc.jumps[target] + g if target in acc.jumps else g
        acc.a = a0
        acc.cursor = k * S
        if k in acc.pending:
            acc.a = acc.a + acc.pending.pop(k)
        if k * S in obs:
            accumulate_observation(acc, k * S, obs[k * S])
    return acc


def _tape_field(tape: Tape, pv, activation: str, args: Sequence[Var]) -> Var:
    inp = args[0] if len(args) == 1 else tape.concat(list(args))
    return record_mlp(tape, inp, pv, activation)


def _axpy(tape: Tape, z: Var, c: float, k: Var) -> Var:
    return tape.add(z, tape.scale(k, c))


def _tape_rk4(tape, f, z, h):
    k1 = f(z)
    k2 = f(_axpy(tape, z, 0.5 * h, k1))
    k3 = f(_axpy(tape, z, 0.5 * h, k2))
    k4 = f(_axpy(tape, z, h, k3))
    s = tape.add(tape.add(k1, tape.scale(k2, 2.0)), tape.add(tape.scale(k3, 2.0), k4))
    return _axpy(tape, z, h / 6.0, s)


def record_trajectory(spec: ModelSpec, tape: Tape, x: Var, params_vars: list) -> list[Var]:
    """Record every substep state ``z(i h)`` for ``i = 0..nS`` on ``tape``."""
    n, S, h = spec.n_intervals, spec.substeps, spec.h
    act = spec.params_for(0).activation
    pv_for = (lambda k: params_vars[k]) if spec.kind == "UNPCDDE" else (lambda k: params_vars[0])
    z0 = x
    if spec.kind == "ANODE":
        pad = tape.input(np.zeros((x.shape[0], spec.augment_dim)))
        z0 = tape.concat([x, pad])
    states = [z0]
    if spec.kind == "NDDE":
        return _record_ndde(spec, tape, z0, params_vars[0], act)
    grid = [z0]
    z = z0
    for k in range(n):
        pv = pv_for(k)
        frozen = []
        for role in spec.roles:
            j = role_lag(role)
            if j is not None:
                frozen.append(grid[k - j] if k - j >= 0 else z0)

        def f(y, pv=pv, frozen=frozen):
            args = ([y] if spec.signature.has_current else []) + frozen
            return _tape_field(tape, pv, act, args)

        if spec.integrator == "exact_constant_field":
            c = f(None)
            start = z
            for j in range(1, S + 1):
                z = _axpy(tape, start, j * h, c)
                states.append(z)
        else:
            for _ in range(S):
                z = _axpy(tape, z, h, f(z)) if spec.integrator == "euler" else _tape_rk4(tape, f, z, h)
                states.append(z)
        grid.append(z)
    return states


def _record_ndde(spec, tape, z0, pv, act):
    n, S, h = spec.n_intervals, spec.substeps, spec.h
    rk4 = spec.integrator == "rk4"

    def f(y, d):
        return _tape_field(tape, pv, act, [y if r == ROLE_CURRENT else d for r in spec.roles])

    prev = [[z0] * 4 for _ in range(S)]
    z = z0
    states = [z0]
    for _ in range(n):
        cur = []
        for j in range(S):
            d = prev[j]
            if rk4:
                k1 = f(z, d[0])
                y2 = _axpy(tape, z, 0.5 * h, k1)
                k2 = f(y2, d[1])
                y3 = _axpy(tape, z, 0.5 * h, k2)
                k3 = f(y3, d[2])
                y4 = _axpy(tape, z, h, k3)
                k4 = f(y4, d[3])
                cur.append([z, y2, y3, y4])
                s = tape.add(tape.add(k1, tape.scale(k2, 2.0)), tape.add(tape.scale(k3, 2.0), k4))
                z = _axpy(tape, z, h / 6.0, s)
            else:
                cur.append([z] * 4)
                z = _axpy(tape, z, h, f(z, d[0]))
            states.append(z)
        prev = cur
    return states


def grads_via_bptt(spec: ModelSpec, x, loss_grads):
    """Reference gradients by reverse-mode differentiation of the recorded solve.

    Same inputs and return structure as :func:`backward`, but ``x`` is the
    raw input rather than a forward record.
    """
    for p in spec.param_list():
        if not isinstance(p, MlpParams):
            raise TypeError("bptt gradients need MlpParams fields")
    x2 = _as_batch(x, spec.state_dim)
    obs = _normalize_grads(spec, x2.shape[0], loss_grads)
    tape = Tape()
    xv = tape.input(x2)
    plist = spec.param_list()
    pvs = [param_vars(tape, p) for p in plist]
    states = record_trajectory(spec, tape, xv, pvs)
    keys = sorted(obs)
    if not keys:
        return _pack_param_grads(spec, [np.zeros(p.n_params()) for p in plist]), np.zeros_like(x2)
    out = tape.concat([states[i] for i in keys])
    tape.output = out.index
    grads = vjp(tape, np.concatenate([obs[i] for i in keys], axis=1))
    gx = grads[0].numpy().copy()
    pos = 1
    pgrads = []
    for p in plist:
        cnt = 2 * len(p.weights) if p.has_bias else len(p.weights)
        pgrads.append(grads_from_vars(p, [g.numpy() for g in grads[pos:pos + cnt]]))
        pos += cnt
    if spec.kind == "UNPCDDE":
        return pgrads, gx
    return pgrads[0], gx
