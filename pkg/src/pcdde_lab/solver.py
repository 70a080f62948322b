"""Forward integration for NODE, ANODE, NDDE and the piecewise-constant delay models.

On ``[k tau, (k+1) tau]`` every grid-lag argument ``z(floor((t - j tau)/tau) tau)``
equals ``grid_states[k - j]`` (or the input ``x`` when ``k - j < 0``), so each
interval is an ordinary ODE in ``z(t)`` with frozen extra inputs.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .field import ROLE_CURRENT, ROLE_DELAY, FieldSignature, MlpParams, lag_role, role_lag

KINDS = ("NODE", "NDDE", "ANODE", "NPCDDE_simple", "NPCDDE_skip", "NPCDDE_generic", "UNPCDDE")
INTEGRATORS = ("euler", "rk4", "exact_constant_field")
GRID_TOL = 1e-9


class NonFiniteStateError(FloatingPointError):
    def __init__(self, interval: int, substep: int):
        super().__init__(f"non-finite state in interval {interval} at substep {substep}")
        self.interval = interval
        self.substep = substep


class FunctionField:
    """A hand-written field ``fn(inputs) -> outputs`` on ``(batch, in_dim)`` arrays.

    Forward only; used for ground-truth dynamics that an MLP cannot express exactly.
    """

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], in_dim: int, out_dim: int):
        self.fn = fn
        self.in_dim = in_dim
        self.out_dim = out_dim

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(x), dtype=np.float64)


def default_roles(kind: str, n_intervals: int) -> tuple[str, ...]:
    if kind in ("NODE", "ANODE"):
        return (ROLE_CURRENT,)
    if kind == "NDDE":
        return (ROLE_CURRENT, ROLE_DELAY)
    if kind == "NPCDDE_simple":
        return (lag_role(0),)
    if kind == "NPCDDE_skip":
        return (lag_role(0), lag_role(1))
    if kind == "NPCDDE_generic":
        return (ROLE_CURRENT,) + tuple(lag_role(j) for j in range(n_intervals + 1))
    if kind == "UNPCDDE":
        return (ROLE_CURRENT,) + tuple(lag_role(j) for j in range(n_intervals))
    raise ValueError(f"unknown model kind {kind!r}")


@dataclass
class ModelSpec:
    kind: str
    tau: float
    n_intervals: int
    params: object
    state_dim: int = 1
    substeps: int = 20
    integrator: str = "rk4"
    augment_dim: int = 0
    roles: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.n_intervals < 1 or self.substeps < 1:
            raise ValueError("n_intervals and substeps must be positive")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"unknown integrator {self.integrator!r}")
        self.roles = tuple(self.roles) if self.roles else default_roles(self.kind, self.n_intervals)
        sig = self.signature  # validates roles
        if self.kind == "ANODE" and self.augment_dim < 1:
            raise ValueError("ANODE needs augment_dim >= 1")
        if self.kind != "ANODE" and self.augment_dim:
            raise ValueError("augment_dim is only meaningful for ANODE")
        if self.kind in ("NODE", "ANODE") and self.roles != (ROLE_CURRENT,):
            raise ValueError(f"{self.kind} fields take only the current state")
        if (ROLE_DELAY in self.roles) != (self.kind == "NDDE"):
            raise ValueError("the 'delay' argument belongs to NDDE fields only")
        if self.kind == "NDDE" and sig.lags:
            raise ValueError("NDDE fields cannot take grid-lag arguments")
        if ROLE_CURRENT in self.roles and self.roles[0] != ROLE_CURRENT:
            raise ValueError("'current' must be the first argument role")
        if self.integrator == "exact_constant_field" and sig.has_current:
            raise ValueError("exact_constant_field requires a field without the current-state argument")
        if self.integrator == "exact_constant_field" and self.kind == "NDDE":
            raise ValueError("exact_constant_field does not apply to NDDE")
        plist = self.params if isinstance(self.params, list) else [self.params]
        if self.kind == "UNPCDDE":
            if not isinstance(self.params, list) or len(self.params) != self.n_intervals:
                raise ValueError("UNPCDDE needs one parameter set per interval")
        elif isinstance(self.params, list):
            raise ValueError(f"{self.kind} shares one parameter set across intervals")
        for p in plist:
            if p.in_dim != sig.in_dim or p.out_dim != sig.state_dim:
                raise ValueError(
                    f"field maps {p.in_dim} -> {p.out_dim} but the signature {self.roles} "
                    f"needs {sig.in_dim} -> {sig.state_dim}"
                )

    @property
    def field_dim(self) -> int:
        return self.state_dim + self.augment_dim

    @property
    def signature(self) -> FieldSignature:
        return FieldSignature(tuple(self.roles), self.field_dim)

    @property
    def T(self) -> float:
        return self.n_intervals * self.tau

    @property
    def h(self) -> float:
        return self.tau / self.substeps

    def params_for(self, k: int):
        return self.params[k] if isinstance(self.params, list) else self.params

    def param_list(self) -> list:
        return self.params if isinstance(self.params, list) else [self.params]

    def with_params(self, params) -> "ModelSpec":
        return replace(self, params=params)

    def with_intervals(self, n: int) -> "ModelSpec":
        roles = self.roles
        if self.kind in ("NPCDDE_generic", "UNPCDDE") and roles == default_roles(self.kind, self.n_intervals):
            raise ValueError("default generic roles depend on n_intervals; pass explicit roles to resize")
        return replace(self, n_intervals=n, roles=roles)

    def to_json(self) -> dict:
        params = self.params
        if isinstance(params, list):
            pj = [p.to_json() for p in params]
        elif isinstance(params, MlpParams):
            pj = params.to_json()
        else:
            pj = None
        return {
            "kind": self.kind,
            "tau": self.tau,
            "n_intervals": self.n_intervals,
            "state_dim": self.state_dim,
            "substeps": self.substeps,
            "integrator": self.integrator,
            "augment_dim": self.augment_dim,
            "roles": list(self.roles),
            "params": pj,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ModelSpec":
        pj = doc["params"]
        params = [MlpParams.from_json(p) for p in pj] if isinstance(pj, list) else MlpParams.from_json(pj)
        return cls(
            kind=doc["kind"],
            tau=doc["tau"],
            n_intervals=doc["n_intervals"],
            params=params,
            state_dim=doc.get("state_dim", 1),
            substeps=doc.get("substeps", 20),
            integrator=doc.get("integrator", "rk4"),
            augment_dim=doc.get("augment_dim", 0),
            roles=tuple(doc["roles"]) if doc.get("roles") else None,
        )


@dataclass
class ForwardRecord:
    spec: ModelSpec
    x: np.ndarray                       # (B, state_dim) input
    grid_states: np.ndarray             # (n + 1, B, D)
    substep_states: np.ndarray          # (n, S + 1, B, D)
    observation_times: list[float] = field(default_factory=list)
    observation_states: list[np.ndarray] = field(default_factory=list)

    @property
    def z_T(self) -> np.ndarray:
        return self.grid_states[-1]

    def trajectory(self) -> tuple[np.ndarray, np.ndarray]:
        """Times and states on the full substep grid, ``(n S + 1,)`` and ``(n S + 1, B, D)``."""
        n, S = self.spec.n_intervals, self.spec.substeps
        states = np.concatenate([self.substep_states[:, :-1].reshape(n * S, *self.grid_states.shape[1:]),
                                 self.grid_states[-1:]], axis=0)
        return np.arange(n * S + 1) * self.spec.h, states

    def state_at(self, t: float) -> np.ndarray:
        g = grid_index(t, self.spec)
        S = self.spec.substeps
        k, j = divmod(g, S)
        if k == self.spec.n_intervals:
            return self.grid_states[-1]
        return self.substep_states[k, j]

    def to_csv(self, path, observations_only: bool = False) -> None:
        """Write ``traj_id,t,component_index,value`` rows."""
        if observations_only:
            times, states = self.observation_times, self.observation_states
        else:
            ts, st = self.trajectory()
            times, states = list(ts), list(st)
        write_trajectory_csv(path, times, states)


def write_trajectory_csv(path, times: Sequence[float], states: Sequence[np.ndarray]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["traj_id", "t", "component_index", "value"])
        if not len(times):
            return
        B = np.asarray(states[0]).shape[0]
        for b in range(B):
            for t, z in zip(times, states):
                for c, v in enumerate(np.asarray(z)[b]):
                    w.writerow([b, repr(float(t)), c, repr(float(v))])


def grid_index(t: float, spec: ModelSpec) -> int:
    """Index of ``t`` on the substep grid; rejects off-grid or out-of-range times."""
    g = int(round(t / spec.h))
    if abs(t - g * spec.h) > GRID_TOL * max(1.0, abs(t)):
        raise ValueError(f"time {t} is not on the substep grid (h = {spec.h})")
    if not 0 <= g <= spec.n_intervals * spec.substeps:
        raise ValueError(f"time {t} lies outside [0, {spec.T}]")
    return g


def _as_batch(x, width: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise ValueError(f"input must have {width} components per sample, got shape {x.shape}")
    return x


def _check_finite(states: np.ndarray, k: int) -> None:
    if not np.all(np.isfinite(states)):
        bad = np.where(~np.isfinite(states).reshape(states.shape[0], -1).all(axis=1))[0][0]
        raise NonFiniteStateError(k, int(bad))


def integrate_interval(
    field_frozen: Callable[[np.ndarray], np.ndarray],
    z0,
    t0: float,
    t1: float,
    substeps: int,
    integrator: str = "rk4",
) -> np.ndarray:
    """Fixed-step solve of dz/dt = field_frozen(z); returns ``(substeps + 1, *z0.shape)`` states."""
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    if integrator not in INTEGRATORS:
        raise ValueError(f"unknown integrator {integrator!r}")
    z = np.array(z0, dtype=np.float64)
    h = (t1 - t0) / substeps
    out = np.empty((substeps + 1,) + z.shape)
    out[0] = z
    if integrator == "exact_constant_field":
        c = np.asarray(field_frozen(z), dtype=np.float64)
        for j in range(1, substeps + 1):
            out[j] = z + (j * h) * c
        _check_finite(out, 0)
        return out
    for j in range(substeps):
        if integrator == "euler":
            z = z + h * field_frozen(z)
        else:
            k1 = field_frozen(z)
            k2 = field_frozen(z + 0.5 * h * k1)
            k3 = field_frozen(z + 0.5 * h * k2)
            k4 = field_frozen(z + h * k3)
            z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(z)):
            raise NonFiniteStateError(0, j + 1)
        out[j + 1] = z
    return out


def frozen_args(spec: ModelSpec, k: int, grid: Sequence[np.ndarray], x: np.ndarray) -> np.ndarray | None:
    """Concatenated grid-lag arguments used throughout interval ``k`` (role order)."""
    parts = []
    for role in spec.roles:
        j = role_lag(role)
        if j is not None:
            parts.append(grid[k - j] if k - j >= 0 else x)
    return np.concatenate(parts, axis=1) if parts else None


def eval_field(params, inp: np.ndarray) -> np.ndarray:
    if isinstance(params, MlpParams):
        return kernels.field_batch(params.flatten(), params.dims, params.has_bias, params.activation, inp)
    return params(inp)


def _kernel_method(integrator: str) -> str:
    return "euler" if integrator == "exact_constant_field" else integrator


def _forward_piecewise(spec: ModelSpec, z0: np.ndarray, x_in: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, S, h = spec.n_intervals, spec.substeps, spec.h
    has_current = spec.signature.has_current
    grid = [z0]
    subs = []
    z = z0
    for k in range(n):
        frozen = frozen_args(spec, k, grid, z0)
        p = spec.params_for(k)
        if isinstance(p, MlpParams):
            states = kernels.interval_forward(
                p.flatten(), p.dims, p.has_bias, p.activation, z, frozen, h, S,
                _kernel_method(spec.integrator), has_current,
            )
            _check_finite(states, k)
        else:
            def f(y, p=p, frozen=frozen):
                if not has_current:
                    return p(frozen)
                return p(y if frozen is None else np.concatenate([y, frozen], axis=1))

            try:
                states = integrate_interval(f, z, k * spec.tau, (k + 1) * spec.tau, S, spec.integrator)
            except NonFiniteStateError as err:
                raise NonFiniteStateError(k, err.substep) from None
        subs.append(states)
        z = states[-1]
        grid.append(z)
    return np.stack(grid), np.stack(subs)


def _record(spec, x, grid, subs, observation_times) -> ForwardRecord:
    rec = ForwardRecord(spec, x, grid, subs)
    for t in observation_times:
        rec.observation_times.append(float(t))
        rec.observation_states.append(rec.state_at(t))
    return rec


def _check_times(spec: ModelSpec, observation_times: Sequence[float]) -> None:
    last = -math.inf
    for t in observation_times:
        grid_index(t, spec)
        if t < last:
            raise ValueError("observation times must be sorted")
        last = t


def forward(spec: ModelSpec, x, observation_times: Sequence[float] = ()) -> ForwardRecord:
    """Integrate ``spec`` from input ``x`` (``(state_dim,)`` or ``(batch, state_dim)``) to T."""
    if spec.kind == "NDDE":
        return forward_ndde(spec, x, observation_times)
    if spec.kind == "ANODE":
        return forward_anode(spec, x, observation_times)
    _check_times(spec, observation_times)
    x2 = _as_batch(x, spec.state_dim)
    grid, subs = _forward_piecewise(spec, x2, x2)
    return _record(spec, x2, grid, subs, observation_times)


def forward_anode(spec: ModelSpec, x, observation_times: Sequence[float] = ()) -> ForwardRecord:
    """NODE on the state padded with ``augment_dim`` zeros; records keep the padded state."""
    if spec.kind != "ANODE":
        raise ValueError("forward_anode needs an ANODE spec")
    _check_times(spec, observation_times)
    x2 = _as_batch(x, spec.state_dim)
    z0 = np.concatenate([x2, np.zeros((x2.shape[0], spec.augment_dim))], axis=1)
    grid, subs = _forward_piecewise(spec, z0, x2)
    return _record(spec, x2, grid, subs, observation_times)


def _ndde_input(spec: ModelSpec, y: np.ndarray, delayed: np.ndarray) -> np.ndarray:
    parts = [y if role == ROLE_CURRENT else delayed for role in spec.roles]
    return parts[0] if len(parts) == 1 else np.concatenate(parts, axis=1)


def forward_ndde(spec: ModelSpec, x, observation_times: Sequence[float] = ()) -> ForwardRecord:
    """dz/dt = f(z(t), z(t - tau)) with history z = x on [-tau, 0].

    Each interval re-uses the stage inputs of the previous interval as the
    delayed values of the matching stages, so no interpolation is needed and
    the scheme is the integrator applied to the method-of-steps system.
    """
    if spec.kind != "NDDE":
        raise ValueError("forward_ndde needs an NDDE spec")
    _check_times(spec, observation_times)
    x2 = _as_batch(x, spec.state_dim)
    n, S, h = spec.n_intervals, spec.substeps, spec.h
    rk4 = spec.integrator == "rk4"
    n_stages = 4 if rk4 else 1
    prev = [[x2] * n_stages for _ in range(S)]
    z = x2
    grid, subs = [x2], []
    for k in range(n):
        p = spec.params_for(k)
        states = np.empty((S + 1,) + z.shape)
        states[0] = z
        cur = []
        for j in range(S):
            d = prev[j]
            if rk4:
                k1 = eval_field(p, _ndde_input(spec, z, d[0]))
                y2 = z + 0.5 * h * k1
                k2 = eval_field(p, _ndde_input(spec, y2, d[1]))
                y3 = z + 0.5 * h * k2
                k3 = eval_field(p, _ndde_input(spec, y3, d[2]))
                y4 = z + h * k3
                k4 = eval_field(p, _ndde_input(spec, y4, d[3]))
                cur.append([z, y2, y3, y4])
                z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            else:
                cur.append([z])
                z = z + h * eval_field(p, _ndde_input(spec, z, d[0]))
            if not np.all(np.isfinite(z)):
                raise NonFiniteStateError(k, j + 1)
            states[j + 1] = z
        prev = cur
        subs.append(states)
        grid.append(z)
    return _record(spec, x2, np.stack(grid), np.stack(subs), observation_times)
