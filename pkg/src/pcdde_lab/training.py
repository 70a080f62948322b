"""Losses, optimizers and the training loop."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .adjoint import backward, grads_via_bptt
from .field import MlpParams
from .solver import ModelSpec, NonFiniteStateError, forward

HORIZONS = (1, 2, 5, 10)


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, reason: str = "non-finite loss"):
        super().__init__(f"training diverged at step {step}: {reason}")
        self.step = step


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 0.01
    iterations: int = 3000
    batch_size: int | None = None        # None means full batch
    seed: int = 0
    loss: str = "mse"
    gradient: str = "auto"               # auto | adjoint | bptt
    eval_every: int = 0
    max_restarts: int = 2

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss != "mse":
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.gradient not in ("auto", "adjoint", "bptt"):
            raise ValueError(f"unknown gradient method {self.gradient!r}")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown training options {sorted(unknown)}")
        return cls(**doc)


@dataclass
class TrainHistory:
    steps: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    test_steps: list[int] = field(default_factory=list)
    test_loss: list[dict[str, float]] = field(default_factory=list)
    restarts: list[tuple[int, float]] = field(default_factory=list)

    def record(self, step: int, loss: float) -> None:
        if not (math.isfinite(loss) and loss >= 0):
            raise ValueError(f"invalid loss {loss} at step {step}")
        self.steps.append(step)
        self.train_loss.append(loss)

    def first_step_below(self, threshold: float) -> int | None:
        for s, v in zip(self.steps, self.train_loss):
            if v < threshold:
                return s
        return None

    def to_csv(self, path) -> None:
        """``step,train_loss[,test_loss_h1,...]``; test columns are blank between evaluations."""
        keys = sorted({k for row in self.test_loss for k in row}, key=_horizon_key)
        tests = dict(zip(self.test_steps, self.test_loss))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "train_loss", *keys])
            for s, v in zip(self.steps, self.train_loss):
                row = tests.get(s, {})
                w.writerow([s, repr(v), *[repr(row[k]) if k in row else "" for k in keys]])


def _horizon_key(name: str):
    tail = name.rsplit("h", 1)[-1]
    return (0, int(tail)) if tail.isdigit() else (1, name)


def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    n = pred.size
    with np.errstate(over="ignore", invalid="ignore"):   # divergence is detected by the caller
        diff = pred - target
        return float(np.sum(diff * diff) / n), 2.0 * diff / n


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


BETA1, BETA2, EPS = 0.9, 0.999, 1e-8


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float) -> tuple[np.ndarray, AdamState]:
    t = state.t + 1
    m = BETA1 * state.m + (1.0 - BETA1) * grads
    v = BETA2 * state.v + (1.0 - BETA2) * grads * grads
    m_hat = m / (1.0 - BETA1 ** t)
    v_hat = v / (1.0 - BETA2 ** t)
    return params - lr * m_hat / (np.sqrt(v_hat) + EPS), AdamState(m, v, t)


def sgd_step(params: np.ndarray, grads: np.ndarray, lr: float) -> np.ndarray:
    return params - lr * grads


@dataclass
class Readout:
    """Affine head ``w . z(T) + c`` to a scalar."""

    w: np.ndarray
    c: float = 0.0

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return z @ self.w + self.c

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.w, [self.c]])

    @classmethod
    def from_flat(cls, flat: np.ndarray) -> "Readout":
        return cls(np.array(flat[:-1]), float(flat[-1]))


@dataclass
class Dataset:
    """Inputs with targets at T, or at ``times`` when given.

    Terminal targets are ``(N, m)``. Trajectory targets are ``(N, len(times), state_dim)``.
    """

    inputs: np.ndarray
    targets: np.ndarray
    times: Sequence[float] | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.inputs.ndim == 1:
            self.inputs = self.inputs[:, None]
        if self.times is None and self.targets.ndim == 1:
            self.targets = self.targets[:, None]
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets differ in length")
        if self.times is not None:
            self.times = [float(t) for t in self.times]
            if self.targets.ndim != 3 or self.targets.shape[1] != len(self.times):
                raise ValueError("trajectory targets must be (N, len(times), dim)")

    def __len__(self) -> int:
        return len(self.inputs)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.targets[idx], self.times)


class TrainResult(NamedTuple):
    spec: ModelSpec
    history: TrainHistory
    readout: Readout | None


def _use_bptt(spec: ModelSpec, config: TrainConfig) -> bool:
    if config.gradient == "auto":
        return spec.kind in ("NDDE", "ANODE")
    if config.gradient == "adjoint" and spec.kind == "NDDE":
        raise ValueError("NDDE has no adjoint path; use gradient='bptt' or 'auto'")
    return config.gradient == "bptt"


def _split(spec: ModelSpec, flat: np.ndarray):
    plist = spec.param_list()
    out, pos = [], 0
    for p in plist:
        out.append(p.with_flat(flat[pos:pos + p.n_params()]))
        pos += p.n_params()
    params = out if isinstance(spec.params, list) else out[0]
    readout = Readout.from_flat(flat[pos:]) if pos < flat.size else None
    return spec.with_params(params), readout


def _flat_grads(pgrads) -> np.ndarray:
    plist = pgrads if isinstance(pgrads, list) else [pgrads]
    return np.concatenate([p.flatten() for p in plist])


def predict(spec: ModelSpec, inputs, times: Sequence[float] | None = None, readout: Readout | None = None) -> np.ndarray:
    """Model outputs: ``(N, m)`` at T, or ``(N, len(times), state_dim)`` along a trajectory."""
    d = spec.state_dim
    if times is None:
        z = forward(spec, inputs).z_T
        return readout(z)[:, None] if readout is not None else z[:, :d]
    rec = forward(spec, inputs, times)
    return np.stack([s[:, :d] for s in rec.observation_states], axis=1)


def full_loss(spec: ModelSpec, data: Dataset, readout: Readout | None = None) -> float:
    return mse_loss(predict(spec, data.inputs, data.times, readout), data.targets)[0]


def loss_and_grad(spec: ModelSpec, data: Dataset, readout: Readout | None, use_bptt: bool):
    """Return ``(loss, flat gradient over params then readout)``."""
    x = data.inputs
    B = len(x)
    D = spec.field_dim
    rec = forward(spec, x, data.times or ())
    if data.times is None:
        z = rec.z_T
        if readout is not None:
            pred = readout(z)[:, None]
            loss, g = mse_loss(pred, data.targets)
            g_head = np.concatenate([z.T @ g[:, 0], [g.sum()]])
            gz = np.outer(g[:, 0], readout.w)
        else:
            loss, gz = mse_loss(z[:, :spec.state_dim], data.targets)
            g_head = None
        if gz.shape[1] < D:
            gz = np.concatenate([gz, np.zeros((B, D - gz.shape[1]))], axis=1)
        loss_grads = [(spec.T, gz)]
    else:
        pred = np.stack([s[:, :spec.state_dim] for s in rec.observation_states], axis=1)
        loss, g = mse_loss(pred, data.targets)
        g_head = None
        loss_grads = [(t, g[:, i]) for i, t in enumerate(data.times)]
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite loss")
    if use_bptt:
        pgrads, _ = grads_via_bptt(spec, x, loss_grads)
    else:
        pgrads, _ = backward(spec, rec, loss_grads)
    flat = _flat_grads(pgrads)
    if g_head is not None:
        flat = np.concatenate([flat, g_head])
    return loss, flat


def train(
    spec: ModelSpec,
    config: TrainConfig,
    dataset: Dataset,
    readout: Readout | None = None,
    evaluate: Callable[[ModelSpec, Readout | None], dict[str, float]] | None = None,
    on_step: Callable[[int, ModelSpec, Readout | None], None] | None = None,
) -> TrainResult:
    """Optimize ``spec.params`` (and ``readout`` if given) on ``dataset``.

    ``history.train_loss[i]`` is the loss of the batch used at step ``i``,
    evaluated before that step's update; one extra final row holds the
    full-dataset loss of the returned parameters. ``evaluate`` runs every
    ``config.eval_every`` steps and after the last one; ``on_step`` sees
    the parameters before each update and once more at the end.
    """
    for p in spec.param_list():
        if not isinstance(p, MlpParams):
            raise TypeError("only MlpParams fields can be trained")
    use_bptt = _use_bptt(spec, config)
    rng = np.random.default_rng(config.seed)
    flat = np.concatenate([p.flatten() for p in spec.param_list()])
    if readout is not None:
        flat = np.concatenate([flat, readout.flatten()])
    state = AdamState.zeros(flat.size)
    lr = config.learning_rate
    history = TrainHistory()
    N = len(dataset)
    bs = config.batch_size or N
    order: list[int] = []
    checkpoint = (flat.copy(), state, 0, [])
    restarts = 0

    def batch() -> Dataset:
        nonlocal order
        if bs >= N:
            return dataset
        if len(order) < bs:
            order = order + list(rng.permutation(N))
        idx, order = order[:bs], order[bs:]
        return dataset.subset(np.array(idx))

    step = 0
    while step < config.iterations:
        cur_spec, cur_head = _split(spec, flat)
        if on_step is not None:
            on_step(step, cur_spec, cur_head)
        if evaluate is not None and config.eval_every and step % config.eval_every == 0:
            history.test_steps.append(step)
            history.test_loss.append(evaluate(cur_spec, cur_head))
        data = batch()
        try:
            loss, grad = loss_and_grad(cur_spec, data, cur_head, use_bptt)
            if not np.all(np.isfinite(grad)):
                raise FloatingPointError("non-finite gradient")
        except (FloatingPointError, NonFiniteStateError) as err:
            if restarts >= config.max_restarts:
                raise TrainingDiverged(step, str(err)) from err
            restarts += 1
            lr *= 0.5
            history.restarts.append((step, lr))
            flat, state, step, order = checkpoint[0].copy(), checkpoint[1], checkpoint[2], list(checkpoint[3])
            del history.steps[step:], history.train_loss[step:]
            keep = [i for i, s in enumerate(history.test_steps) if s < step]
            history.test_steps = [history.test_steps[i] for i in keep]
            history.test_loss = [history.test_loss[i] for i in keep]
            continue
        history.record(step, loss)
        if config.optimizer == "adam":
            flat, state = adam_step(flat, grad, state, lr)
        else:
            flat = sgd_step(flat, grad, lr)
        step += 1
        if step % 100 == 0:
            checkpoint = (flat.copy(), state, step, list(order))
    final_spec, final_head = _split(spec, flat)
    try:
        final_loss = full_loss(final_spec, dataset, final_head)
    except (FloatingPointError, NonFiniteStateError) as err:
        raise TrainingDiverged(step, str(err)) from err
    if not math.isfinite(final_loss):
        raise TrainingDiverged(step)
    history.record(step, final_loss)
    if on_step is not None:
        on_step(step, final_spec, final_head)
    if evaluate is not None and (not history.test_steps or history.test_steps[-1] != step):
        history.test_steps.append(step)
        history.test_loss.append(evaluate(final_spec, final_head))
    return TrainResult(final_spec, history, final_head)
