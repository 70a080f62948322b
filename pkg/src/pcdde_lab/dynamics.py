"""Ground-truth generators and map diagnostics.

The population model dx/dt = a x(t) (1 - x(floor t)) is linear in x on every
``[k, k+1]``, so ``x(t) = x(k) exp(a (1 - x(k)) (t - k))`` and the integer
samples follow the unimodal map ``f_a(x) = x exp(a (1 - x))``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .solver import FunctionField, ModelSpec


@dataclass
class PopulationSpec:
    a: float
    x0: Sequence[float] = (0.5,)
    t_span: tuple[float, float] = (0.0, 3.0)
    sample_dt: float = 0.1

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("growth parameter a must be positive")
        self.x0 = np.asarray(self.x0, dtype=np.float64).reshape(-1)
        if np.any(self.x0 < 0):
            raise ValueError("initial populations must be nonnegative")
        if not self.sample_dt > 0:
            raise ValueError("sample_dt must be positive")

    def sample_times(self) -> np.ndarray:
        t0, t1 = self.t_span
        n = int(round((t1 - t0) / self.sample_dt))
        return np.round(t0 + self.sample_dt * np.arange(n + 1), 12)

    def trajectories(self) -> np.ndarray:
        """``(len(x0), len(sample_times))`` exact samples."""
        return np.stack([population_exact(self.a, self.x0, t) for t in self.sample_times()], axis=1)


def map_fa(a: float, x):
    return x * np.exp(a * (1.0 - x))


def map_iterate(a: float, x0: float, n: int) -> list[float]:
    """``[x0, f(x0), ..., f^n(x0)]``."""
    xs = [float(x0)]
    for _ in range(n):
        xs.append(float(map_fa(a, xs[-1])))
    return xs


def population_exact(a: float, x0, t: float):
    """Exact solution at time ``t >= 0``; vectorized over ``x0``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    x = np.array(x0, dtype=np.float64)
    k = int(math.floor(t + 1e-12))
    with np.errstate(over="raise", invalid="raise"):
        try:
            for _ in range(k):
                x = map_fa(a, x)
            s = t - k
            return x * np.exp(a * (1.0 - x) * s) if s > 0 else x
        except FloatingPointError as err:
            raise OverflowError(f"population overflowed before t={t} (a={a})") from err


def population_field(a: float) -> FunctionField:
    """The true field as a function of ``concat(x(t), x(floor t))``."""
    return FunctionField(lambda inp: a * inp[:, :1] * (1.0 - inp[:, 1:2]), in_dim=2, out_dim=1)


def population_model(a: float, n_intervals: int, substeps: int = 20, integrator: str = "rk4") -> ModelSpec:
    return ModelSpec(
        "NPCDDE_generic", 1.0, n_intervals, population_field(a),
        substeps=substeps, integrator=integrator, roles=("current", "lag0"),
    )


def detect_period(a: float, x0: float, max_period: int = 64, burn_in: int = 500, tol: float = 1e-3) -> int | None:
    """Smallest p <= max_period with |f^p(x) - x| < tol after ``burn_in`` iterations."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    x = float(x0)
    for _ in range(burn_in):
        x = float(map_fa(a, x))
    y = x
    for p in range(1, max_period + 1):
        y = float(map_fa(a, y))
        if abs(y - x) < tol:
            return p
    return None


def bifurcation_scan(a_values: Sequence[float], x0: float, burn_in: int = 500, samples: int = 64,
                     max_period: int = 64, tol: float = 1e-3) -> list[tuple[float, int | None, list[float]]]:
    rows = []
    for a in a_values:
        orbit = map_iterate(a, x0, burn_in + samples - 1)[burn_in:]
        rows.append((float(a), detect_period(a, x0, max_period, burn_in, tol), orbit))
    return rows


def write_bifurcation_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a", "period", "sample_index", "x"])
        for a, period, orbit in rows:
            for i, x in enumerate(orbit):
                w.writerow([repr(a), "none" if period is None else period, i, repr(x)])


@dataclass
class PopulationDataset:
    a: float
    x0: np.ndarray
    train_times: np.ndarray
    train: np.ndarray          # (N, len(train_times))
    test_times: np.ndarray
    test: np.ndarray           # (N, len(test_times))
    seed: int = 0

    def to_csv(self, path, split: str = "train") -> None:
        times, values = (self.train_times, self.train) if split == "train" else (self.test_times, self.test)
        write_series_csv(path, times, values)


def write_series_csv(path, times, values) -> None:
    """``series_id,t,x`` rows; ``values`` is ``(N, len(times))``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["series_id", "t", "x"])
        for i, row in enumerate(values):
            for t, x in zip(times, row):
                w.writerow([i, repr(float(t)), repr(float(x))])


def gen_population_dataset(
    a: float,
    n_traj: int = 100,
    seed: int = 0,
    x0_range: tuple[float, float] = (0.1, 2.0),
    t_train: float = 3.0,
    t_test: float = 13.0,
    dt: float = 0.1,
) -> PopulationDataset:
    """Train series on ``[0, t_train]`` and their continuation on ``(t_train, t_test]``."""
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(x0_range[0], x0_range[1], size=n_traj)
    n_tr = int(round(t_train / dt))
    n_te = int(round((t_test - t_train) / dt))
    train_times = np.round(dt * np.arange(n_tr + 1), 12)
    test_times = np.round(t_train + dt * np.arange(1, n_te + 1), 12)
    train = np.stack([population_exact(a, x0, t) for t in train_times], axis=1)
    test = np.stack([population_exact(a, x0, t) for t in test_times], axis=1)
    return PopulationDataset(a, x0, train_times, train, test_times, test, seed)


@dataclass
class AnnuliSpec:
    r1: float = 1.0
    r2: float = 2.0
    r3: float = 3.0
    n_per_class: int = 512
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.r1 < self.r2 < self.r3:
            raise ValueError("radii must satisfy 0 < r1 < r2 < r3")
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be positive")


def gen_annuli(spec: AnnuliSpec) -> tuple[np.ndarray, np.ndarray]:
    """Points ``(2 n, 2)`` and labels: -1 inside the disk r1, +1 on the annulus [r2, r3]."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_per_class
    r_in = spec.r1 * np.sqrt(rng.uniform(size=n))
    r_out = np.sqrt(spec.r2 ** 2 + rng.uniform(size=n) * (spec.r3 ** 2 - spec.r2 ** 2))
    r_out = np.clip(r_out, spec.r2, spec.r3)
    r = np.concatenate([r_in, r_out])
    theta = rng.uniform(0.0, 2.0 * np.pi, size=2 * n)
    pts = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    labels = np.concatenate([-np.ones(n), np.ones(n)])
    perm = rng.permutation(2 * n)
    return pts[perm], labels[perm]


def write_annuli_csv(path, points, labels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "label"])
        for (x1, x2), lab in zip(points, labels):
            w.writerow([repr(float(x1)), repr(float(x2)), int(lab)])


def gen_linear_dataset(c: float, xs: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    xs = np.asarray(xs, dtype=np.float64)
    return xs, c * xs
