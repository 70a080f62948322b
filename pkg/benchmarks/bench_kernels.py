"""Time the compiled and numpy interval kernels on representative workloads.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from pcdde_lab.field import FieldSignature, init_params
from pcdde_lab.kernels import get_backend

WORKLOADS = {
    # name: (roles, state_dim, batch, hidden, substeps, method)
    "annuli NODE": (("current",), 2, 64, (10, 10), 10, "rk4"),
    "annuli skip": (("lag0", "lag1"), 2, 64, (10, 10), 1, "euler"),
    "population NPCDDE": (("current", "lag0"), 1, 100, (10, 10), 10, "rk4"),
    "gradcheck small": (("current", "lag0", "lag1"), 3, 2, (6,), 4, "rk4"),
}


def setup(roles, d, batch, hidden, substeps, method):
    sig = FieldSignature(roles, d)
    p = init_params(sig, seed=0, hidden=hidden, biases=True)
    rng = np.random.default_rng(0)
    z0 = rng.normal(size=(batch, d))
    n_lag = sum(r != "current" for r in roles)
    frozen = rng.normal(size=(batch, d * n_lag)) if n_lag else None
    has_current = sig.has_current
    return p.flatten(), p.dims, p.has_bias, p.activation, z0, frozen, 0.1, substeps, method, has_current


def bench(backend, args, repeat):
    flat, dims, hb, act, z0, frozen, h, S, method, cur = args
    states = backend.interval_forward(flat, dims, hb, act, z0, frozen, h, S, method, cur)
    a_end = np.ones_like(z0)
    fwd = min(timeit.repeat(lambda: backend.interval_forward(flat, dims, hb, act, z0, frozen, h, S, method, cur),
                            number=20, repeat=repeat)) / 20
    adj = min(timeit.repeat(lambda: backend.interval_adjoint(flat, dims, hb, act, states, frozen, h, method, cur, a_end),
                            number=20, repeat=repeat)) / 20
    return fwd, adj


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    py = get_backend("python")
    try:
        cy = get_backend("cython")
    except ImportError:
        cy = None
        print("compiled kernels not built; timing the numpy backend only")
    print(f"{'workload':<20} {'kernel':<8} {'numpy us':>10} {'cython us':>10} {'speedup':>8}")
    for name, spec in WORKLOADS.items():
        a = setup(*spec)
        py_t = bench(py, a, args.repeat)
        cy_t = bench(cy, a, args.repeat) if cy else (float("nan"), float("nan"))
        for label, p_, c_ in zip(("forward", "adjoint"), py_t, cy_t):
            print(f"{name:<20} {label:<8} {p_ * 1e6:>10.1f} {c_ * 1e6:>10.1f} {p_ / c_:>7.1f}x")


if __name__ == "__main__":
    main()
