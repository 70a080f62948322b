"""``pcdde-lab`` command-line entry point.

Exit status: 0 when every check passes, 1 when a check fails or training
diverges, 2 for configuration errors.
"""
from __future__ import annotations

import argparse
import copy
import datetime as _dt
import json
import math
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import kernels
from .experiments import DEFAULTS, RUNNERS, worker_count
from .training import TrainConfig, TrainingDiverged

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        ref = base[key]
        if isinstance(ref, dict) and key != "variants":
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be an object")
            if key == "train":
                out[key] = {**ref, **value}
            else:
                out[key] = _merge(ref, value, where + ".")
            continue
        out[key] = _coerce(where, ref, value)
    return out


def _coerce(where: str, ref, value):
    if isinstance(ref, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where!r} must be true or false")
        return value
    if isinstance(ref, int) and not isinstance(ref, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where!r} must be an integer")
        return value
    if isinstance(ref, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where!r} must be a number")
        return float(value)
    if isinstance(ref, list) and not isinstance(value, list):
        raise ConfigError(f"{where!r} must be a list")
    if isinstance(ref, dict) and not isinstance(value, dict):
        raise ConfigError(f"{where!r} must be an object")
    return value


def _set_path(doc: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    cur = doc
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
        if not isinstance(cur, dict):
            raise ConfigError(f"cannot set {dotted!r}")
    cur[keys[-1]] = value


def _parse_set(item: str):
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _validate(command: str, cfg: dict) -> None:
    if "train" in cfg:
        try:
            TrainConfig.from_dict({k: v for k, v in cfg["train"].items()})
        except (TypeError, ValueError) as err:
            raise ConfigError(f"train: {err}") from None
    positive = ("cases", "n_seeds", "n_traj", "n_per_class", "substeps", "node_substeps",
                "samples", "max_period")
    for key in positive:
        if key in cfg and cfg[key] < 1:
            raise ConfigError(f"{key!r} must be positive")
    for key in ("fd_step", "tol", "tol_bptt", "tol_fd", "tau", "a_step"):
        if key in cfg and not cfg[key] > 0:
            raise ConfigError(f"{key!r} must be positive")
    if command == "annuli" and not 0 < cfg["r1"] < cfg["r2"] < cfg["r3"]:
        raise ConfigError("radii must satisfy 0 < r1 < r2 < r3")
    if command == "map":
        if cfg["x0"] != "critical" and not isinstance(cfg["x0"], (int, float)):
            raise ConfigError("'x0' must be a number or \"critical\"")
        if cfg["a_max"] < cfg["a_min"] or cfg["a_min"] <= 0:
            raise ConfigError("need 0 < a_min <= a_max")
    if command == "population":
        unknown = set(cfg["models"]) - {"NPCDDE", "NODE", "NDDE", "ANODE"}
        if unknown or any(a <= 0 for a in cfg["a_values"]):
            raise ConfigError(f"bad population models {sorted(unknown)} or non-positive a")
    if command == "annuli":
        unknown = set(cfg["models"]) - {"NODE", "NPCDDE_n1", "NPCDDE_n2", "NPCDDE_skip"}
        if unknown:
            raise ConfigError(f"unknown annuli models {sorted(unknown)}")
    if command == "fig1":
        if not cfg["variants"] or any(not isinstance(n, int) or n < 1 for n in cfg["variants"].values()):
            raise ConfigError("fig1 variants map names to positive interval counts")


def resolve_config(command: str, args) -> dict:
    cfg = copy.deepcopy(DEFAULTS[command])
    cfg.setdefault("seed", 0)
    if args.config:
        path = Path(args.config)
        try:
            doc = json.loads(path.read_text())
        except OSError as err:
            raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
        except json.JSONDecodeError as err:
            raise ConfigError(f"config {path} is not valid JSON: {err}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        if "command" in doc and "config" in doc:
            if doc["command"] != command:
                raise ConfigError(f"manifest is for {doc['command']!r}, not {command!r}")
            doc = doc["config"]
        cfg = _merge(cfg, doc)
    overrides: dict = {}
    for item in args.set or []:
        key, value = _parse_set(item)
        _set_path(overrides, key, value)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "cases", None) is not None:
        overrides["cases"] = args.cases
    if getattr(args, "sabotage", False):
        overrides["sabotage"] = True
    if getattr(args, "iterations", None) is not None:
        overrides.setdefault("train", {})["iterations"] = args.iterations
    if getattr(args, "n_seeds", None) is not None:
        overrides["n_seeds"] = args.n_seeds
    cfg = _merge(cfg, overrides)
    _validate(command, cfg)
    try:
        worker_count()
    except ValueError as err:
        raise ConfigError(str(err)) from None
    return cfg


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcdde-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gradcheck": "compare adjoint, taped and finite-difference gradients on random models",
        "fig1": "fit F(x)=16x with the linear-field model for T=tau and T=2tau",
        "annuli": "train four models on the concentric-annuli task",
        "population": "train four models on piecewise-constant delay population data",
        "map": "scan the induced one-dimensional map for periodic orbits",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="JSON config (or a manifest.json from an earlier run)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory (default runs/<command>)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry; dotted keys reach nested objects, values parse as JSON")
        if name == "gradcheck":
            p.add_argument("--cases", type=int)
            p.add_argument("--sabotage", action="store_true", help="corrupt the adjoint to prove the check fails")
        if name in ("fig1", "annuli", "population"):
            p.add_argument("--iterations", type=int)
            p.add_argument("--n-seeds", type=int, dest="n_seeds")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    command = args.command
    try:
        cfg = resolve_config(command, args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or Path("runs") / command)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        print(f"config error: cannot create output directory {out}: {err.strerror}", file=sys.stderr)
        return EXIT_CONFIG

    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    t0 = time.perf_counter()
    error = None
    try:
        checks, outputs, summary = RUNNERS[command](cfg, out)
    except TrainingDiverged as err:
        checks, outputs, summary, error = {}, [], {}, str(err)
    passed = error is None and all(c["passed"] for c in checks.values())
    manifest = {
        "command": command,
        "config": cfg,
        "seed": cfg.get("seed"),
        "version": _version(),
        "kernel_backend": kernels.BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "started_at": started,
        "finished_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "elapsed_s": time.perf_counter() - t0,
        "outputs": outputs,
        "checks": checks,
        "passed": passed,
        "error": error,
        "summary": summary,
    }
    (out / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2) + "\n")
    for name, c in checks.items():
        detail = ", ".join(f"{k}={v}" for k, v in c.items() if k != "passed")
        print(f"{'PASS' if c['passed'] else 'FAIL'} {name}" + (f" ({detail})" if detail else ""))
    if error:
        print(f"FAIL {error}", file=sys.stderr)
    return EXIT_OK if passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
