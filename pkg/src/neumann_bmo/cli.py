"""Config-driven experiment runner.

Usage::

    neumann-bmo run CONFIG [--out DIR] [--threads K] [--seed S]
    neumann-bmo validate CONFIG
    neumann-bmo list-experiments

``NEUMANN_BMO_OUT``, ``NEUMANN_BMO_THREADS`` and ``NEUMANN_BMO_SEED`` mirror
the flags; flags win over the environment, which wins over the file.

Exit codes: 0 success, 2 invalid config, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import platform
import sys
import typing
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy
import yaml

from .experiments import DESCRIPTIONS, EXPERIMENTS, RunConfig, run
from .solver import BlowUpError

SCHEMA_VERSION = "1"
DEFAULT_CONFIG = Path(__file__).with_name("data") / "default.yaml"
ENV_PREFIX = "NEUMANN_BMO_"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


class ConfigError(ValueError):
    """Invalid configuration; the message carries ``file:line:`` when known."""


# ---------------------------------------------------------------------------
# config parsing

_FIELD_TYPES = typing.get_type_hints(RunConfig)


def _anchor(path: str, node) -> str:
    line = node.start_mark.line + 1 if node is not None else 1
    return f"{path}:{line}"


def _coerce(key: str, value, where: str):
    """Convert a YAML scalar/list to the declared field type of ``key``."""
    hint = _FIELD_TYPES[key]
    args = typing.get_args(hint)
    optional = type(None) in args
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{where}: {key} must not be empty")
    base = next((a for a in args if a is not type(None)), hint) if optional else hint
    origin = typing.get_origin(base)
    try:
        if origin is tuple:
            if not isinstance(value, list) or not value:
                raise TypeError
            return tuple(float(v) for v in value if not isinstance(v, bool))
        if base is bool or isinstance(value, (bool, list, dict)):
            raise TypeError
        if base is int:
            if isinstance(value, float) and not value.is_integer():
                raise TypeError
            return int(value)
        if base is float:
            out = float(value)
            if not math.isfinite(out):
                raise TypeError
            return out
        if base is str:
            return str(value)
    except (TypeError, ValueError):
        pass
    name = getattr(base, "__name__", str(base))
    raise ConfigError(f"{where}: {key} expects {name}, got {value!r}")


def parse_config(text: str, path: str = "<config>", overrides: dict | None = None) -> RunConfig:
    """Parse and validate a flat YAML config; raises :class:`ConfigError`."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 1
        raise ConfigError(f"{path}:{line}: not valid YAML ({getattr(exc, 'problem', exc)})") from None
    required = RunConfig.required()
    if root is None:
        raise ConfigError(f"{path}:1: config is empty; required keys: {', '.join(required)}")
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError(f"{_anchor(path, root)}: config must be a flat key: value mapping")
    data = yaml.safe_load(text)
    known = RunConfig.keys()
    nodes = {}
    for key_node, value_node in root.value:
        key = key_node.value
        if key in nodes:
            raise ConfigError(f"{_anchor(path, key_node)}: duplicate key {key!r}")
        if key not in known:
            raise ConfigError(f"{_anchor(path, key_node)}: unknown key {key!r}; "
                              f"valid keys: {', '.join(known)}")
        if isinstance(value_node, yaml.MappingNode):
            raise ConfigError(f"{_anchor(path, value_node)}: {key} must not be a mapping")
        nodes[key] = value_node
    values = {}
    for key, node in nodes.items():
        values[key] = _coerce(key, data[key], _anchor(path, node))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    missing = [k for k in required if k not in values]
    if missing:
        raise ConfigError(f"{path}:1: missing required keys: {', '.join(missing)} "
                          f"(required: {', '.join(required)})")
    if values["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"{_anchor(path, nodes.get('experiment'))}: unknown experiment "
                          f"{values['experiment']!r}; valid: {', '.join(EXPERIMENTS)}")
    if not 0 <= values["seed"] < 2 ** 64:
        raise ConfigError(f"{_anchor(path, nodes.get('seed'))}: seed must be an unsigned 64-bit integer")
    try:
        cfg = RunConfig(**values)
        cfg.balls()
        if cfg.direction is not None:
            cfg.solver().b(cfg.grid())
    except ValueError as exc:
        where = _anchor(path, _blame(str(exc), nodes))
        raise ConfigError(f"{where}: {exc}") from None
    return cfg


def _blame(message: str, nodes: dict):
    """Best-effort key node for a constructor error message."""
    aliases = {"points_per_axis": ("points_per_axis", "even"), "half_width": ("half_width",),
               "dimension": ("dimension",), "boundary": ("boundary",), "n_levels": ("time_levels",),
               "direction": ("direction", "unit vector"), "refine": ("refine",),
               "threads": ("threads",), "r_min": ("ball family", "time grid"),
               "kernel_variant": ("kernel_variant",), "divergence_path": ("divergence_path",),
               "convergence_tol": ("tolerances",), "corpus": ("corpus",)}
    for key, words in aliases.items():
        if key in nodes and any(w in message for w in words):
            return nodes[key]
    return nodes.get("experiment")


def load_config(path, overrides: dict | None = None) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config(text, str(path), overrides)


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for key, cast in (("OUT", str), ("THREADS", int), ("SEED", int)):
        raw = environ.get(ENV_PREFIX + key)
        if raw:
            try:
                out[key.lower()] = cast(raw)
            except ValueError:
                raise ConfigError(f"{ENV_PREFIX}{key}: expected {cast.__name__}, got {raw!r}") from None
    return out


# ---------------------------------------------------------------------------
# output

def _cell(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return json.dumps(list(v))
    return v


def write_csv(path: Path, rows: list[dict]) -> None:
    columns = []
    for r in rows:
        columns.extend(k for k in r if k not in columns)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _cell(r.get(k)) for k in columns})


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
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _version(dist: str) -> str:
    try:
        return metadata.version(dist)
    except metadata.PackageNotFoundError:
        return "unknown"


def manifest(cfg: RunConfig, files: dict[str, str]) -> dict:
    spec = cfg.grid()
    return {
        "schema_version": SCHEMA_VERSION,
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "threads": cfg.threads,
        "config_hash": config_hash(cfg),
        "config": cfg.to_dict(),
        "grid": spec.describe(),
        "ball_family": cfg.balls(spec).describe(),
        "kernel_variant": cfg.kernel_variant,
        "divergence_path": cfg.divergence_path,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pyyaml": yaml.__version__,
            "neumann_bmo": _version("artifact"),
        },
        "created_utc": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
        "files": files,
    }


def _run_dir(base: Path, cfg: RunConfig) -> Path:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    stem = f"{cfg.experiment}-{stamp}-{config_hash(cfg)[:8]}"
    out = base / stem
    k = 1
    while out.exists():
        out = base / f"{stem}-{k}"
        k += 1
    out.mkdir(parents=True)
    return out


def execute(cfg: RunConfig, out: Path) -> tuple[int, Path]:
    """Run ``cfg`` and write its artifacts into a fresh directory under ``out``."""
    target = _run_dir(Path(out), cfg)
    try:
        result = run(cfg)
    except (BlowUpError, FloatingPointError) as exc:
        (target / "summary.json").write_text(json.dumps({"error": str(exc)}, indent=2) + "\n")
        (target / "manifest.json").write_text(
            json.dumps(_jsonable(manifest(cfg, {})), indent=2, sort_keys=True) + "\n")
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL, target
    files = {}
    for name, rows in result.tables.items():
        path = target / f"{name}.csv"
        write_csv(path, rows)
        files[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()
    summary = _jsonable(result.summary)
    (target / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (target / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    (target / "manifest.json").write_text(
        json.dumps(_jsonable(manifest(cfg, files)), indent=2, sort_keys=True) + "\n")
    if result.failure:
        print(f"numerical failure: {result.failure}", file=sys.stderr)
        print(json.dumps(summary, indent=2, sort_keys=True), file=sys.stderr)
        return EXIT_NUMERICAL, target
    return EXIT_OK, target


# ---------------------------------------------------------------------------
# entry point

def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="neumann-bmo", description="Neumann heat-semigroup experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the experiment named in CONFIG")
    p_run.add_argument("config")
    p_run.add_argument("--out", help="parent directory for run artifacts (default: runs)")
    p_run.add_argument("--threads", type=int, help="worker processes for corpus experiments")
    p_run.add_argument("--seed", type=int, help="override the config seed")
    p_val = sub.add_parser("validate", help="check CONFIG without running it")
    p_val.add_argument("config")
    sub.add_parser("list-experiments", help="print the experiment names")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list-experiments":
        width = max(map(len, EXPERIMENTS))
        for name in EXPERIMENTS:
            print(f"{name:<{width}}  {DESCRIPTIONS[name]}")
        return EXIT_OK
    try:
        env = env_overrides()
        overrides = {"seed": env.get("seed"), "threads": env.get("threads")}
        out = env.get("out", "runs")
        if args.command == "run":
            overrides.update({k: v for k, v in (("seed", args.seed), ("threads", args.threads))
                              if v is not None})
            out = args.out or out
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        d = cfg.balls().describe()
        print(f"valid: experiment={cfg.experiment} seed={cfg.seed} "
              f"grid={cfg.grid().describe()} balls={d['n_balls']} radii={d['n_radii']}")
        return EXIT_OK
    code, target = execute(cfg, Path(out))
    print(target)
    return code


if __name__ == "__main__":
    sys.exit(main())


__all__ = ["ConfigError", "parse_config", "load_config", "execute", "main", "manifest",
           "write_csv", "SCHEMA_VERSION", "DEFAULT_CONFIG"]
