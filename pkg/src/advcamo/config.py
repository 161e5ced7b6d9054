"""Run configuration files and provenance records.

A run is described by one YAML file; command-line overrides are dotted
paths into that structure (``attack.delta=0.7``). Every run directory
gets a provenance.json with the full config snapshot, the seed, the
overrides that were applied, the code version, and digests of the
outputs, so a run can be reproduced from its directory alone.

Secrets never live in config files: judge credentials come from the
environment (see judge.py).
"""
from __future__ import annotations

import hashlib
import json
import secrets
import subprocess
import time
from pathlib import Path

import yaml

from . import __version__
from .errors import ConfigError
from .losses import AttackConfig, DEFAULT_LAYER_WEIGHTS
from .sampling import DEFAULT_PITCH_WEIGHTS, GRID_PITCHES, SamplingPolicy
from .transforms import DEFAULT_SCHEDULE, ScheduleEntry
from .attack import RunConfig

__all__ = [
    "default_config_dict",
    "load_config_file",
    "apply_overrides",
    "build_run_config",
    "new_run_id",
    "file_digest",
    "code_version",
    "write_provenance",
]


def default_config_dict() -> dict:
    """The documented schema with its defaults, as plain data."""
    return {
        "run": {
            "seed": 0,
            "learning_rate": 0.1,
            "update_rule": "sign",
            "max_epochs": 5,
            "checkpoint_every": 60,
            "texture_resolution": [512, 512],
            "init_mode": "random_uniform",
            "init_path": None,
            "victim_name": "surrogate-vlm",
            "victim_seed": 0,
        },
        "attack": {
            "delta": 0.8,
            "layer_weights": dict(DEFAULT_LAYER_WEIGHTS),
            "lambda_smooth": 1e-4,
            "smooth_on": "render",
            "reselect_every": 1,
        },
        "sampling": {
            "pitch_weights": {str(k): v for k, v in DEFAULT_PITCH_WEIGHTS.items()},
            "batch_size": 8,
            "seed": 0,
        },
        "schedule": [
            {
                "crop_fraction": e.crop_fraction,
                "weight": e.weight,
                "output_size": list(e.output_size),
                "label": e.label,
            }
            for e in DEFAULT_SCHEDULE
        ],
        "paths": {
            "dataset": None,
            "out": None,
        },
        "judge": {
            "mode": "none",  # none | mock | http
        },
        "eval": {
            "mode": "closed_set",  # closed_set | open_text
        },
    }


def _deep_update(base: dict, extra: dict) -> dict:
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


def load_config_file(path=None) -> dict:
    """Defaults merged with the YAML file at ``path`` (if any)."""
    cfg = default_config_dict()
    if path is None:
        return cfg
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        loaded = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if loaded is None:
        return cfg
    if not isinstance(loaded, dict):
        raise ConfigError(f"config {path} must be a mapping, got {type(loaded).__name__}")
    return _deep_update(cfg, loaded)


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``section.key=value`` overrides in place; values are parsed
    as YAML scalars. ``sampling.pitch_ratio=a:b:c`` is shorthand for the
    three grid pitch weights (shallow to steep)."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form path=value")
        dotted, raw = item.split("=", 1)
        if dotted == "sampling.pitch_ratio":
            parts = raw.split(":")
            if len(parts) != len(GRID_PITCHES):
                raise ConfigError(
                    f"pitch_ratio needs {len(GRID_PITCHES)} numbers, got {raw!r}"
                )
            cfg["sampling"]["pitch_weights"] = {
                str(p): float(v) for p, v in zip(GRID_PITCHES, parts)
            }
            continue
        keys = dotted.split(".")
        if not all(keys):
            raise ConfigError(f"override path {dotted!r} has empty segments")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse override value {raw!r}: {exc}") from exc
        node = cfg
        for key in keys[:-1]:
            nxt = node.get(key)
            if not isinstance(nxt, dict):
                raise ConfigError(f"override path {dotted!r} does not exist in the schema")
            node = nxt
        if keys[-1] not in node:
            raise ConfigError(f"override key {dotted!r} does not exist in the schema")
        node[keys[-1]] = value
    return cfg


def build_run_config(cfg: dict) -> RunConfig:
    """RunConfig from a fully merged config dict; validation happens in
    the dataclass constructors."""
    run = cfg["run"]
    a = cfg["attack"]
    s = cfg["sampling"]
    try:
        return RunConfig(
            attack=AttackConfig(
                delta=float(a["delta"]),
                layer_weights={str(k): float(v) for k, v in a["layer_weights"].items()},
                lambda_smooth=float(a["lambda_smooth"]),
                smooth_on=str(a["smooth_on"]),
                reselect_every=int(a["reselect_every"]),
            ),
            sampling=SamplingPolicy(
                pitch_weights={float(k): float(v) for k, v in s["pitch_weights"].items()},
                batch_size=int(s["batch_size"]),
                seed=int(s.get("seed", 0)),
            ),
            schedule=tuple(
                ScheduleEntry(
                    crop_fraction=float(e["crop_fraction"]),
                    weight=float(e["weight"]),
                    output_size=tuple(e.get("output_size", (224, 224))),
                    label=str(e.get("label", "")),
                )
                for e in cfg["schedule"]
            ),
            learning_rate=float(run["learning_rate"]),
            update_rule=str(run.get("update_rule", "sign")),
            max_epochs=int(run["max_epochs"]),
            checkpoint_every=int(run["checkpoint_every"]),
            seed=int(run["seed"]),
            texture_resolution=tuple(run["texture_resolution"]),
            init_mode=str(run["init_mode"]),
            init_path=run.get("init_path"),
            victim_name=str(run["victim_name"]),
            victim_seed=int(run["victim_seed"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad run config: {exc}") from exc


def new_run_id(prefix: str = "run") -> str:
    return f"{prefix}-{time.strftime('%Y%m%d-%H%M%S')}-{secrets.token_hex(3)}"


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def code_version() -> dict:
    """Package version plus the git commit when the source tree has one."""
    info = {"package": __version__, "git": "unknown"}
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0:
            info["git"] = out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return info


def write_provenance(
    out_dir,
    command: str,
    cfg_snapshot: dict,
    overrides=(),
    seed: int | None = None,
    outputs: dict | None = None,
    extra: dict | None = None,
) -> Path:
    """Drop provenance.json into ``out_dir``; returns its path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "run_id": new_run_id(command),
        "command": command,
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "config": cfg_snapshot,
        "overrides": list(overrides),
        "seed": seed,
        "code_version": code_version(),
        "outputs": outputs or {},
    }
    if extra:
        record.update(extra)
    path = out_dir / "provenance.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path
