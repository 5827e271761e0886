"""YAML experiment configs: per-command schemas, presets and validation.

A config file looks like::

    command: bandit-sim
    seed: 3
    output_dir: runs/fig12
    preset: [bandit, fig12]
    params:
      runs: 20

Effective parameters are the command defaults, overlaid by each preset in
order, then by ``params``, then by command-line ``--set`` overrides. Any key
outside the command's schema is rejected.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import yaml

COMMANDS = ("gen-data", "train", "nas-search", "bandit-sim", "roc", "pd-curve", "cost", "selfcheck")


class ConfigError(ValueError):
    pass


class ListOf:
    """Schema marker: a list whose items are mappings checked against ``item``."""

    def __init__(self, item: dict, default: list):
        self.item = item
        self.default = default


def _grid(start, stop, step=1):
    return list(range(start, stop + 1, step))


DATASET = {
    "signal": "gaussian",
    "noise": {"kind": "cscwg", "variance": 1.0, "alpha": 1.25, "dispersion": 1.0},
    "channel": "flat",
    "n_samples": 100,
    "snr_db": _grid(-20, 18, 2),
    "n_h0": 20000,
    "n_h1": 20000,
}

DETECTOR = {"name": "energy", "p": 1.0, "gamma": 1.0}

NAS = {
    "max_layers": 8,
    "min_length": 8,
    "filter_counts": [8, 16, 32, 64],
    "filter_sizes": [3, 5],
    "pool_sizes": [2, 4],
    "n_episodes": 1000,
    "q_init": 0.5,
    "discount": 1.0,
    "epsilon_start": 1.0,
    "epsilon_end": 0.0,
    "decay_fraction": 0.9,
    "reevaluate": False,
}

SECTION = {"frames": 200, "hypothesis": "H1", "gsnr_db": None}


def _plan(gsnrs, frames):
    return [{"frames": frames, "hypothesis": "H1", "gsnr_db": float(g)} for g in gsnrs] + [
        {"frames": frames, "hypothesis": "H0", "gsnr_db": None}
    ]


SCHEMAS = {
    "gen-data": {"dataset": DATASET},
    "train": {
        "dataset": DATASET,
        "arch": "C64x3,GAP",
        "epochs": 15,
        "k": 10,
        "batch_size": 64,
        "learning_rate": 1e-3,
    },
    "nas-search": {
        "dataset": DATASET,
        "nas": NAS,
        "evaluator": {"kind": "cnn", "target": "C64x3,GAP", "k": 10, "epochs": 15},
        "resume": None,
    },
    "bandit-sim": {
        "actions_us": [8.0, 32.0],
        "plan": ListOf(SECTION, _plan((15, 8, 0, -5), 200)),
        "weights": {
            "lambda1": 0.1,
            "r_su": 1.0,
            "lambda2": 20.0,
            "xi": 1.0,
            "lambda3": 1.0 / 32.0,
            "frame_time": 80.0,
            "p_fa": 0.01,
        },
        "agent": {"epsilon": 0.15, "alpha_lr": 0.15, "alpha_pr": 0.1},
        "bank": {
            "kind": "cnn-reference",
            "detector": "flom",
            "p": 1.0,
            "gamma": 1.0,
            "gsnr_db": _grid(-10, 30, 5),
            "trials": 4000,
            "calibration_trials": 40000,
            "monotone": True,
            "width_db": 2.5,
            "midpoints_db": None,
        },
        "policies": ["egreedy", "gb", "fixed"],
        "runs": 10,
    },
    "roc": {"dataset": DATASET, "detector": DETECTOR, "snr_db": 0.0, "trials": 10000, "n_points": 101},
    "pd-curve": {
        "dataset": DATASET,
        "detector": DETECTOR,
        "snr_db": _grid(-20, 18, 2),
        "target_pfa": 0.01,
        "trials": 2000,
        "calibration_trials": None,
    },
    "cost": {
        "architectures": ListOf(
            {"arch": "C64x3,GAP", "input_length": 100},
            [
                {"arch": "C64x3,GAP", "input_length": 100},
                {"arch": "C64x3,C64x3,C32x5,C32x5,C16x3,C16x3,GAP", "input_length": 160},
                {"arch": "C32x3,C32x3,C64x5,C64x5,C16x5,C16x5,C8x3,C64x3,GAP", "input_length": 640},
            ],
        )
    },
    "selfcheck": {"trials": 200000},
}

PRESETS = {
    "dataset1": {"dataset": copy.deepcopy(DATASET)},
    "dataset2": {
        "dataset": {
            "signal": "ofdm",
            "noise": {"kind": "sas", "variance": 1.0, "alpha": 1.25, "dispersion": 1.0},
            "channel": "epa",
            "n_samples": 160,
            "snr_db": _grid(-5, 24),
            "n_h0": 15000,
            "n_h1": 15000,
        }
    },
    "dataset3": {
        "dataset": {
            "signal": "ofdm",
            "noise": {"kind": "sas", "variance": 1.0, "alpha": 1.25, "dispersion": 1.0},
            "channel": "epa",
            "n_samples": 640,
            "snr_db": _grid(-10, 20),
            "n_h0": 15000,
            "n_h1": 15000,
        }
    },
    "nas": {"nas": copy.deepcopy(NAS)},
    "bandit": {
        "weights": copy.deepcopy(SCHEMAS["bandit-sim"]["weights"]),
        "agent": {"epsilon": 0.15, "alpha_lr": 0.15, "alpha_pr": 0.1},
    },
    "fig11": {
        "actions_us": [8.0, 32.0],
        "plan": _plan((15, 8, 0, -5), 200),
        "bank": {"kind": "cnn-reference"},
        "policies": ["egreedy", "gb", "fixed"],
    },
    "fig12": {
        "actions_us": [8.0, 16.0, 24.0, 32.0],
        "plan": _plan((30, 25, 20, 15, 10, 5, 0), 100),
        "bank": {"kind": "calibrated", "detector": "flom", "p": 1.0, "gsnr_db": _grid(0, 30, 5)},
        "policies": ["egreedy", "egreedy-a2", "fixed"],
    },
}

TOP_LEVEL = ("command", "seed", "output_dir", "preset", "params")


# ---------------------------------------------------------------------------


def defaults_for(command: str) -> dict:
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")
    return _defaults(SCHEMAS[command])


def _defaults(schema):
    if isinstance(schema, ListOf):
        return copy.deepcopy(schema.default)
    if isinstance(schema, dict):
        return {k: _defaults(v) for k, v in schema.items()}
    return copy.deepcopy(schema)


def _where(path, lines) -> str:
    line = lines.get(tuple(path))
    dotted = ".".join(str(p) for p in path)
    return f"{dotted} (line {line})" if line else dotted


def _coerce(value, default, path, lines):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if ok:
            value = float(value)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{_where(path, lines)}: expected {type(default).__name__}, got {value!r}")
    return value


def merge(base: dict, overlay, schema, path=(), lines=None):
    """Overlay ``overlay`` onto ``base`` in place, validating against ``schema``."""
    lines = lines or {}
    if not isinstance(overlay, dict):
        raise ConfigError(f"{_where(path, lines) or 'params'}: expected a mapping")
    for key, value in overlay.items():
        p = (*path, key)
        if key not in schema:
            raise ConfigError(f"unknown key '{key}' at {_where(p, lines)}")
        sub = schema[key]
        if isinstance(sub, ListOf):
            if not isinstance(value, list):
                raise ConfigError(f"{_where(p, lines)}: expected a list")
            items = []
            for i, item in enumerate(value):
                filled = _defaults(sub.item)
                merge(filled, item, sub.item, (*p, i), lines)
                items.append(filled)
            base[key] = items
        elif isinstance(sub, dict):
            merge(base[key], value, sub, p, lines)
        else:
            base[key] = _coerce(value, sub, p, lines)
    return base


def _line_index(node, path=(), out=None) -> dict:
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            p = (*path, k.value)
            out[p] = k.start_mark.line + 1
            _line_index(v, p, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            out[(*path, i)] = v.start_mark.line + 1
            _line_index(v, (*path, i), out)
    return out


@dataclass
class ExperimentConfig:
    command: str
    seed: int = 0
    output_dir: str = "out"
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"command": self.command, "seed": self.seed, "output_dir": self.output_dir, "params": self.params}

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def set(self, dotted: str, raw: str) -> None:
        """Apply one ``a.b.c=value`` override; the value is parsed as YAML."""
        keys = dotted.split(".")
        value = yaml.safe_load(raw)
        if keys == ["seed"]:
            self.seed = _coerce(value, 0, ("seed",), {})
            return
        tree = value
        for k in reversed(keys):
            tree = {k: tree}
        merge(self.params, tree, SCHEMAS[self.command])


def build_config(raw: dict, command: str | None = None, lines=None) -> ExperimentConfig:
    lines = lines or {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    for key in raw:
        if key not in TOP_LEVEL:
            raise ConfigError(f"unknown key '{key}' at {_where((key,), lines)}")
    file_cmd = raw.get("command")
    if command and file_cmd and command != file_cmd:
        raise ConfigError(f"config is for '{file_cmd}' but command '{command}' was requested")
    cmd = command or file_cmd
    if cmd is None:
        raise ConfigError("no command given")
    params = defaults_for(cmd)
    presets = raw.get("preset") or []
    if isinstance(presets, str):
        presets = [presets]
    for name in presets:
        if name not in PRESETS:
            raise ConfigError(f"unknown preset '{name}' at {_where(('preset',), lines)}; choose from {', '.join(PRESETS)}")
        try:
            merge(params, PRESETS[name], SCHEMAS[cmd])
        except ConfigError as exc:
            raise ConfigError(f"preset '{name}' does not apply to '{cmd}': {exc}") from None
    merge(params, raw.get("params") or {}, SCHEMAS[cmd], ("params",), lines)
    seed = _coerce(raw.get("seed", 0), 0, ("seed",), lines)
    out = raw.get("output_dir", "out")
    if not isinstance(out, str):
        raise ConfigError(f"{_where(('output_dir',), lines)}: expected a path string")
    return ExperimentConfig(cmd, seed, out, params)


def load_config(path, command: str | None = None) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    lines = _line_index(node) if node is not None else {}
    return build_config(raw or {}, command, lines)
