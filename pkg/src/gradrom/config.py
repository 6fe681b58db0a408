"""Experiment configuration: JSON schema, presets and validation."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace

import jsonschema

from .errors import ConfigError

_POS = {"type": "number", "exclusiveMinimum": 0}
_EPS = {"type": "number", "minimum": 0, "exclusiveMaximum": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "model": {"enum": ["rgl", "sh"]},
        "mu": {"type": "number"},
        "domain": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "nx": {"type": "integer", "minimum": 1},
        "ny": {"type": "integer", "minimum": 1},
        "q_poly": {"enum": [1, 2]},
        "penalty": {"oneOf": [{"type": "null"}, _POS]},
        "dt": _POS,
        "t_max": _POS,
        "steady_tol": _POS,
        "seed": {"type": "integer", "minimum": 0},
        "snapshot_stride": {"type": "integer", "minimum": 1},
        "pod_eps": _EPS,
        "deim_eps": _EPS,
        "rsvd_oversampling": {"oneOf": [{"const": "k"}, {"type": "integer", "minimum": 0}]},
        "rsvd_power_iters": {"type": "integer", "minimum": 0, "maximum": 10},
        "rom_mode": {"enum": ["galerkin", "deim", "both"]},
        "newton_tol": _POS,
        "max_newton_iters": {"type": "integer", "minimum": 1, "maximum": 100},
        "linear_solver": {"enum": ["direct", "iterative"]},
        "linear_tol": _POS,
        "output_dir": {"type": ["string", "null"]},
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "rgl"
    mu: float = 0.5
    domain: tuple = (0.0, 256.0)
    nx: int = 32
    ny: int = 32
    q_poly: int = 1
    penalty: float | None = None
    dt: float = 0.01
    t_max: float = 500.0
    steady_tol: float = 1e-4
    seed: int = 0
    snapshot_stride: int = 1
    pod_eps: float = 1e-4
    deim_eps: float = 1e-6
    rsvd_oversampling: object = "k"
    rsvd_power_iters: int = 1
    rom_mode: str = "both"
    newton_tol: float = 1e-10
    max_newton_iters: int = 10
    linear_solver: str = "iterative"
    linear_tol: float = 1e-12
    output_dir: str | None = None

    def __post_init__(self):
        validate(self.to_dict())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["domain"] = list(self.domain)
        return d

    @property
    def modes(self) -> tuple:
        return ("galerkin", "deim") if self.rom_mode == "both" else (self.rom_mode,)


PRESETS = {
    "rgl": dict(model="rgl", mu=0.5, domain=(0.0, 256.0), t_max=500.0, steady_tol=1e-4,
                pod_eps=1e-4, deim_eps=1e-6, snapshot_stride=1),
    "sh": dict(model="sh", mu=0.3, domain=(0.0, 100.0), t_max=60.0, steady_tol=1e-7,
               pod_eps=1e-6, deim_eps=1e-8, snapshot_stride=1),
}


def validate(d: dict) -> None:
    try:
        jsonschema.validate(d, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid configuration at {where}: {exc.message}") from None
    if "domain" in d and not d["domain"][1] > d["domain"][0]:
        raise ConfigError("domain must satisfy a < b")


def from_dict(d: dict, preset: str | None = None) -> ExperimentConfig:
    """Build a config from ``d`` on top of the named preset (or the preset of ``d['model']``)."""
    if not isinstance(d, dict):
        raise ConfigError("configuration must be a JSON object")
    validate(d)
    base = dict(PRESETS[preset or d.get("model", "rgl")])
    if preset and "model" in d and d["model"] != base["model"]:
        raise ConfigError(f"config model {d['model']!r} conflicts with preset {preset!r}")
    base.update(d)
    if "domain" in base:
        base["domain"] = tuple(float(x) for x in base["domain"])
    names = {f.name for f in fields(ExperimentConfig)}
    return ExperimentConfig(**{k: v for k, v in base.items() if k in names})


def load_config(path=None, preset: str | None = None, **overrides) -> ExperimentConfig:
    d = {}
    if path is not None:
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if path is None and preset is None:
        preset = "rgl"
    cfg = from_dict(d, preset)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **overrides) if overrides else cfg
