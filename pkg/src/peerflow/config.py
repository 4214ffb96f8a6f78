"""Experiment configuration: a strict sectioned ``key = value`` text format.

Example::

    [model]
    kind = ntk-mlp
    widths = 2, 256, 1
    activations = sigmoid, identity
    s_w = 1.0
    s_b = 0.1

    [data]
    source = half-moons
    q = 8
    d = 200

    [run]
    topology = cycle
    algorithm = dgd

Unknown sections or keys, duplicates and malformed values are errors that
name the offending key and line.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .distopt import ALGORITHMS, LOSSES
from .flow import DEFAULT_DENSE_CAP
from .model import ACTIVATIONS, MODEL_KINDS

SOURCES = ("half-moons", "mnist", "synthetic")
SOLVERS = ("auto", "closed-form", "rk4")
REQUIRED_KEYS = (("data", "source"), ("run", "topology"))


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@dataclass(frozen=True)
class ExperimentConfig:
    # [model]
    kind: str = "ntk-mlp"
    widths: tuple[int, ...] | None = (2, 256, 1)
    activations: tuple[str, ...] | None = None
    s_w: float = 1.0
    s_b: float = 0.1
    model_seed: int = 0
    # [data]
    source: str = "half-moons"
    images: str = ""
    labels: str = ""
    q: int = 8
    d: int = 200
    data_seed: int = 0
    noise: float = 0.1
    pool: int | None = None
    # [run]
    topology: str = "complete"
    algorithm: str = "dgd"
    eta: float = 1e-4
    steps: int = 200
    loss: str = "mse"
    solver: str = "auto"
    rk4_dt: float = 0.1
    dense_cap: int = DEFAULT_DENSE_CAP
    record_params: bool = False
    # [output]
    out_dir: str = ""

    def validate(self) -> "ExperimentConfig":
        def bad(key, msg):
            raise ConfigError(f"{key}: {msg}", key)

        _enum("model.kind", self.kind, MODEL_KINDS)
        _enum("data.source", self.source, SOURCES)
        _enum("run.algorithm", self.algorithm, ALGORITHMS)
        _enum("run.loss", self.loss, LOSSES)
        _enum("run.solver", self.solver, SOLVERS)
        if not (self.topology in ("cycle", "star", "complete") or self.topology.startswith("custom:")):
            bad("run.topology", f"expected cycle, star, complete or custom:<path>, got {self.topology!r}")
        if self.activations is not None:
            for a in self.activations:
                _enum("model.activations", a, ACTIVATIONS)
        if self.widths is not None and any(w <= 0 for w in self.widths):
            bad("model.widths", "widths must be positive")
        if self.kind == "ntk-mlp" and self.widths is None:
            bad("model.widths", "required for ntk-mlp")
        if not self.eta > 0:
            bad("run.eta", f"must be > 0, got {self.eta}")
        if self.steps < 1:
            bad("run.steps", f"must be >= 1, got {self.steps}")
        if self.q < 1 or self.d < 1:
            bad("data.q" if self.q < 1 else "data.d", "must be >= 1")
        if not self.rk4_dt > 0:
            bad("run.rk4_dt", f"must be > 0, got {self.rk4_dt}")
        if self.s_w <= 0 or self.s_b < 0:
            bad("model.s_w" if self.s_w <= 0 else "model.s_b", "out of range")
        if self.noise < 0:
            bad("data.noise", "must be >= 0")
        if self.source == "mnist" and not (self.images and self.labels):
            bad("data.images", "mnist source needs both images and labels paths")
        return self

    def to_text(self) -> str:
        out = []
        for section, keys in _SCHEMA.items():
            out.append(f"[{section}]")
            for key, (attr, kind) in keys.items():
                value = getattr(self, attr)
                if value is None or value == "":
                    continue
                out.append(f"{key} = {_format(kind, value)}")
            out.append("")
        return "\n".join(out)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, model_seed=seed, data_seed=seed)


def _enum(key, value, allowed):
    if value not in allowed:
        raise ConfigError(f"{key}: expected one of {', '.join(allowed)}, got {value!r}", key)


_SCHEMA: dict[str, dict[str, tuple[str, str]]] = {
    "model": {
        "kind": ("kind", "str"),
        "widths": ("widths", "ints"),
        "activations": ("activations", "strs"),
        "s_w": ("s_w", "float"),
        "s_b": ("s_b", "float"),
        "seed": ("model_seed", "int"),
    },
    "data": {
        "source": ("source", "str"),
        "images": ("images", "str"),
        "labels": ("labels", "str"),
        "q": ("q", "int"),
        "d": ("d", "int"),
        "seed": ("data_seed", "int"),
        "noise": ("noise", "float"),
        "pool": ("pool", "int"),
    },
    "run": {
        "topology": ("topology", "str"),
        "algorithm": ("algorithm", "str"),
        "eta": ("eta", "float"),
        "steps": ("steps", "int"),
        "loss": ("loss", "str"),
        "solver": ("solver", "str"),
        "rk4_dt": ("rk4_dt", "float"),
        "dense_cap": ("dense_cap", "int"),
        "record_params": ("record_params", "bool"),
    },
    "output": {
        "dir": ("out_dir", "str"),
    },
}


def _format(kind: str, value) -> str:
    if kind in ("ints", "strs"):
        return ", ".join(str(v) for v in value)
    if kind == "bool":
        return "true" if value else "false"
    if kind == "float":
        return repr(float(value))
    return str(value)


def _convert(kind: str, raw: str):
    if kind == "str":
        return raw
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind == "ints":
        return tuple(int(p) for p in raw.split(",") if p.strip())
    return tuple(p.strip() for p in raw.split(",") if p.strip())


def parse_config_text(text: str, origin: str = "<config>") -> ExperimentConfig:
    values: dict[str, object] = {}
    seen: dict[tuple[str, str], int] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].split(";", 1)[0].strip()
        if not stripped:
            continue
        where = f"{origin}:{lineno}"
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError(f"{where}: malformed section header {stripped!r}")
            section = stripped[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigError(f"{where}: unknown section [{section}]")
            continue
        if "=" not in stripped:
            raise ConfigError(f"{where}: expected 'key = value', got {stripped!r}")
        if section is None:
            raise ConfigError(f"{where}: key outside of any section")
        key, raw = (p.strip() for p in stripped.split("=", 1))
        if key not in _SCHEMA[section]:
            raise ConfigError(f"{where}: unknown key {section}.{key}")
        if (section, key) in seen:
            raise ConfigError(f"{where}: duplicate key {section}.{key}")
        seen[(section, key)] = lineno
        attr, kind = _SCHEMA[section][key]
        try:
            values[attr] = _convert(kind, raw)
        except ValueError:
            raise ConfigError(f"{where}: malformed value for {section}.{key}: {raw!r}") from None
    for section, key in REQUIRED_KEYS:
        if (section, key) not in seen:
            raise ConfigError(f"{origin}: missing required key {section}.{key}")
    try:
        cfg = ExperimentConfig(**values)
        if cfg.kind == "affine" and "widths" not in values:
            cfg = replace(cfg, widths=None)
        return cfg.validate()
    except ConfigError as exc:
        line = seen.get(tuple(exc.key.split(".", 1))) if exc.key else None
        where = f"{origin}:{line}" if line else origin
        raise ConfigError(f"{where}: {exc}", exc.key) from None


def parse_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: config file not found")
    return parse_config_text(path.read_text(), str(path))


CONFIG_FIELDS = tuple(f.name for f in fields(ExperimentConfig))
