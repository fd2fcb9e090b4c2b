"""Run configuration for the pipeline and the studies.

A run config is a flat text file of ``key = value`` lines; ``#`` starts a
comment.  Keys are dotted (``field.kind``, ``seq.ratio``).  Every key has a
typed default so an empty file is a valid config, and
``parse_config(write_config(c)) == c`` for every valid ``c``.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Iterable

from homog.errors import ConfigError
from homog.field import KIND_ALIASES, FieldSpec

GRID = "grid"

# key -> (type, default); None means "not set"
SCHEMA: dict[str, tuple[type, object]] = {
    "seed": (int, 0),
    "eps_bar": (float, 0.1),
    "extension": (str, "continuous"),
    "output": (str, "homog-out"),
    "field.kind": (str, "seeded-random"),
    "field.path": (str, None),
    "field.d": (int, 1),
    "field.lower": (float, 0.0),
    "field.upper": (float, 1.0),
    "field.margin": (float, 0.1),
    "sample.spacing": (float, None),
    "cell.n": (int, 128),
    "mesh.n": (int, 1024),
    "source.kind": (str, "sine"),
    "source.amplitude": (float, -3.0),
    "source.frequency": (float, 10.0),
    "source.value": (float, 1.0),
    "seq.ratio": (float, 0.5),
    "seq.count": (int, 7),
    "study.phi": (str, "one"),
    "study.p": (int, 1),
    "study.cells_per_eps": (int, 8),
    "solver.tol": (float, 1e-10),
    "corrector": (bool, True),
    "baseline": (str, "arithmetic"),
}

# synthesis parameters passed through to FieldSpec when set
FIELD_PARAMS: dict[str, type] = {
    "c": float,
    "mean": float,
    "amplitude": float,
    "period": float,
    "phase": float,
    "a1": float,
    "a2": float,
    "tile": float,
    "thickness": float,
    "axis": int,
    "low": float,
    "contrast": float,
    "cell": float,
    "split": float,
}
for _name, _type in FIELD_PARAMS.items():
    SCHEMA[f"field.{_name}"] = (_type, None)

EXTENSIONS = ("trivial", "continuous", "discrete")
BASELINES = ("arithmetic", "harmonic", "geometric", "none")
SOURCES = ("sine", "constant")
PHIS = ("one", "x-cos")


def _convert(key: str, raw: str):
    kind, _ = SCHEMA[key]
    text = raw.strip()
    if kind is bool:
        lowered = text.lower()
        if lowered in ("true", "yes", "on", "1"):
            return True
        if lowered in ("false", "no", "off", "0"):
            return False
        raise ConfigError(key, f"{key} must be true or false, got '{raw}'")
    if kind is int:
        try:
            return int(text)
        except ValueError:
            raise ConfigError(key, f"{key} must be an integer, got '{raw}'") from None
    if kind is float:
        try:
            value = float(text)
        except ValueError:
            raise ConfigError(key, f"{key} must be a number, got '{raw}'") from None
        if not math.isfinite(value):
            raise ConfigError(key, f"{key} must be finite, got '{raw}'")
        return value
    if not text:
        raise ConfigError(key, f"{key} must not be empty")
    return text


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


class PipelineConfig:
    """Validated run configuration. Read values with ``config["key"]``."""

    def __init__(self, values: dict | None = None) -> None:
        merged = {key: default for key, (_, default) in SCHEMA.items()}
        for key, value in (values or {}).items():
            if key not in SCHEMA:
                raise ConfigError(key, f"unknown config key '{key}'")
            merged[key] = value
        self.values = merged
        self._validate()

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        value = self.values.get(key)
        return default if value is None else value

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PipelineConfig):
            return NotImplemented
        return self.values == other.values

    def __repr__(self) -> str:
        return f"PipelineConfig(field={self['field.kind']!r}, extension={self['extension']!r}, eps_bar={self['eps_bar']})"

    def to_dict(self) -> dict:
        return dict(self.values)

    def replace(self, **changes) -> PipelineConfig:
        """Copy with keys replaced; dots in keys are written as ``__``."""
        values = dict(self.values)
        for key, value in changes.items():
            values[key.replace("__", ".")] = value
        return PipelineConfig(values)

    def field_spec(self) -> FieldSpec | None:
        """The synthesis recipe, or None for a grid-file field."""
        if self["field.kind"] == GRID:
            return None
        params = {
            "d": self["field.d"],
            "lower": self["field.lower"],
            "upper": self["field.upper"],
            "margin": self["field.margin"],
            "seed": self["seed"],
            "eps_bar": self["eps_bar"],
        }
        for name in FIELD_PARAMS:
            value = self[f"field.{name}"]
            if value is not None:
                params[name] = value
        return FieldSpec(self["field.kind"], **params)

    def _validate(self) -> None:
        v = self.values
        for key, (kind, _) in SCHEMA.items():
            value = v[key]
            if value is None:
                continue
            if kind is float and isinstance(value, int) and not isinstance(value, bool):
                v[key] = value = float(value)
            if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
                raise ConfigError(key, f"{key} must be of type {kind.__name__}, got {value!r}")

        if not v["eps_bar"] > 0:
            raise ConfigError("eps_bar", "eps_bar must be positive")
        if v["extension"] not in EXTENSIONS:
            raise ConfigError("extension", f"extension must be one of {', '.join(EXTENSIONS)}")
        kind = v["field.kind"]
        if kind != GRID and kind.lower() not in KIND_ALIASES:
            raise ConfigError("field.kind", f"unknown field kind '{kind}'")
        if kind == GRID and v["field.path"] is None:
            raise ConfigError("field.path", "field.kind = grid needs field.path")
        if v["field.d"] not in (1, 2):
            raise ConfigError("field.d", "field.d must be 1 or 2")
        if not v["field.upper"] > v["field.lower"]:
            raise ConfigError("field.upper", "field.upper must exceed field.lower")
        if not v["field.margin"] > 0:
            raise ConfigError("field.margin", "field.margin must be positive")
        if v["sample.spacing"] is not None and not v["sample.spacing"] > 0:
            raise ConfigError("sample.spacing", "sample.spacing must be positive")
        if v["cell.n"] < 4:
            raise ConfigError("cell.n", "cell.n must be at least 4")
        if v["mesh.n"] < 4:
            raise ConfigError("mesh.n", "mesh.n must be at least 4")
        if v["source.kind"] not in SOURCES:
            raise ConfigError("source.kind", f"source.kind must be one of {', '.join(SOURCES)}")
        if not 0 < v["seq.ratio"] < 1:
            raise ConfigError("seq.ratio", "seq.ratio must lie in (0, 1)")
        if v["seq.count"] < 1:
            raise ConfigError("seq.count", "seq.count must be at least 1")
        if v["study.phi"] not in PHIS:
            raise ConfigError("study.phi", f"study.phi must be one of {', '.join(PHIS)}")
        if v["study.p"] not in (1, 2):
            raise ConfigError("study.p", "study.p must be 1 or 2")
        if v["study.cells_per_eps"] < 8:
            raise ConfigError("study.cells_per_eps", "study.cells_per_eps must be at least 8")
        if not v["solver.tol"] > 0:
            raise ConfigError("solver.tol", "solver.tol must be positive")
        if v["baseline"] not in BASELINES:
            raise ConfigError("baseline", f"baseline must be one of {', '.join(BASELINES)}")


def _parse_lines(lines: Iterable[str], source: str) -> dict:
    values: dict = {}
    for number, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError("", f"{source}:{number}: expected 'key = value', got '{text}'")
        key, raw = (part.strip() for part in text.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(key, f"unknown config key '{key}'")
        values[key] = _convert(key, raw)
    return values


def apply_overrides(values: dict, overrides: Iterable[str]) -> dict:
    """Apply ``key=value`` strings on top of parsed values."""
    result = dict(values)
    for item in overrides:
        result.update(_parse_lines([item], "override"))
    return result


def parse_config(path: str | Path | None, overrides: Iterable[str] = ()) -> PipelineConfig:
    """Read a run config file (or only overrides when ``path`` is None)."""
    values: dict = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError("", f"cannot read config {path}: {exc.strerror or exc}") from exc
        values = _parse_lines(text.splitlines(), str(path))
    return PipelineConfig(apply_overrides(values, overrides))


def write_config(config: PipelineConfig, path: str | Path) -> Path:
    """Write every set key, one per line, in schema order."""
    path = Path(path)
    lines = ["# homog run configuration"]
    for key in SCHEMA:
        value = config[key]
        if value is not None:
            lines.append(f"{key} = {_format(value)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
