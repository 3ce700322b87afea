"""Flat ``section.key = value`` experiment configuration files.

Example::

    # Table 2 style h-ladder
    model.name = ambiguity
    model.scenario = worst
    scheme.lam = 1/5
    scheme.theta = 1/5
    scheme.rho = 16e3
    scheme.h_eps = 1/10
    scheme.tol = 1e-10
    sweep.h = 1/40, 1/80, 1/160
    probe.point = 1.0

Keys
----
``model.name``
    ``ambiguity`` or ``epstein-zin``.
``model.<field>``
    Any field of the model dataclass (e.g. ``model.scenario``, ``model.sigma``).
``scheme.<field>``
    Any :class:`hjbvi.scheme.SchemeConfig` field (``h``, ``dt``, ``lam``,
    ``theta``, ``rho``, ``r``, ``h_eps``, ``tol``, ``max_iter``, ``T``,
    ``lower``, ``upper``, ``cache_mb``, ``store_every``, ``allow_uncertified``).
``sweep.h``, ``sweep.rho``, ``sweep.h_eps``
    Strictly monotone ladders; the sweep is their Cartesian product.
``sweep.scenario``
    List of model scenarios (ambiguity model only).
``probe.point``
    Point at which values are read (must be a grid node of every cell).
``output.dir``, ``run.seed``, ``run.jobs``
    Output directory, seed for randomized verification, worker count.
``heatmap.time_index``, ``heatmap.C0``
    Stored level to export (default: final) and band constant.

Values are numbers (fractions like ``1/40`` allowed), ``true``/``false``,
``none``, comma-separated lists, or bare strings.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .models import MODELS
from .scheme import SchemeConfig

__all__ = ["ConfigError", "ExperimentConfig", "parse_value", "parse_config", "load_config"]

SWEEP_AXES = ("h", "rho", "h_eps", "scenario")
_SCHEME_FIELDS = {f.name for f in dataclasses.fields(SchemeConfig)}


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


def parse_value(text: str):
    """Parse one config value (see module docstring)."""
    text = text.strip()
    if "," in text:
        return tuple(parse_value(p) for p in text.split(",") if p.strip())
    low = text.lower()
    if low in ("true", "yes"):
        return True
    if low in ("false", "no"):
        return False
    if low in ("none", "null", ""):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    if "/" in text:
        try:
            return float(Fraction(text.replace(" ", "")))
        except (ValueError, ZeroDivisionError):
            pass
    return text


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


@dataclass
class ExperimentConfig:
    """Resolved experiment description."""

    model: str = "ambiguity"
    model_params: dict = field(default_factory=dict)
    scheme: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    probe: tuple | None = None
    output: str = "results"
    seed: int = 0
    jobs: int = 1
    heatmap: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r} (choose from {sorted(MODELS)})")
        valid = {f.name for f in dataclasses.fields(MODELS[self.model])}
        for k in self.model_params:
            if k not in valid:
                raise ConfigError(f"unknown model parameter {k!r}")
        for k in self.scheme:
            if k not in _SCHEME_FIELDS:
                raise ConfigError(f"unknown scheme parameter {k!r}")
        for axis, ladder in self.sweep.items():
            if axis not in SWEEP_AXES:
                raise ConfigError(f"unknown sweep axis {axis!r}")
            ladder = ladder if isinstance(ladder, tuple) else (ladder,)
            self.sweep[axis] = ladder
            if axis == "scenario":
                continue
            if not all(isinstance(v, (int, float)) for v in ladder):
                raise ConfigError(f"sweep.{axis} must be numeric")
            steps = [b - a for a, b in zip(ladder, ladder[1:])]
            if not (all(s > 0 for s in steps) or all(s < 0 for s in steps)):
                raise ConfigError(f"sweep.{axis} must be strictly monotone")
        if self.probe is not None and not isinstance(self.probe, tuple):
            self.probe = (self.probe,)

    def model_instance(self, **overrides):
        params = {**self.model_params, **overrides}
        try:
            return MODELS[self.model](**params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def scheme_config(self, **overrides) -> SchemeConfig:
        params = {**self.scheme, **overrides}
        for key in ("lower", "upper"):
            if params.get(key) is not None and not isinstance(params[key], tuple):
                params[key] = (params[key],)
        try:
            return SchemeConfig(**params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def cells(self) -> list[dict]:
        """Cartesian product of the sweep axes (a single empty cell without sweeps)."""
        out = [{}]
        for axis in SWEEP_AXES:
            if axis in self.sweep:
                out = [{**c, axis: v} for c in out for v in self.sweep[axis]]
        return out

    def with_overrides(self, overrides) -> "ExperimentConfig":
        """Apply ``key=value`` strings (the CLI ``--override`` flag)."""
        flat = self.to_flat()
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            k, v = item.split("=", 1)
            flat[k.strip()] = parse_value(v)
        return from_flat(flat)

    def to_flat(self) -> dict:
        flat = {"model.name": self.model}
        flat.update({f"model.{k}": v for k, v in self.model_params.items()})
        flat.update({f"scheme.{k}": v for k, v in self.scheme.items()})
        flat.update({f"sweep.{k}": v for k, v in self.sweep.items()})
        flat.update({f"heatmap.{k}": v for k, v in self.heatmap.items()})
        if self.probe is not None:
            flat["probe.point"] = self.probe
        flat["output.dir"] = self.output
        flat["run.seed"] = self.seed
        flat["run.jobs"] = self.jobs
        return flat

    def dumps(self) -> str:
        """Resolved config in the file format (sorted keys; reparses to an equal config)."""
        return "".join(f"{k} = {_format_value(v)}\n" for k, v in sorted(self.to_flat().items()))


def from_flat(flat: dict) -> ExperimentConfig:
    kw = dict(model_params={}, scheme={}, sweep={}, heatmap={})
    for key, value in flat.items():
        section, _, name = key.partition(".")
        if not name:
            raise ConfigError(f"key {key!r} needs a section prefix")
        if key == "model.name":
            kw["model"] = value
        elif section == "model":
            kw["model_params"][name] = value
        elif section == "scheme":
            kw["scheme"][name] = value
        elif section == "sweep":
            kw["sweep"][name] = value
        elif section == "heatmap":
            kw["heatmap"][name] = value
        elif key == "probe.point":
            kw["probe"] = value if isinstance(value, tuple) else (value,)
        elif key == "output.dir":
            kw["output"] = str(value)
        elif key == "run.seed":
            kw["seed"] = int(value)
        elif key == "run.jobs":
            kw["jobs"] = int(value)
        else:
            raise ConfigError(f"unknown key {key!r}")
    return ExperimentConfig(**kw)


def parse_config(text: str) -> ExperimentConfig:
    flat = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in flat:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        flat[key] = parse_value(value)
    return from_flat(flat)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return parse_config(text)
