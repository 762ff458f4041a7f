"""Experiment configuration (JSON, strict schema).

Example::

    {
      "model": "example1",
      "nonlinearity": {"preset": "deadzone", "params": {"width": 2.0}},
      "N": 100,
      "runs": 100,
      "seed": 0,
      "input": {"mean": 0.0, "var": 2.0},
      "algorithms": {"L1": 10, "max_components": 10, "particles": 500},
      "algos": ["qgsf", "qgss", "ekf", "eks"],
      "grid": {"lo": -10, "hi": 10, "points": 400},
      "pdf_times": [25, 50, 75, 100],
      "output": "out"
    }

``model`` is a preset name or an inline object with ``A, B, C, D, Q, R, P,
mu1, P1`` (matrices as row-major nested lists).  ``nonlinearity`` defaults
to the preset matching the model name.  Unknown keys are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Optional

from . import nonlinearity as nlmod
from .model import EXAMPLES, GaussianInput, WienerModel, example

ALGOS = ("qgsf", "qgss", "ekf", "eks", "pf", "ps", "gt")
DEFAULT_ALGOS = ("qgsf", "qgss", "ekf", "eks", "pf", "ps")
MODEL_KEYS = ("A", "B", "C", "D", "Q", "R", "P", "mu1", "P1")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AlgoSettings:
    L1: int = 10
    L2: Optional[int] = None
    max_components: int = 10
    particles: int = 500
    gt_particles: int = 20000
    pf_order: int = 80


@dataclass(frozen=True)
class GridSpec:
    lo: Optional[float] = None
    hi: Optional[float] = None
    points: int = 400

    @classmethod
    def parse(cls, text):
        """``"LO:HI:POINTS"``; empty LO/HI fall back to the GT-based default."""
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"grid must be LO:HI:POINTS, got {text!r}")
        lo = float(parts[0]) if parts[0] else None
        hi = float(parts[1]) if parts[1] else None
        g = cls(lo, hi, int(parts[2]))
        g.check()
        return g

    def check(self):
        if self.points < 2:
            raise ConfigError("grid needs at least 2 points")
        if self.lo is not None and self.hi is not None and not self.lo < self.hi:
            raise ConfigError("grid lo must be below hi")


@dataclass(frozen=True)
class ExperimentConfig:
    model_spec: object = "example1"
    nl_spec: object = None
    N: int = 100
    runs: int = 1
    seed: int = 0
    input: GaussianInput = GaussianInput()
    algorithms: AlgoSettings = AlgoSettings()
    algos: tuple = DEFAULT_ALGOS
    grid: GridSpec = GridSpec()
    pdf_times: tuple = ()
    output: str = "out"

    def build(self):
        """``(WienerModel, PiecewiseNonlinearity)``."""
        if isinstance(self.model_spec, str):
            model, nl = example(self.model_spec)
        else:
            model = WienerModel(**{k: self.model_spec[k] for k in MODEL_KEYS})
            nl = None
        if self.nl_spec is not None:
            if isinstance(self.nl_spec, str):
                nl = nlmod.preset(self.nl_spec)
            else:
                nl = nlmod.preset(self.nl_spec["preset"], **self.nl_spec.get("params", {}))
        if nl is None:
            raise ConfigError("an inline model needs a 'nonlinearity'")
        return model, nl

    def name(self):
        return self.model_spec if isinstance(self.model_spec, str) else "custom"

    def with_overrides(self, **kw):
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def _reject_unknown(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be an object")
    extra = sorted(set(obj) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(extra)}")


def _int(v, name, lo=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{name} must be an integer")
    if lo is not None and v < lo:
        raise ConfigError(f"{name} must be >= {lo}")
    return v


def parse_algos(value):
    if isinstance(value, str):
        value = [a.strip() for a in value.split(",") if a.strip()]
    bad = [a for a in value if a not in ALGOS]
    if bad:
        raise ConfigError(f"unknown algorithm(s): {', '.join(bad)}; choose from {', '.join(ALGOS)}")
    return tuple(dict.fromkeys(value))


def from_dict(d):
    top = ("model", "nonlinearity", "N", "runs", "seed", "input", "algorithms", "algos", "grid", "pdf_times", "output")
    _reject_unknown(d, top, "config")
    kw = {}
    model = d.get("model", "example1")
    if isinstance(model, str):
        if model not in EXAMPLES:
            raise ConfigError(f"unknown model preset {model!r}; choose from {', '.join(EXAMPLES)}")
    else:
        _reject_unknown(model, MODEL_KEYS, "model")
        missing = [k for k in MODEL_KEYS if k not in model]
        if missing:
            raise ConfigError(f"model is missing {', '.join(missing)}")
    kw["model_spec"] = model
    nl = d.get("nonlinearity")
    if nl is not None and not isinstance(nl, str):
        _reject_unknown(nl, ("preset", "params"), "nonlinearity")
        if "preset" not in nl:
            raise ConfigError("nonlinearity needs a 'preset'")
    if isinstance(nl, str) and nl not in nlmod.preset_names():
        raise ConfigError(f"unknown nonlinearity preset {nl!r}")
    kw["nl_spec"] = nl
    if "N" in d:
        kw["N"] = _int(d["N"], "N", 1)
    if "runs" in d:
        kw["runs"] = _int(d["runs"], "runs", 1)
    if "seed" in d:
        kw["seed"] = _int(d["seed"], "seed", 0)
    if "input" in d:
        _reject_unknown(d["input"], ("mean", "var"), "input")
        kw["input"] = GaussianInput(**d["input"])
    if "algorithms" in d:
        _reject_unknown(d["algorithms"], AlgoSettings.__dataclass_fields__, "algorithms")
        kw["algorithms"] = AlgoSettings(**d["algorithms"])
    if "algos" in d:
        kw["algos"] = parse_algos(d["algos"])
    if "grid" in d:
        _reject_unknown(d["grid"], ("lo", "hi", "points"), "grid")
        g = GridSpec(**d["grid"])
        g.check()
        kw["grid"] = g
    if "pdf_times" in d:
        kw["pdf_times"] = tuple(_int(t, "pdf_times entry", 1) for t in d["pdf_times"])
    if "output" in d:
        kw["output"] = str(d["output"])
    cfg = ExperimentConfig(**kw)
    try:
        cfg.build()
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    bad = [t for t in cfg.pdf_times if t > cfg.N]
    if bad:
        raise ConfigError(f"pdf_times beyond N: {bad}")
    return cfg


def load(path):
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(d)
