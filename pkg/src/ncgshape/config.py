"""Run configuration: a flat JSON object with a fixed key set.

Unknown keys and type mismatches are errors; missing keys take the defaults
in :data:`DEFAULTS`. ``emit_config`` writes every key, so its output parses
back to the same configuration.
"""

from __future__ import annotations

import dataclasses
import json
import re
from pathlib import Path
from typing import Any

import numpy as np

from ncgshape import mesh as meshmod
from ncgshape.errors import ConfigError
from ncgshape.optimizers import VARIANTS, OptConfig
from ncgshape.problems import SOURCES, ProblemSpec

MESH_GENERATORS = ("disc", "square")

DEFAULTS: dict[str, Any] = {
    "problem": "poisson",
    "source": "paper",
    "gamma": 0.0,
    "vol0": None,
    "variant": "DY",
    "lbfgs_memory": 5,
    "rel_tol": 1e-3,
    "abs_tol": 0.0,
    "max_iter": 200,
    "armijo_c": 1e-4,
    "shrink": 0.5,
    "initial_step": 1.0,
    "step_expansion": 2.0,
    "quality_floor": 0.05,
    "clip_beta": False,
    "mu": 1.0,
    "damping": 0.2,
    "solver_tol": 1e-10,
    "mesh": "disc",
    "level": 3,
    "scale": [1.0, 1.0],
    "mesh_file": None,
    "fd_t": 1e-4,
    "n_fields": 20,
    "seed": 0,
    "output": "output",
}

# key -> (kind, nullable)
_TYPES: dict[str, tuple[str, bool]] = {
    "problem": ("str", False),
    "source": ("str", False),
    "gamma": ("float", False),
    "vol0": ("float", True),
    "variant": ("str", False),
    "lbfgs_memory": ("int", False),
    "rel_tol": ("float", False),
    "abs_tol": ("float", False),
    "max_iter": ("int", False),
    "armijo_c": ("float", False),
    "shrink": ("float", False),
    "initial_step": ("float", False),
    "step_expansion": ("float", False),
    "quality_floor": ("float", False),
    "clip_beta": ("bool", False),
    "mu": ("float", False),
    "damping": ("float", False),
    "solver_tol": ("float", False),
    "mesh": ("str", True),
    "level": ("int", False),
    "scale": ("pair", False),
    "mesh_file": ("str", True),
    "fd_t": ("float", False),
    "n_fields": ("int", False),
    "seed": ("int", False),
    "output": ("str", False),
}


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Fully resolved configuration; ``values`` holds every key of DEFAULTS."""

    values: dict[str, Any]

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def replace(self, **changes) -> RunConfig:
        vals = dict(self.values)
        for key, val in changes.items():
            vals[key] = _coerce(key, val, None)
        return RunConfig(_validate(vals, None))

    @property
    def problem_spec(self) -> ProblemSpec:
        return ProblemSpec(
            kind=self["problem"], source=self["source"], gamma=self["gamma"], vol0=self["vol0"]
        )

    def opt_config(self, variant: str | None = None) -> OptConfig:
        return OptConfig(
            variant=variant or self["variant"],
            lbfgs_memory=self["lbfgs_memory"],
            rel_tol=self["rel_tol"],
            abs_tol=self["abs_tol"],
            max_iter=self["max_iter"],
            armijo_c=self["armijo_c"],
            shrink=self["shrink"],
            initial_step=self["initial_step"],
            step_expansion=self["step_expansion"],
            quality_floor=self["quality_floor"],
            clip_beta=self["clip_beta"],
            mu=self["mu"],
            damping=self["damping"],
            metric_tol=self["solver_tol"],
        )

    def build_mesh(self) -> meshmod.Mesh:
        if self["mesh_file"] is not None:
            m = meshmod.read_mesh(self["mesh_file"])
        elif self["mesh"] == "disc":
            m = meshmod.generate_unit_disc(self["level"])
        else:
            m = meshmod.generate_unit_square(2 ** (self["level"] + 1))
        sx, sy = self["scale"]
        if (sx, sy) != (1.0, 1.0):
            m = meshmod.scale(m, sx, sy)
        return m

    def build_problem(self, initial_mesh: meshmod.Mesh):
        return self.problem_spec.build(initial_mesh, tol=self["solver_tol"])

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self["seed"])


def _line_of(text: str | None, key: str) -> str:
    if not text:
        return ""
    for i, line in enumerate(text.splitlines(), start=1):
        if re.search(r'"' + re.escape(key) + r'"\s*:', line):
            return f" (line {i}: {line.strip()})"
    return ""


def _coerce(key: str, val: Any, text: str | None) -> Any:
    if key not in _TYPES:
        raise ConfigError(
            f"unknown key {key!r}{_line_of(text, key)}; valid keys: {', '.join(sorted(_TYPES))}"
        )
    kind, nullable = _TYPES[key]
    where = _line_of(text, key)
    if val is None:
        if nullable:
            return None
        raise ConfigError(f"key {key!r} must not be null{where}")
    if kind == "float":
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"key {key!r} expects a number, got {val!r}{where}")
        return float(val)
    if kind == "int":
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(f"key {key!r} expects an integer, got {val!r}{where}")
        return val
    if kind == "bool":
        if not isinstance(val, bool):
            raise ConfigError(f"key {key!r} expects true/false, got {val!r}{where}")
        return val
    if kind == "str":
        if not isinstance(val, str):
            raise ConfigError(f"key {key!r} expects a string, got {val!r}{where}")
        return val
    if (
        not isinstance(val, (list, tuple))
        or len(val) != 2
        or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in val)
    ):
        raise ConfigError(f"key {key!r} expects a pair of numbers, got {val!r}{where}")
    return [float(v) for v in val]


def _validate(vals: dict[str, Any], text: str | None) -> dict[str, Any]:
    def fail(key, msg):
        raise ConfigError(f"key {key!r}: {msg}{_line_of(text, key)}")

    if vals["problem"] not in ("poisson", "geometric"):
        fail("problem", "valid problems: poisson, geometric")
    if vals["source"] not in SOURCES:
        fail("source", f"valid sources: {', '.join(SOURCES)}")
    if vals["variant"] not in VARIANTS:
        fail("variant", f"unknown variant {vals['variant']!r}; valid variants: {', '.join(VARIANTS)}")
    if vals["mesh"] is not None and vals["mesh"] not in MESH_GENERATORS:
        fail("mesh", f"valid generators: {', '.join(MESH_GENERATORS)}")
    if (vals["mesh"] is None) == (vals["mesh_file"] is None):
        fail("mesh_file", "exactly one of 'mesh' and 'mesh_file' must be set")
    if not 0 <= vals["level"] <= meshmod.MAX_DISC_LEVEL:
        fail("level", f"must lie in [0, {meshmod.MAX_DISC_LEVEL}]")
    if min(vals["scale"]) <= 0:
        fail("scale", "factors must be positive")
    if vals["gamma"] < 0:
        fail("gamma", "must be non-negative")
    if vals["vol0"] is not None and vals["vol0"] <= 0:
        fail("vol0", "must be positive")
    if vals["n_fields"] < 1:
        fail("n_fields", "must be positive")
    if vals["fd_t"] <= 0:
        fail("fd_t", "must be positive")
    if vals["solver_tol"] <= 0:
        fail("solver_tol", "must be positive")
    if vals["seed"] < 0:
        fail("seed", "must be non-negative")
    try:
        OptConfig(
            variant=vals["variant"],
            lbfgs_memory=vals["lbfgs_memory"],
            rel_tol=vals["rel_tol"],
            abs_tol=vals["abs_tol"],
            max_iter=vals["max_iter"],
            armijo_c=vals["armijo_c"],
            shrink=vals["shrink"],
            initial_step=vals["initial_step"],
            step_expansion=vals["step_expansion"],
            quality_floor=vals["quality_floor"],
        )
        if vals["mu"] <= 0 or vals["damping"] <= 0:
            raise ValueError("mu and damping must be positive")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return vals


def config_from_dict(raw: dict[str, Any], text: str | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    vals = dict(DEFAULTS)
    vals["scale"] = list(DEFAULTS["scale"])
    for key, val in raw.items():
        vals[key] = _coerce(key, val, text)
    if raw.get("mesh_file") is not None and "mesh" not in raw:
        vals["mesh"] = None
    return RunConfig(_validate(vals, text))


def parse_config(path) -> RunConfig:
    """Read and validate a JSON run configuration.

    Raises:
        ConfigError: on malformed JSON, unknown keys, type mismatches or
            invalid values; the message names the key and its line.

    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        line = text.splitlines()[exc.lineno - 1] if text.splitlines() else ""
        raise ConfigError(
            f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: "
            f"{exc.msg} ({line.strip()})"
        ) from None
    return config_from_dict(raw, text)


def emit_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.values, indent=2, sort_keys=True) + "\n"
