"""Experiment configuration: JSON schema, loading and object construction."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import jsonschema
import numpy as np

from ..convex_geom import ConvexBody, body_from_spec
from ..errors import ConfigError
from ..euler import euler_B, symgrad_pair
from ..field import Grid, HomogeneousOperator, gradient_operator, laplacian_operator
from .generators import FAMILIES, SyntheticFamily

MODES = ("whole_space", "domain", "varying_k")
BUILTIN_OPERATORS = ("gradient", "symgrad", "laplacian", "euler_B")

_vector = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_body = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["ball", "vpolytope"]},
        "center": _vector,
        "radius": {"type": "number", "minimum": 0},
        "vertices": {"type": "array", "items": _vector, "minItems": 1},
        "inflation": {"type": "number", "minimum": 0},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["seed", "mode", "operator", "grid"],
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer"},
        "mode": {"enum": list(MODES)},
        "operator": {
            "oneOf": [
                {"enum": list(BUILTIN_OPERATORS)},
                {
                    "type": "object",
                    "required": ["order", "in_components", "out_components", "coeffs"],
                    "properties": {
                        "order": {"enum": [1, 2]},
                        "in_components": {"type": "integer", "minimum": 1},
                        "out_components": {"type": "integer", "minimum": 1},
                        "coeffs": {"type": "array", "minItems": 1},
                    },
                },
            ]
        },
        "grid": {
            "type": "object",
            "required": ["shape"],
            "additionalProperties": False,
            "properties": {
                "shape": {"type": "array", "items": {"type": "integer", "minimum": 5}, "minItems": 1},
                "spacing": {"type": "number", "exclusiveMinimum": 0},
                "origin": _vector,
                "boundary": {"enum": ["extend", "periodic"]},
                "cell_centred": {"type": "boolean"},
            },
        },
        "K": _body,
        "K_map": {
            "type": "object",
            "required": ["kind", "center", "radius0", "slope"],
            "properties": {
                "kind": {"enum": ["ball_affine"]},
                "center": _vector,
                "radius0": {"type": "number", "exclusiveMinimum": 0},
                "slope": _vector,
            },
        },
        "generator": {
            "type": "object",
            "required": ["family", "lambda0"],
            "properties": {
                "family": {"enum": list(FAMILIES)},
                "lambda0": {"type": "number", "exclusiveMinimum": 0},
                "ratio": {"type": "number"},
                "j_range": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                "support_lo": _vector,
                "support_hi": _vector,
                "spikes": {"type": "integer", "minimum": 1},
                "width": {"type": "number", "exclusiveMinimum": 0},
                "wavelength": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "inputs": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "M": {"type": "number", "exclusiveMinimum": 0},
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gamma": {"type": "number", "exclusiveMinimum": 0},
                "gamma_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "c2": {"type": "number", "exclusiveMinimum": 0},
                "c3": {"type": "number", "exclusiveMinimum": 0},
                "c4": {"type": "number", "exclusiveMinimum": 0},
                "c5": {"type": "number", "exclusiveMinimum": 0},
                "lambda_stop": {"type": "number", "exclusiveMinimum": 0},
                "stage_floor": {"type": "number", "exclusiveMinimum": 0},
                "slack": {"type": "number", "minimum": 0},
            },
        },
        "domain": {
            "type": "object",
            "required": ["U_lo", "U_hi"],
            "properties": {
                "U_lo": _vector,
                "U_hi": _vector,
                "width": {"type": "number", "exclusiveMinimum": 0},
                "u0": {"type": "string"},
            },
        },
        "varying_k": {
            "type": "object",
            "required": ["levels"],
            "properties": {
                "levels": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "eta": {"type": "number", "exclusiveMinimum": 0},
                "gamma_factor": {"type": "number", "exclusiveMinimum": 0},
                "margin": {"type": "integer", "minimum": 0},
            },
        },
        "output": {
            "type": "object",
            "properties": {
                "report": {"type": "string"},
                "dump_fields": {"type": "boolean"},
                "out_dir": {"type": "string"},
            },
        },
    },
}


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(raw, path.parent)

    @classmethod
    def from_dict(cls, raw: dict, base_dir=None) -> "ExperimentConfig":
        try:
            jsonschema.validate(raw, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config error at {where}: {exc.message}") from exc
        cfg = cls(raw, Path(base_dir) if base_dir is not None else Path.cwd())
        cfg._check_consistency()
        return cfg

    def _check_consistency(self):
        r = self.raw
        if ("generator" in r) == ("inputs" in r):
            raise ConfigError("give exactly one of 'generator' or 'inputs'")
        if r["mode"] == "varying_k":
            if "K_map" not in r or "varying_k" not in r:
                raise ConfigError("varying_k mode needs 'K_map' and 'varying_k'")
        elif "K" not in r:
            raise ConfigError(f"{r['mode']} mode needs 'K'")
        if r["mode"] == "domain" and "domain" not in r:
            raise ConfigError("domain mode needs 'domain'")
        for p in self.input_paths() + self.u0_paths():
            if not p.is_file():
                raise ConfigError(f"referenced field file not found: {p}")

    # -- paths ---------------------------------------------------------------
    def _resolve(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.base_dir / q

    def input_paths(self) -> list[Path]:
        return [self._resolve(p) for p in self.raw.get("inputs", [])]

    def u0_paths(self) -> list[Path]:
        u0 = self.raw.get("domain", {}).get("u0")
        return [self._resolve(u0)] if u0 and u0 != "zero" else []

    # -- objects -------------------------------------------------------------
    @property
    def mode(self) -> str:
        return self.raw["mode"]

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def grid(self) -> Grid:
        gs = self.raw["grid"]
        shape = tuple(gs["shape"])
        if gs.get("cell_centred"):
            # nodes at cell centres of [0, 1]^d
            h = 1.0 / shape[0]
            origin = gs.get("origin", [0.5 * h] * len(shape))
        else:
            h = gs.get("spacing", 1.0 / (shape[0] - 1))
            origin = gs.get("origin")
        return Grid(shape, gs.get("spacing", h), origin, gs.get("boundary", "extend"))

    def operator(self) -> HomogeneousOperator:
        op = self.raw["operator"]
        d = len(self.raw["grid"]["shape"])
        if isinstance(op, dict):
            try:
                return HomogeneousOperator.from_json(op)
            except Exception as exc:  # noqa: BLE001 - any malformed table is a config error
                raise ConfigError(f"invalid operator table: {exc}") from exc
        if op == "gradient":
            return gradient_operator(d)
        if op == "symgrad":
            return symgrad_pair(d)[0]
        if op == "laplacian":
            return laplacian_operator(d)
        return euler_B(d - 1)

    def body(self) -> ConvexBody:
        return body_from_spec(self.raw["K"])

    def K_map(self) -> tuple[Callable, list]:
        """``x -> K_x`` and a modulus table for the affine-radius ball family."""
        spec = self.raw["K_map"]
        c = np.asarray(spec["center"], float)
        r0 = float(spec["radius0"])
        slope = np.asarray(spec["slope"], float)

        def K_map(x):
            return ConvexBody.ball(c, r0 + float(slope @ np.asarray(x, float)))

        s = float(np.linalg.norm(slope))
        levels = self.raw["varying_k"]["levels"]
        modulus = [(1.0 / lv, math.inf if s == 0 else 1.0 / (lv * s)) for lv in sorted(set(levels))]
        if s == 0:
            modulus.append((0.0, math.inf))
        return K_map, modulus

    def family(self) -> SyntheticFamily | None:
        gen = self.raw.get("generator")
        if gen is None:
            return None
        kw = {k: v for k, v in gen.items() if k != "family"}
        return SyntheticFamily(gen["family"], seed=self.seed, **kw)

    def schedule(self) -> dict:
        return dict(self.raw.get("schedule", {}))

    def output(self) -> dict:
        return dict(self.raw.get("output", {}))
