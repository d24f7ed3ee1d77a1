"""Run configuration: JSON schema, loading and model construction."""

from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .coefficients import OUTER_MAPS, ModelSpec, coordinate_kernel, make_payoff, moving_average_kernel
from .errors import ConfigError
from .hilbert_state import HistoryGrid, LiftedState
from .models import MODELS

SCHEMA_VERSION = 1

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}
_matrix = {"type": "array", "items": {"type": "array", "items": _num}}

_kernel = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["coordinate", "moving_average", "inline"]},
        "index": {"type": "integer", "minimum": 0},
        "weight": _num,
        "span": _pos,
        "present_weight": _num,
        "present": {"type": "array", "items": _num},
        "history": _matrix,
    },
    "additionalProperties": False,
}

MODEL_SCHEMA = {
    "type": "object",
    "properties": {
        "preset": {"enum": sorted(MODELS)},
        "params": {"type": "object"},
        "rate": _num,
        "horizon": _pos,
        "dimension": _posint,
        "grid": {
            "type": "object",
            "properties": {"window": _pos, "nodes": {"type": "integer", "minimum": 3}},
            "additionalProperties": False,
        },
        "volatility": {
            "type": "object",
            "required": ["map", "constant", "slopes", "kernels"],
            "properties": {
                "map": {"enum": sorted(OUTER_MAPS)},
                "constant": _matrix,
                "slopes": {"type": "array"},
                "lower": _num,
                "upper": _num,
                "cap": _pos,
                "kernels": {"type": "array", "items": _kernel, "minItems": 1},
            },
            "additionalProperties": False,
        },
        "payoff": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["call", "put", "linear", "basket", "history_average_strike", "constant"]},
                "strike": _num,
                "weights": {"type": "array", "items": _num},
                "span": _pos,
                "index": {"type": "integer", "minimum": 0},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["schema_version"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "out_dir": {"type": "string"},
        "model": MODEL_SCHEMA,
        "model_file": {"type": "string"},
        "state": {
            "type": "object",
            "properties": {
                "present": {"type": "array", "items": _num, "minItems": 1},
                "history": {"oneOf": [{"const": "flat"}, _matrix]},
            },
            "additionalProperties": False,
        },
        "sim": {
            "type": "object",
            "properties": {
                "dt": _pos,
                "paths": _posint,
                "scheme": {"enum": ["mild", "yosida"]},
                "n": _posint,
                "antithetic": {"type": "boolean"},
                "chunk": _posint,
                "max_dim": {"type": "integer", "minimum": 1, "maximum": 8},
            },
            "additionalProperties": False,
        },
        "price": {"type": "object", "properties": {"t": {"type": "number", "minimum": 0}},
                  "additionalProperties": False},
        "delta": {"type": "object",
                  "properties": {"t": {"type": "number", "minimum": 0},
                                 "coordinate": {"type": "integer", "minimum": 0}},
                  "additionalProperties": False},
        "simulate": {"type": "object",
                     "properties": {"t": {"type": "number", "minimum": 0}, "paths_out": _posint,
                                    "full_state": {"type": "boolean"}},
                     "additionalProperties": False},
        "section": {
            "type": "object",
            "properties": {
                "n": _posint, "t_start": _pos, "t_end": _pos,
                "center": {"type": "array", "items": _num, "minItems": 1, "maxItems": 3},
                "radius": _pos, "space_nodes": {"type": "integer", "minimum": 3},
                "time_nodes": {"type": "integer", "minimum": 2},
                "beta_paths": _posint, "check_paths": _posint,
                "history_level": _num,
            },
            "additionalProperties": False,
        },
        "regularity": {
            "type": "object",
            "properties": {
                "n_list": {"type": "array", "items": _posint, "minItems": 1},
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "inner_t_start": _pos, "inner_t_end": _pos, "inner_radius": _pos,
                "source": {"enum": ["pde", "monte-carlo"]},
            },
            "additionalProperties": False,
        },
        "hedge": {
            "type": "object",
            "properties": {
                "rebalances": _posint,
                "rebalance_list": {"type": "array", "items": _posint, "minItems": 1},
                "paths": _posint,
                "delta_source": {"enum": ["pathwise", "yosida", "analytic"]},
                "delta_paths": {"type": "integer", "minimum": 2},
                "n": _posint,
                "market_steps": _posint,
            },
            "additionalProperties": False,
        },
        "diag": {
            "type": "object",
            "properties": {
                "n_list": {"type": "array", "items": _posint, "minItems": 1},
                "t": _pos,
                "mollifier_n": {"type": "array", "items": _posint, "minItems": 1},
                "pairs": _posint,
            },
            "additionalProperties": False,
        },
    },
    "not": {"required": ["model", "model_file"]},
    "additionalProperties": False,
}

BUILTIN_PREFIX = "builtin:"


def builtin_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("delayhedge.fixtures").iterdir()
                  if p.name.endswith(".json"))


def _read_json(text: str, where: str) -> dict:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{where}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc


def load_config(ref: str) -> tuple[dict, Path | None]:
    """Load and validate a config from a path or ``builtin:NAME``.

    Returns the config and the directory used to resolve relative model files.
    """
    if ref.startswith(BUILTIN_PREFIX):
        name = ref[len(BUILTIN_PREFIX):]
        if name not in builtin_names():
            raise ConfigError(f"unknown builtin config {name!r}; available: {', '.join(builtin_names())}")
        text = resources.files("delayhedge.fixtures").joinpath(name + ".json").read_text()
        base = None
    else:
        path = Path(ref)
        if not path.is_file():
            raise ConfigError(f"config file not found: {ref}")
        text = path.read_text()
        base = path.parent
    cfg = _read_json(text, ref)
    validate_config(cfg)
    return cfg, base


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config field {where}: {exc.message}") from exc


def config_digest(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def resolve_model_block(cfg: dict, base: Path | None) -> dict:
    if "model_file" in cfg:
        ref = cfg["model_file"]
        path = Path(ref) if base is None or Path(ref).is_absolute() else base / ref
        if not path.is_file():
            raise ConfigError(f"model file not found: {path}")
        block = _read_json(path.read_text(), str(path))
        try:
            jsonschema.validate(block, MODEL_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"model file field {where}: {exc.message}") from exc
        return block
    return cfg.get("model", {"preset": "black_scholes"})


def _kernel_from(block: dict, grid: HistoryGrid, m: int) -> LiftedState:
    kind = block["type"]
    idx = block.get("index", 0)
    if idx >= m:
        raise ConfigError(f"kernel index {idx} out of range for dimension {m}")
    if kind == "coordinate":
        return coordinate_kernel(grid, m, idx, block.get("weight", 1.0))
    if kind == "moving_average":
        if "span" not in block:
            raise ConfigError("moving_average kernel needs a span")
        return moving_average_kernel(grid, m, block["span"], idx, block.get("present_weight", 0.0))
    x0 = np.asarray(block.get("present", [0.0] * m), dtype=float)
    x1 = np.asarray(block.get("history", np.zeros((m, grid.nodes))), dtype=float)
    if x0.shape != (m,) or x1.shape != (m, grid.nodes):
        raise ConfigError(f"inline kernel must have present of length {m} and history of shape ({m}, {grid.nodes})")
    return LiftedState(x0, x1, grid)


def build_model(block: dict) -> ModelSpec:
    """ModelSpec from a preset (with optional params) or an explicit description."""
    block = copy.deepcopy(block)
    grid_block = block.get("grid")
    grid = HistoryGrid(**grid_block) if grid_block else None
    if "preset" in block:
        params = dict(block.get("params", {}))
        for key in ("rate", "horizon"):
            if key in block:
                params[key] = block[key]
        if grid is not None:
            params["grid"] = grid
        try:
            return MODELS[block["preset"]](**params)
        except TypeError as exc:
            raise ConfigError(f"model params: {exc}") from exc
    missing = [k for k in ("rate", "horizon", "volatility", "payoff") if k not in block]
    if missing:
        raise ConfigError(f"model is missing fields: {', '.join(missing)}")
    grid = grid or HistoryGrid()
    m = block.get("dimension", 1)
    vol = block["volatility"]
    kernels = [_kernel_from(k, grid, m) for k in vol["kernels"]]
    cls = OUTER_MAPS[vol["map"]]
    extra = {}
    if vol["map"] == "clipped_affine":
        extra = {"lower": vol.get("lower", -np.inf), "upper": vol.get("upper", np.inf)}
    elif vol["map"] == "tanh":
        extra = {"cap": vol.get("cap", 1.0)}
    outer = cls(vol["constant"], vol["slopes"], **extra)
    pay = block["payoff"]
    payoff = make_payoff(pay["kind"], grid, m, pay.get("strike", 1.0), pay.get("weights"),
                         pay.get("span"), pay.get("index", 0))
    return ModelSpec(block["rate"], block["horizon"], grid, kernels, outer, payoff,
                     name=block.get("name", "custom"))


def build_state(cfg: dict, spec: ModelSpec) -> LiftedState:
    st = cfg.get("state", {})
    present = np.asarray(st.get("present", [1.0] * spec.m), dtype=float)
    if present.shape != (spec.m,):
        raise ConfigError(f"state/present must have length {spec.m}")
    hist = st.get("history", "flat")
    if hist == "flat":
        return LiftedState.constant_path(present, spec.grid)
    x1 = np.asarray(hist, dtype=float)
    if x1.shape != (spec.m, spec.grid.nodes):
        raise ConfigError(f"state/history must have shape ({spec.m}, {spec.grid.nodes})")
    return LiftedState(present, x1, spec.grid)
