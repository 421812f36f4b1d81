"""Configuration files: JSON with ``//`` and ``/* */`` comments, validated against a schema.

A configuration is resolved (defaults filled in) before anything is built, and the
hash of the resolved form identifies a run.
"""
from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .errors import ConfigurationError
from .expr import compile_expression
from .geometry import region_from_dict
from .grid import build_ball_domain, build_box_domain, build_interval_domain
from .kernel import finite_measure, make_alpha_stable
from .operator import CoefficientFields
from .problem import C_REGIMES, DRIFT_SCHEMES, ProblemSpec

SCHEMA_VERSION = 1

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_bound = {"anyOf": [{"type": "number"}, {"enum": ["inf", "-inf"]}]}
_expr = {"type": ["number", "string"]}
_point = {"type": "array", "items": _num, "minItems": 1, "maxItems": 2}
_opt_point = {"anyOf": [_point, {"type": "null"}]}

REGION_SCHEMA = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["interval", "box", "ball", "union", "whole"]},
        "a": _bound, "b": _bound,
        "lo": {"type": "array", "items": _bound}, "hi": {"type": "array", "items": _bound},
        "center": _point, "radius": _pos,
        "parts": {"type": "array", "items": {"$ref": "#/$defs/region"}},
    },
    "allOf": [
        {"if": {"properties": {"type": {"const": "interval"}}}, "then": {"required": ["a", "b"]}},
        {"if": {"properties": {"type": {"const": "box"}}}, "then": {"required": ["lo", "hi"]}},
        {"if": {"properties": {"type": {"const": "ball"}}}, "then": {"required": ["center", "radius"]}},
        {"if": {"properties": {"type": {"const": "union"}}}, "then": {"required": ["parts"]}},
    ],
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$defs": {"region": REGION_SCHEMA},
    "type": "object",
    "required": ["schema_version", "domain", "grid"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "domain": {"$ref": "#/$defs/region"},
        "grid": {
            "type": "object", "required": ["h", "halo"], "additionalProperties": False,
            "properties": {"h": _pos, "halo": _pos, "whole_space": {"type": "boolean"}},
        },
        "coefficients": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "a": {"anyOf": [_expr, {"type": "array", "items": {"type": "array", "items": _expr}}]},
                "b": {"anyOf": [_expr, {"type": "array", "items": _expr}]},
                "c": _expr, "f": _expr, "g": _expr,
                "g_far": {"anyOf": [_num, {"type": "array", "items": _num}]},
                "divergence": {"anyOf": [_expr, {"type": "null"}]},
                "uniformly_elliptic": {"type": "boolean"},
            },
        },
        "kernel": {
            "anyOf": [{"type": "null"}, {
                "type": "object", "required": ["kind"], "additionalProperties": False,
                "properties": {
                    "kind": {"enum": ["alpha_stable", "finite"]},
                    "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 2},
                    "scale": _pos,
                    "jumps": {"type": "array", "items": {"type": "array", "items": _num,
                                                         "minItems": 2}},
                },
                "allOf": [
                    {"if": {"properties": {"kind": {"const": "alpha_stable"}}},
                     "then": {"required": ["alpha"]}},
                    {"if": {"properties": {"kind": {"const": "finite"}}},
                     "then": {"required": ["jumps"]}},
                ],
            }],
        },
        "numerics": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "delta": {"anyOf": [_pos, {"type": "null"}]},
                "R": {"anyOf": [_pos, {"type": "null"}]},
                "drift_scheme": {"enum": list(DRIFT_SCHEMES)},
                "c_regime": {"enum": list(C_REGIMES)},
            },
        },
        "escape": {
            "type": "object", "required": ["target"], "additionalProperties": False,
            "properties": {"target": {"$ref": "#/$defs/region"}},
        },
        "fpe": {
            "type": "object", "required": ["T", "dt"], "additionalProperties": False,
            "properties": {"T": _pos, "dt": _pos, "x0": _opt_point,
                           "snapshots": {"type": "array", "items": _pos}},
        },
        "oracle": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "paths": {"type": "integer", "minimum": 100}, "dt": _pos, "horizon": _pos,
                "x0": _opt_point, "seed": {"type": "integer", "minimum": 0},
                "diffusion": {"type": "boolean"},
                "batch_size": {"type": "integer", "minimum": 1},
                "bins": {"type": "integer", "minimum": 1},
            },
        },
        "outputs": {
            "type": "object", "additionalProperties": False,
            "properties": {"probes": {"type": "array", "items": _point}},
        },
    },
}

DEFAULTS = {
    "grid": {"whole_space": True},
    "coefficients": {"a": 0.0, "b": 0.0, "c": 0.0, "f": 0.0, "g": 0.0, "g_far": 0.0,
                     "divergence": None, "uniformly_elliptic": False},
    "kernel": None,
    "numerics": {"delta": None, "R": None, "drift_scheme": "auto", "c_regime": "unsigned"},
    "oracle": {"paths": 100000, "dt": 1e-4, "horizon": 50.0, "seed": 12345, "diffusion": True,
               "batch_size": 1024, "bins": 64},
    "outputs": {"probes": []},
}


class ConfigError(ConfigurationError):
    """Invalid configuration; ``line`` is the 1-based line of the offending entry when known."""

    def __init__(self, message, line: Optional[int] = None, path=()):
        self.line, self.path = line, tuple(path)
        where = ".".join(str(p) for p in path)
        prefix = f"line {line}: " if line else ""
        super().__init__(f"{prefix}{where + ': ' if where else ''}{message}")


def strip_comments(text: str) -> str:
    """Blank out ``//`` and ``/* */`` comments outside strings, keeping line numbers."""
    out, i, n = [], 0, len(text)
    in_str = False
    while i < n:
        ch = text[i]
        if in_str:
            out.append(ch)
            if ch == "\\" and i + 1 < n:
                out.append(text[i + 1])
                i += 2
                continue
            if ch == '"':
                in_str = False
            i += 1
            continue
        if ch == '"':
            in_str = True
            out.append(ch)
            i += 1
        elif text.startswith("//", i):
            j = text.find("\n", i)
            j = n if j < 0 else j
            out.append(" " * (j - i))
            i = j
        elif text.startswith("/*", i):
            j = text.find("*/", i + 2)
            j = n if j < 0 else j + 2
            out.append(re.sub(r"[^\n]", " ", text[i:j]))
            i = j
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def locate_line(text: str, path) -> Optional[int]:
    """Line of the entry at ``path`` (keys and list indices) in the raw text, best effort."""
    pos, found = 0, None
    for key in path:
        if isinstance(key, int):
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(str(key))).search(text, pos)
        if m is None:
            break
        pos, found = m.start(), m.start()
    return None if found is None else text.count("\n", 0, found) + 1


def _merge_defaults(cfg: dict) -> dict:
    out = copy.deepcopy(cfg)
    for key, default in DEFAULTS.items():
        if isinstance(default, dict):
            if out.get(key) is None and key != "kernel":
                out[key] = {}
            if isinstance(out.get(key), dict):
                for k, v in default.items():
                    out[key].setdefault(k, copy.deepcopy(v))
        else:
            out.setdefault(key, default)
    if "fpe" in out:
        out["fpe"].setdefault("x0", None)
        out["fpe"].setdefault("snapshots", [])
    out["oracle"].setdefault("x0", None)
    if out.get("kernel") and out["kernel"]["kind"] == "alpha_stable":
        out["kernel"].setdefault("scale", 1.0)
    return out


def validate(cfg: dict, text: str = "") -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (len(e.absolute_path), e.message))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        path = list(err.absolute_path)
        raise ConfigError(err.message, locate_line(text, path) if text else None, path)


def load_config_text(text: str) -> dict:
    """Parse, validate and resolve a configuration given as text."""
    clean = strip_comments(text)
    try:
        cfg = json.loads(clean)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    if not isinstance(cfg, dict):
        raise ConfigError("the configuration must be a JSON object", 1)
    validate(cfg, clean)
    resolved = _merge_defaults(cfg)
    validate(resolved, clean)
    _semantic_checks(resolved, clean)
    return resolved


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return load_config_text(text)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def domain_dim(cfg: dict) -> int:
    d = cfg["domain"]
    if d["type"] == "interval":
        return 1
    if d["type"] == "box":
        return len(d["lo"])
    if d["type"] == "ball":
        return len(d["center"])
    raise ConfigError("domain must be an interval, box or ball", path=("domain", "type"))


def _semantic_checks(cfg, text):
    dim = domain_dim(cfg)
    if dim > 2:
        raise ConfigError("only d <= 2 is supported", locate_line(text, ["domain"]), ["domain"])
    k = cfg.get("kernel")
    if k and k["kind"] == "finite":
        for i, row in enumerate(k["jumps"]):
            if len(row) != dim + 1:
                raise ConfigError(f"each jump row needs {dim} coordinates and a mass",
                                  locate_line(text, ["kernel", "jumps"]), ["kernel", "jumps", i])


# ---------------------------------------------------------------------------
# building objects
# ---------------------------------------------------------------------------

def _field(expr, dim, grid):
    return compile_expression(expr, dim)(grid.coordinates())


def build_domain(cfg: dict):
    d, g = cfg["domain"], cfg["grid"]
    ws = g["whole_space"]
    if d["type"] == "interval":
        return build_interval_domain(float(d["a"]), float(d["b"]), g["h"], g["halo"], ws)
    if d["type"] == "box":
        return build_box_domain(d["lo"], d["hi"], g["h"], g["halo"], ws)
    return build_ball_domain(d["center"], d["radius"], g["h"], g["halo"], ws)


def build_kernel(cfg: dict, dim: int):
    k = cfg.get("kernel")
    if not k:
        return None
    if k["kind"] == "alpha_stable":
        return make_alpha_stable(k["alpha"], dim, k.get("scale", 1.0))
    rows = np.asarray(k["jumps"], dtype=float)
    return finite_measure(rows[:, :-1], rows[:, -1])


def build_coefficients(cfg: dict, dom) -> CoefficientFields:
    co = cfg["coefficients"]
    grid = dom.grid
    d = grid.dim
    n = grid.n_nodes
    a = co["a"]
    if isinstance(a, list):
        if len(a) != d or any(len(r) != d for r in a):
            raise ConfigError(f"a must be a {d}x{d} matrix", path=("coefficients", "a"))
        a_f = np.stack([np.stack([_field(a[i][j], d, grid) for j in range(d)], axis=1)
                        for i in range(d)], axis=1)
    else:
        a_f = _field(a, d, grid)
    b = co["b"]
    if isinstance(b, list):
        if len(b) != d:
            raise ConfigError(f"b must have {d} components", path=("coefficients", "b"))
        b_f = np.stack([_field(bj, d, grid) for bj in b], axis=1)
    elif d == 1:
        b_f = _field(b, d, grid)[:, None]
    else:
        if b not in (0, 0.0):
            raise ConfigError("in 2D give b as a list of components", path=("coefficients", "b"))
        b_f = np.zeros((n, d))
    div = None if co["divergence"] is None else _field(co["divergence"], d, grid)
    gf = co["g_far"]
    return CoefficientFields.build(dom, a=a_f, b=b_f, c=_field(co["c"], d, grid),
                                   f=_field(co["f"], d, grid), g=_field(co["g"], d, grid),
                                   g_far=gf, divergence=div,
                                   uniformly_elliptic=co["uniformly_elliptic"])


def build_problem(cfg: dict) -> ProblemSpec:
    grid, dom = build_domain(cfg)
    num = cfg["numerics"]
    return ProblemSpec(dom, build_coefficients(cfg, dom), build_kernel(cfg, grid.dim),
                       num["delta"], num["R"], num["c_regime"], num["drift_scheme"])


def target_region(cfg: dict):
    if "escape" not in cfg:
        raise ConfigError("an escape run needs an 'escape.target' region", path=("escape",))
    return region_from_dict(cfg["escape"]["target"])


def drift_callable(cfg: dict):
    """The drift as a function of positions (for the Monte Carlo oracle), or a constant."""
    co = cfg["coefficients"]
    d = domain_dim(cfg)
    b = co["b"] if isinstance(co["b"], list) else [co["b"]] * d
    if all(isinstance(v, (int, float)) for v in b):
        vec = np.asarray(b, dtype=float)
        return vec if np.any(vec) else None
    fns = [compile_expression(v, d) for v in b]
    return lambda x: np.stack([f(x) for f in fns], axis=1)


@dataclass
class OracleSettings:
    paths: int
    dt: float
    horizon: float
    seed: int
    diffusion: bool
    batch_size: int
    bins: int
    x0: Optional[list]


def oracle_settings(cfg: dict) -> OracleSettings:
    o = cfg["oracle"]
    return OracleSettings(o["paths"], o["dt"], o["horizon"], o["seed"], o["diffusion"],
                          o["batch_size"], o["bins"], o["x0"])
