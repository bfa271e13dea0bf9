"""Scenario files: TOML text validated against a JSON schema, then turned into solver objects.

A scenario describes one experiment (``kind``) and optional ``[[variants]]`` whose tables
are deep-merged over the base. Builders raise :class:`ConfigError` with a JSON-pointer path
into the scenario, e.g. ``/drift_sigma/k``.
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .. import cost as costs
from .. import dynamics as dyn
from ..analysis import StabilityGauge
from ..errors import ConfigError, FpkError
from ..fpk import SdeConfig
from ..measures import ParticleCloud, read_cloud
from ..rng import INIT, philox

KINDS = ("simulate", "distance", "verify-bound", "fixed-point", "stability")

_NUM = {"type": "number"}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}
_MAT = {"type": "array", "items": _VEC, "minItems": 1}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["name", "kind", "cost", "seeds"],
    "properties": {
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "kind": {"enum": list(KINDS)},
        "description": {"type": "string"},
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "seeds": {
            "oneOf": [
                {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                {
                    "type": "object",
                    "required": ["count"],
                    "properties": {
                        "start": {"type": "integer", "minimum": 0},
                        "count": {"type": "integer", "minimum": 1},
                    },
                    "additionalProperties": False,
                },
            ]
        },
        "cost": {"$ref": "#/$defs/cost"},
        "diffusion": {"$ref": "#/$defs/diffusion"},
        "drift": {"$ref": "#/$defs/drift"},
        "drift_mu": {"$ref": "#/$defs/drift"},
        "drift_sigma": {"$ref": "#/$defs/drift"},
        "init": {"$ref": "#/$defs/init"},
        "init_mu": {"$ref": "#/$defs/init"},
        "init_sigma": {"$ref": "#/$defs/init"},
        "solver": {
            "type": "object",
            "properties": {
                "steps_per_unit_time": {"type": "integer", "minimum": 1},
                "scheme": {"enum": ["explicit_em", "split_step_implicit_drift"]},
                "particles": {"type": "integer", "minimum": 1},
                "time_nodes": {"type": "integer", "minimum": 2},
            },
            "additionalProperties": False,
        },
        "distance": {
            "type": "object",
            "properties": {"expected": _NUM, "tolerance": {"type": "number", "minimum": 0}},
            "additionalProperties": False,
        },
        "bound": {
            "type": "object",
            "properties": {
                "lambda": _NUM,
                "ot_particles": {"type": "integer", "minimum": 2},
                "monotone": {
                    "type": "object",
                    "required": ["order"],
                    "properties": {
                        "order": {"type": "array", "items": {"type": "string"}, "minItems": 2},
                        "series": {"enum": ["lhs"]},
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "fixed_point": {
            "type": "object",
            "properties": {
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
                "min_horizon": {"type": "number", "exclusiveMinimum": 0},
                "ot_particles": {"type": "integer", "minimum": 2},
                "uniqueness": {"type": "boolean"},
                "class_bound": {"type": "array", "items": _NUM, "minItems": 1, "maxItems": 2},
            },
            "additionalProperties": False,
        },
        "stability": {
            "type": "object",
            "properties": {
                "gauge": {
                    "type": "object",
                    "required": ["kind"],
                    "properties": {"kind": {"enum": ["identity", "power"]}, "exponent": {"type": "number", "exclusiveMinimum": 0}},
                    "additionalProperties": False,
                },
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
                "ot_particles": {"type": "integer", "minimum": 2},
            },
            "additionalProperties": False,
        },
        "variants": {
            "type": "array",
            "items": {"type": "object", "required": ["name"], "properties": {"name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"}}},
        },
    },
    "additionalProperties": False,
    "$defs": {
        "cost": {
            "type": "object",
            "required": ["family"],
            "properties": {
                "family": {"enum": ["capped_power", "capped_concave"]},
                "p": {"type": "number", "minimum": 1},
                "table": {"type": "array", "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}, "minItems": 2},
            },
            "additionalProperties": False,
        },
        "diffusion": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["constant", "identity"]},
                "matrix": _MAT,
                "dim": {"type": "integer", "minimum": 1, "maximum": 3},
                "scale": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "drift": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["linear", "polynomial", "approximated", "interaction", "convolution_power", "composite"]},
                "lambda": _NUM,
                "matrix": _MAT,
                "offset": _VEC,
                "coefficients": _VEC,
                "base": {"$ref": "#/$defs/drift"},
                "k": {"type": "number", "exclusiveMinimum": 0},
                "epsilon": {"type": "number", "minimum": 0},
                "kernel": {"$ref": "#/$defs/kernel"},
                "alpha": {"type": "number", "exclusiveMinimum": 0},
                "parts": {"type": "array", "items": {"$ref": "#/$defs/drift"}, "minItems": 1},
            },
            "additionalProperties": False,
        },
        "kernel": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["linear_attraction", "bounded_attraction", "separable"]},
                "strength": {"type": "number", "minimum": 0},
                "g": {"$ref": "#/$defs/drift"},
                "weight": {
                    "type": "object",
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["lorentzian", "constant"]},
                        "scale": {"type": "number", "exclusiveMinimum": 0},
                        "value": {"type": "number", "minimum": 0},
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "init": {
            "type": "object",
            "required": ["family"],
            "properties": {
                "family": {"enum": ["gaussian", "points", "csv", "dirac"]},
                "mean": _VEC,
                "std": {"type": "number", "exclusiveMinimum": 0},
                "cov": _MAT,
                "samples": {"type": "integer", "minimum": 1},
                "sample_seed": {"type": "integer", "minimum": 0},
                "points": _MAT,
                "weights": _VEC,
                "path": {"type": "string"},
                "point": _VEC,
            },
            "additionalProperties": False,
        },
    },
}

_REQUIRED_BY_KIND = {
    "simulate": ("horizon", "diffusion", "drift", "init"),
    "distance": ("init_mu", "init_sigma"),
    "verify-bound": ("horizon", "diffusion", "drift_mu", "drift_sigma", "init_mu", "init_sigma"),
    "fixed-point": ("horizon", "diffusion", "drift", "init"),
    "stability": ("horizon", "diffusion", "drift", "init_mu", "init_sigma"),
}


def _pointer(parts) -> str:
    return "/" + "/".join(str(p) for p in parts)


def validate(data: dict) -> None:
    """Check ``data`` against :data:`SCHEMA` and the per-kind required blocks."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = errors[0]
        path = list(err.absolute_path)
        if err.validator == "required":
            missing = [k for k in err.validator_value if k not in err.instance]
            raise ConfigError(f"required block {missing[0]!r} is missing", _pointer(path + [missing[0]]))
        raise ConfigError(err.message, _pointer(path))
    for key in _REQUIRED_BY_KIND[data["kind"]]:
        if key not in data:
            raise ConfigError(f"required block {key!r} is missing for kind {data['kind']!r}", _pointer([key]))


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass(frozen=True)
class Scenario:
    """A validated scenario. ``data`` is the parsed TOML with relative paths resolved."""

    data: dict
    source: str | None = None

    def __post_init__(self):
        validate(self.data)
        for v in self.variants:
            validate(self.variant_data(v))
        for name, block in self._inits():
            if block.get("family") == "csv" and not Path(block["path"]).is_file():
                raise ConfigError(f"file {block['path']!r} does not exist", _pointer([name, "path"]))

    def _inits(self):
        for d in [self.data] + [self.variant_data(v) for v in self.variants]:
            for name in ("init", "init_mu", "init_sigma"):
                if name in d:
                    yield name, d[name]

    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def kind(self) -> str:
        return self.data["kind"]

    @property
    def seeds(self) -> list[int]:
        s = self.data["seeds"]
        if isinstance(s, list):
            return [int(x) for x in s]
        return list(range(s.get("start", 0), s.get("start", 0) + s["count"]))

    @property
    def variants(self) -> list[str]:
        return [v["name"] for v in self.data.get("variants", [])]

    def variant_data(self, name: str | None) -> dict:
        base = {k: v for k, v in self.data.items() if k != "variants"}
        if name is None:
            return base
        for v in self.data.get("variants", []):
            if v["name"] == name:
                return deep_merge(base, {k: x for k, x in v.items() if k != "name"})
        raise ConfigError(f"no variant named {name!r}", "/variants")

    def with_seeds(self, seeds) -> Scenario:
        return Scenario(dict(self.data, seeds=[int(s) for s in seeds]), self.source)

    def canonical_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def to_toml(self) -> str:
        return tomli_w.dumps(self.data)


def _resolve_paths(data: dict, base: Path) -> dict:
    data = copy.deepcopy(data)

    def fix(block):
        if isinstance(block, dict) and block.get("family") == "csv" and "path" in block:
            p = Path(block["path"])
            block["path"] = str(p if p.is_absolute() else (base / p).resolve())

    for d in [data] + data.get("variants", []):
        for key in ("init", "init_mu", "init_sigma"):
            fix(d.get(key))
    return data


def parse_scenario(text: str, base_dir=".", source: str | None = None) -> Scenario:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}", "/") from exc
    return Scenario(_resolve_paths(data, Path(base_dir)), source)


def bundled_names() -> list[str]:
    folder = resources.files("fpklab.harness") / "scenarios"
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".toml"))


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("fpklab.harness") / "scenarios" / f"{name}.toml"))


def load_scenario(ref) -> Scenario:
    """Load a scenario from a file path or by the name of a bundled scenario."""
    path = Path(ref)
    if not path.is_file():
        if str(ref) in bundled_names():
            path = bundled_path(str(ref))
        else:
            raise ConfigError(f"no scenario file or bundled scenario named {str(ref)!r}", "/")
    return parse_scenario(path.read_text(encoding="utf-8"), path.parent, str(path))


# ---------------------------------------------------------------- builders


def _wrap(path, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except (FpkError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc), path) from exc


def build_cost(block: dict, path: str = "/cost") -> costs.CostFunction:
    if block["family"] == "capped_power":
        if "p" not in block:
            raise ConfigError("capped_power needs 'p'", path + "/p")
        return _wrap(path, costs.capped_power, float(block["p"]))
    if "table" not in block:
        raise ConfigError("capped_concave needs 'table'", path + "/table")
    return _wrap(path, costs.capped_concave, table=np.asarray(block["table"], dtype=float))


def build_diffusion(block: dict, path: str = "/diffusion") -> dyn.DiffusionSpec:
    if block["kind"] == "identity":
        return _wrap(path, dyn.DiffusionSpec.identity, int(block.get("dim", 1)), float(block.get("scale", 1.0)))
    if "matrix" not in block:
        raise ConfigError("constant diffusion needs 'matrix'", path + "/matrix")
    return _wrap(path, dyn.DiffusionSpec.constant, np.asarray(block["matrix"], dtype=float))


def _polynomial(coefficients):
    c = np.asarray(coefficients, dtype=float)

    def fn(x, t):
        return np.polynomial.polynomial.polyval(x, c)

    return fn


def _weight(block: dict, path: str):
    if block["kind"] == "constant":
        value = float(block.get("value", 1.0))
        return lambda y: np.full(y.shape[:-1], value)
    scale = float(block.get("scale", 1.0))
    return lambda y: 1.0 / (1.0 + np.sum(y * y, axis=-1) / scale**2)


def build_kernel(block: dict, dim: int, path: str):
    kind = block["kind"]
    s = float(block.get("strength", 1.0))
    if kind == "linear_attraction":
        return dyn.linear_attraction(s)
    if kind == "bounded_attraction":
        return dyn.bounded_attraction(s)
    if "g" not in block or "weight" not in block:
        raise ConfigError("separable kernel needs 'g' and 'weight'", path)
    g = build_drift(block["g"], dim, path + "/g")
    if g.measure_dependent:
        raise ConfigError("separable 'g' must not depend on the measure", path + "/g")
    w = _weight(block["weight"], path + "/weight")

    def gfun(x):
        shape = x.shape
        return g.func(x.reshape(-1, shape[-1]), 0.0, None).reshape(shape)

    return dyn.separable_kernel(gfun, w)


def build_drift(block: dict, dim: int, path: str = "/drift") -> dyn.DriftSpec:
    """Drift from a config table; ``lambda`` is the declared dissipativity constant."""
    kind = block["kind"]
    lam = block.get("lambda")
    if kind == "linear":
        if "matrix" not in block:
            raise ConfigError("linear drift needs 'matrix'", path + "/matrix")
        A = np.asarray(block["matrix"], dtype=float)
        if A.shape != (dim, dim):
            raise ConfigError(f"matrix must be {dim}x{dim}", path + "/matrix")
        off = block.get("offset")
        if off is not None and len(off) != dim:
            raise ConfigError(f"offset must have length {dim}", path + "/offset")
        return _wrap(path, dyn.linear_drift, A, off, lam)
    if kind == "polynomial":
        if "coefficients" not in block:
            raise ConfigError("polynomial drift needs 'coefficients'", path + "/coefficients")
        if lam is None:
            raise ConfigError("polynomial drift needs a declared 'lambda'", path + "/lambda")
        return dyn.frozen_drift(_polynomial(block["coefficients"]), float(lam), dim, name="polynomial")
    if kind == "approximated":
        if "base" not in block or "k" not in block:
            raise ConfigError("approximated drift needs 'base' and 'k'", path)
        base = build_drift(block["base"], dim, path + "/base")
        approx = _wrap(path, dyn.approximate_drift, base, float(block["k"]), float(block.get("epsilon", 0.0)), check=False)
        return approx.as_drift()
    if kind == "interaction":
        if "kernel" not in block:
            raise ConfigError("interaction drift needs 'kernel'", path + "/kernel")
        k = build_kernel(block["kernel"], dim, path + "/kernel")
        if lam is None and getattr(k, "lam", None) is None:
            raise ConfigError("this kernel needs a declared 'lambda'", path + "/lambda")
        return _wrap(path, dyn.interaction_drift, k, None, lam, dim, {"kernel": block["kernel"]["kind"]})
    if kind == "convolution_power":
        if "alpha" not in block:
            raise ConfigError("convolution_power drift needs 'alpha'", path + "/alpha")
        return _wrap(path, dyn.convolution_power_drift, float(block["alpha"]), float(lam or 0.0), dim)
    parts = block.get("parts")
    if not parts:
        raise ConfigError("composite drift needs 'parts'", path + "/parts")
    built = [build_drift(p, dim, f"{path}/parts/{i}") for i, p in enumerate(parts)]
    return _wrap(path, dyn.composite_drift, built, lam)


def build_init(block: dict, dim: int, seed: int, samples: int, path: str = "/init") -> ParticleCloud:
    """Initial cloud. Gaussian families draw from the seed's init stream, so two Gaussian
    inits of one scenario share their standard normal draws. ``sample_seed`` pins the draw
    so that every run seed starts from the same cloud."""
    fam = block["family"]
    if fam == "gaussian":
        mean = np.asarray(block.get("mean", [0.0] * dim), dtype=float)
        if mean.shape != (dim,):
            raise ConfigError(f"mean must have length {dim}", path + "/mean")
        if "cov" in block:
            cov = np.asarray(block["cov"], dtype=float)
            try:
                L = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError as exc:
                raise ConfigError("cov is not positive definite", path + "/cov") from exc
        else:
            L = float(block.get("std", 1.0)) * np.eye(dim)
        n = int(block.get("samples", samples))
        z = philox(int(block.get("sample_seed", seed)), INIT).standard_normal((n, dim))
        return ParticleCloud.uniform(mean + z @ L.T)
    if fam == "points":
        if "points" not in block:
            raise ConfigError("points family needs 'points'", path + "/points")
        pts = np.asarray(block["points"], dtype=float)
        w = block.get("weights")
        if w is None:
            return _wrap(path, ParticleCloud.uniform, pts)
        return _wrap(path, ParticleCloud, pts, np.asarray(w, dtype=float))
    if fam == "dirac":
        return _wrap(path, ParticleCloud.dirac, np.asarray(block.get("point", [0.0] * dim), dtype=float))
    return _wrap(path, read_cloud, block["path"])


def build_solver(data: dict, seed: int) -> SdeConfig:
    s = data.get("solver", {})
    return _wrap("/solver", SdeConfig, seed=seed, **s)


def build_gauge(block: dict | None) -> StabilityGauge:
    block = block or {"kind": "identity"}
    if block["kind"] == "identity":
        return StabilityGauge.identity()
    beta = float(block.get("exponent", 1.0))
    return StabilityGauge(lambda u, b=beta: u**b, f"power{beta:g}")


def dimension(data: dict) -> int:
    d = data.get("diffusion")
    if d is None:
        for key in ("init_mu", "init"):
            blk = data.get(key, {})
            for field_ in ("points", "mean", "point"):
                if field_ in blk:
                    v = blk[field_]
                    return len(v[0]) if field_ == "points" else len(v)
        return 1
    return int(d.get("dim", 1)) if d["kind"] == "identity" else len(d["matrix"])
