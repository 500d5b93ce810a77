"""Run configuration: schema, validation, experiment registry.

A run is described by a JSON config file and/or command-line flags (flags
win).  Every parameter is validated against the target experiment's schema
and preconditions before any compute starts; validation failures exit with
code 2, runtime failures with 3.  The seed is mandatory: no wall-clock
seeding, every run is replayable.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigInvalid
from .rates import RateFunction, identity_rate, load_rate_function

REQUIRED = object()


@dataclass(frozen=True)
class Param:
    name: str
    kind: str              # int | float | str | list[float] | list[int]
    default: object = REQUIRED
    help: str = ""

    def coerce(self, value):
        try:
            if self.kind == "int":
                if isinstance(value, float) and not value.is_integer():
                    raise ValueError
                return int(value)
            if self.kind == "float":
                return float(value)
            if self.kind == "str":
                return str(value)
            if self.kind == "list[float]":
                if isinstance(value, str):
                    value = [v for v in value.replace(",", " ").split() if v]
                return [float(v) for v in value]
            if self.kind == "list[int]":
                if isinstance(value, str):
                    value = [v for v in value.replace(",", " ").split() if v]
                out = []
                for v in value:
                    f = float(v)
                    if not f.is_integer():
                        raise ValueError
                    out.append(int(f))
                return out
        except (TypeError, ValueError):
            raise ConfigInvalid(
                f"parameter {self.name!r}: cannot read {value!r} as {self.kind}"
            ) from None
        raise ConfigInvalid(f"parameter {self.name!r}: unknown kind {self.kind}")


RATE_PARAMS = (
    Param("rate_path", "str", default="",
          help="JSON rate-function file; empty selects g(k)=k"),
)

_REGISTRY: dict = {}


def register(name: str, params, runner, description: str, validate=None):
    _REGISTRY[name] = {
        "params": tuple(params) + RATE_PARAMS,
        "runner": runner,
        "description": description,
        "validate": validate,
    }


def registry() -> dict:
    # populated lazily so config import does not pull the heavy modules
    if not _REGISTRY:
        from . import cli_experiments  # noqa: F401  (registers on import)
    return _REGISTRY


@dataclass
class RunConfig:
    kind: str
    seed: int
    replicas: int
    workers: int
    out_dir: str
    out_format: str
    params: dict = field(default_factory=dict)

    def rate(self) -> RateFunction:
        path = self.params.get("rate_path") or ""
        if path:
            return load_rate_function(path)
        return identity_rate(200)

    def digest(self) -> str:
        """Provenance hash of everything that determines the results.

        The worker count and output location never change results, so they
        stay out of the digest (and out of the output files).
        """
        doc = {
            "kind": self.kind,
            "seed": self.seed,
            "replicas": self.replicas,
            "params": {k: self.params[k] for k in sorted(self.params)},
        }
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_config(kind: str, file_doc: dict, overrides: dict) -> RunConfig:
    reg = registry()
    if kind not in reg:
        raise ConfigInvalid(
            f"unknown experiment {kind!r}; valid kinds: {', '.join(sorted(reg))}"
        )
    spec = reg[kind]
    merged = dict(file_doc)
    merged.update({k: v for k, v in overrides.items() if v is not None})

    def take(name, kind_, default):
        if name in merged:
            return Param(name, kind_).coerce(merged.pop(name))
        if default is REQUIRED:
            raise ConfigInvalid(f"missing required field {name!r}")
        return default

    seed = take("seed", "int", REQUIRED)
    if not 0 <= seed < 2 ** 64:
        raise ConfigInvalid("seed must be an unsigned 64-bit integer")
    replicas = take("replicas", "int", 1)
    if replicas < 1:
        raise ConfigInvalid("replicas must be >= 1")
    workers = take("workers", "int", 1)
    if workers < 1:
        raise ConfigInvalid("workers must be >= 1")
    out_dir = take("out", "str", ".")
    out_format = take("format", "str", "csv")
    if out_format not in ("csv", "json"):
        raise ConfigInvalid("format must be csv or json")

    params = {}
    for p in spec["params"]:
        if p.name in merged:
            params[p.name] = p.coerce(merged.pop(p.name))
        elif p.default is REQUIRED:
            raise ConfigInvalid(f"missing required parameter {p.name!r}")
        else:
            params[p.name] = p.default
    if merged:
        raise ConfigInvalid(f"unknown fields: {', '.join(sorted(merged))}")
    cfg = RunConfig(kind=kind, seed=seed, replicas=replicas, workers=workers,
                    out_dir=out_dir, out_format=out_format, params=params)
    if spec["validate"] is not None:
        spec["validate"](cfg)
    return cfg


def schema_dict() -> dict:
    reg = registry()
    return {
        name: {
            "description": spec["description"],
            "parameters": {
                p.name: {
                    "kind": p.kind,
                    "required": p.default is REQUIRED,
                    **({} if p.default is REQUIRED else {"default": p.default}),
                    "help": p.help,
                }
                for p in spec["params"]
            },
        }
        for name, spec in sorted(reg.items())
    }
