"""Experiment configuration: JSON files validated against a shipped schema."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Union

import jsonschema

from .driving import BasePoint, make_driving
from .errors import ConfigError
from .maps import FamilySpec, GrowthProfile
from .transfer import GridGeometry, PotentialConfig


def schema() -> dict:
    return json.loads(resources.files("randtrans").joinpath("schema/experiment.schema.json").read_text())


def default_dict() -> dict:
    return json.loads(resources.files("randtrans").joinpath("configs/default.json").read_text())


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


@dataclass
class ExperimentConfig:
    """Validated configuration with the domain objects built from it."""

    raw: dict

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def out(self) -> str:
        return self.raw.get("out", "randtrans-out")

    def block(self, name: str) -> dict:
        return self.raw.get(name, {})

    @property
    def system(self):
        d = dict(self.block("driving"))
        kind = d.pop("kind")
        d.pop("anchor", None)
        if "box" in d:
            d["box"] = tuple(d["box"])
        if "values" in d:
            d["values"] = tuple(d["values"])
        return make_driving(kind, **d)

    @property
    def base_point(self) -> BasePoint:
        return BasePoint(self.block("driving").get("anchor", 0.3))

    @property
    def family(self) -> FamilySpec:
        d = dict(self.block("family"))
        growth = GrowthProfile(**d.pop("growth", {}))
        return FamilySpec(growth=growth, **d)

    @property
    def potential(self) -> PotentialConfig:
        return PotentialConfig.for_family(self.family, **self.block("potential"))

    @property
    def geometry(self) -> GridGeometry:
        g = {k: v for k, v in self.block("geometry").items() if k in ("r_max", "h", "depth0", "shrink")}
        return GridGeometry(**g)

    @property
    def r0(self) -> float:
        return float(self.block("geometry").get("r0", 10.0))

    @property
    def chain_length(self) -> int:
        return int(self.block("geometry").get("chain_length", 140))

    def to_json(self) -> str:
        # the output location is not part of the experiment, so reruns elsewhere hash the same
        body = {k: v for k, v in self.raw.items() if k != "out"}
        return json.dumps(body, sort_keys=True, indent=2)


def load_config(source: Union[str, Path, dict, None] = None, overrides: Any = None) -> ExperimentConfig:
    """Read, fill missing entries from the defaults, validate and cross-check.

    Raises :class:`ConfigError` for schema violations and for violated
    cross-constraints of the potential.
    """
    if source is None:
        user = {}
    elif isinstance(source, dict):
        user = source
    else:
        try:
            user = json.loads(Path(source).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    raw = _merge(default_dict(), user)
    if overrides:
        raw = _merge(raw, overrides)
    try:
        jsonschema.validate(raw, schema())
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"schema violation at {list(exc.absolute_path)}: {exc.message}") from exc
    cfg = ExperimentConfig(raw)
    # building the domain objects enforces the cross-constraints
    cfg.system, cfg.family, cfg.potential, cfg.geometry
    return cfg
