"""
Augmentation recipes: JSON lists of environmental and synthetic specs.

A recipe file looks like::

    {
      "seed": 7,
      "env_grid": true,
      "allow_perception_changing": false,
      "specs": [
        {"type": "env", "category": "Nat", "position": "Co", "snr_db": 10, "length": "Co"},
        {"type": "synth", "kind": "SpeedSeg", "params": {"rate": 1.25, "fraction": 0.2}}
      ]
    }

``env_grid`` adds the 12 standard environmental variants per utterance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Union

from .env import EnvSpec, enumerate_env_grid
from .errors import ConfigError
from .seeding import derive_seed
from .synth.transforms import SynthError, SynthSpec

AugmentationSpec = Union[EnvSpec, SynthSpec]


def spec_from_dict(d: Mapping[str, Any], field_path: str = "spec") -> AugmentationSpec:
    if not isinstance(d, Mapping):
        raise ConfigError(field_path, "must be an object")
    kind = d.get("type")
    try:
        if kind == "env":
            return EnvSpec(
                category=d.get("category"),
                position=d.get("position", "Co"),
                snr_db=None if d.get("snr_db") is None else float(d["snr_db"]),
                length=d.get("length", "Co"),
            )
        if kind == "synth":
            return SynthSpec(
                kind=d.get("kind"),
                params=dict(d.get("params", {})),
                override=bool(d.get("override", False)),
            )
    except (ValueError, TypeError, SynthError) as exc:
        raise ConfigError(field_path, str(exc)) from exc
    raise ConfigError(f"{field_path}.type", f"must be 'env' or 'synth', got {kind!r}")


def spec_to_dict(spec: AugmentationSpec | Mapping) -> dict:
    return dict(spec) if isinstance(spec, Mapping) else spec.to_dict()


def spec_tag(spec: AugmentationSpec) -> str:
    return spec.tag


@dataclass
class Recipe:
    specs: list[dict] = field(default_factory=list)
    seed: int = 0
    env_grid: bool = False
    extended_grid: bool = False
    allow_perception_changing: bool = False
    out_dir: str | None = None

    def parsed_specs(self) -> list[AugmentationSpec]:
        return [spec_from_dict(d, f"specs[{i}]") for i, d in enumerate(self.specs)]

    def expand(self, utt_id: str) -> list[AugmentationSpec]:
        """Concrete, seeded specs for one utterance, in a stable order."""
        out: list[AugmentationSpec] = []
        if self.env_grid:
            out.extend(enumerate_env_grid(utt_id, self.seed, extended=self.extended_grid))
        for i, spec in enumerate(self.parsed_specs()):
            out.append(replace(spec, seed=derive_seed(self.seed, utt_id, i, spec.tag)))
        return out

    def all_spec_dicts(self) -> list[dict]:
        """Spec dicts including the environmental grid, for linting."""
        dicts = []
        if self.env_grid:
            dicts.extend(s.to_dict() for s in enumerate_env_grid("_", self.seed, extended=self.extended_grid))
        dicts.extend(self.specs)
        return dicts


def recipe_from_dict(d: Mapping[str, Any]) -> Recipe:
    if not isinstance(d, Mapping):
        raise ConfigError("recipe", "must be a JSON object")
    specs = d.get("specs", [])
    if not isinstance(specs, list):
        raise ConfigError("specs", "must be a list")
    try:
        seed = int(d.get("seed", 0))
    except (TypeError, ValueError):
        raise ConfigError("seed", "must be an integer") from None
    return Recipe(
        specs=list(specs),
        seed=seed,
        env_grid=bool(d.get("env_grid", False)),
        extended_grid=bool(d.get("extended_grid", False)),
        allow_perception_changing=bool(d.get("allow_perception_changing", False)),
        out_dir=d.get("out_dir"),
    )


def load_recipe(path: str | Path) -> Recipe:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("recipe", f"invalid JSON: {exc}") from exc
    return recipe_from_dict(payload)
