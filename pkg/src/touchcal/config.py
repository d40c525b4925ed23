"""Declarative experiment configuration (YAML) with dotted-path overrides."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import yaml

from .convergence import CriteriaConfig
from .filter import FilterParams
from .geometry import EnvironmentModel, environment_from_config
from .kinematics import KinematicChain, chain_from_config
from .world import NoiseConfig


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("touchcal") / "data" / f"{name}.yaml"))


def load_yaml(source) -> dict:
    """Read a config from a path, a packaged fixture name or a mapping."""
    if isinstance(source, dict):
        return copy.deepcopy(source)
    path = Path(source)
    if not path.exists():
        path = fixture_path(str(source))
    with open(path) as fh:
        data = yaml.safe_load(fh)
    data.setdefault("_base_dir", str(path.parent))
    return data


def set_dotted(cfg: dict, key: str, value) -> dict:
    node = cfg
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return cfg


def get_dotted(cfg: dict, key: str, default=None):
    node = cfg
    for p in key.split("."):
        if not isinstance(node, dict) or p not in node:
            return default
        node = node[p]
    return node


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``path.to.leaf=value`` strings; values are parsed as YAML."""
    cfg = copy.deepcopy(cfg)
    for item in overrides or ():
        key, _, raw = item.partition("=")
        if not _:
            raise ValueError(f"override {item!r} is not key=value")
        set_dotted(cfg, key.strip(), yaml.safe_load(raw))
    return cfg


@dataclass
class ExperimentConfig:
    raw: dict
    env: EnvironmentModel
    chain: KinematicChain
    ee_model: EnvironmentModel
    filter: FilterParams
    criteria: CriteriaConfig
    noise: NoiseConfig
    candidates: int = 1000
    seeds: list = field(default_factory=lambda: [0])
    max_iterations: int = 80
    sweep: Optional[dict] = None
    workers: int = 1

    @property
    def name(self) -> str:
        return self.raw.get("name", "experiment")

    def get(self, key: str, default=None) -> Any:
        return get_dotted(self.raw, key, default)

    def with_overrides(self, values: dict) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        for k, v in values.items():
            set_dotted(raw, k, v)
        return build_config(raw)

    def fingerprint(self) -> str:
        raw = {k: v for k, v in self.raw.items() if k not in ("_base_dir", "seeds", "sweep", "workers")}
        return json.dumps(raw, sort_keys=True)


def build_config(raw: dict) -> ExperimentConfig:
    raw = copy.deepcopy(raw)
    base = raw.get("_base_dir")
    chain_cfg = raw.get("chain", "franka")
    if isinstance(chain_cfg, str):
        chain_cfg = load_yaml(chain_cfg)
    max_it = int(raw.get("max_iterations", 80))
    seeds = list(raw.get("seeds", [0]))
    if max_it < 1:
        raise ValueError("max_iterations must be at least 1")
    if not seeds:
        raise ValueError("seeds must not be empty")
    return ExperimentConfig(
        raw=raw,
        env=environment_from_config(raw["env"], base),
        chain=chain_from_config(chain_cfg),
        ee_model=environment_from_config(raw["ee_model"], base),
        filter=FilterParams(**(raw.get("filter") or {})),
        criteria=CriteriaConfig(**(raw.get("criteria") or {})),
        noise=NoiseConfig(**(get_dotted(raw, "world.noise") or {})),
        candidates=int(get_dotted(raw, "action.candidates", 1000)),
        seeds=seeds,
        max_iterations=max_it,
        sweep=raw.get("sweep"),
        workers=int(raw.get("workers", 1)),
    )


def load_config(source="box_table", overrides=None) -> ExperimentConfig:
    return build_config(apply_overrides(load_yaml(source), overrides))
