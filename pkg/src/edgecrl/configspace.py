"""Discrete configuration space and the edge inference cost model.

A configuration is a (resolution scale, QP, model version) triple. Configurations
are enumerated lexicographically by (model, resolution, qp), each dimension in its
declared order, which fixes the flat action index used by the policy networks.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator

import numpy as np

from .errors import ConfigurationError

DEFAULT_RESOLUTIONS = (1.0, 0.75, 0.5)
DEFAULT_QPS = (20, 22, 24, 26, 28, 30)
DEFAULT_MODEL_VERSIONS = (0, 1, 2, 3, 4)
# remaining-weight fractions of the pruned models (sparsity 0, .5, .75, .875, .9375)
DEFAULT_MODEL_BASE_COST = {0: 1.0, 1: 0.5, 2: 0.25, 3: 0.125, 4: 0.0625}


@dataclass(frozen=True, order=True)
class Configuration:
    resolution_scale: float
    qp: int
    model_version: int

    @property
    def setting(self) -> tuple[float, int]:
        """The compression setting (resolution, qp); the part that determines bitrate."""
        return (self.resolution_scale, self.qp)

    def __str__(self):
        return f"r={self.resolution_scale:g},qp={self.qp},v={self.model_version}"


@dataclass(frozen=True)
class ConfigurationSpace:
    resolutions: tuple[float, ...] = DEFAULT_RESOLUTIONS
    qps: tuple[int, ...] = DEFAULT_QPS
    model_versions: tuple[int, ...] = DEFAULT_MODEL_VERSIONS

    def __post_init__(self):
        for name in ("resolutions", "qps", "model_versions"):
            values = tuple(getattr(self, name))
            if not values:
                raise ConfigurationError(f"configuration space has an empty {name} set")
            if len(set(values)) != len(values):
                raise ConfigurationError(f"duplicate entries in {name}: {values}")
            object.__setattr__(self, name, values)
        if any(not (0.0 < r <= 1.0) for r in self.resolutions):
            raise ConfigurationError(f"resolution scales must lie in (0, 1]: {self.resolutions}")

    @property
    def shape(self) -> tuple[int, int, int]:
        """(models, resolutions, qps): the array layout of accuracy tables."""
        return (len(self.model_versions), len(self.resolutions), len(self.qps))

    @property
    def n_settings(self) -> int:
        return len(self.resolutions) * len(self.qps)

    def __len__(self) -> int:
        return len(self.model_versions) * self.n_settings

    def __iter__(self) -> Iterator[Configuration]:
        return iter(self.configs)

    @cached_property
    def configs(self) -> tuple[Configuration, ...]:
        return tuple(
            Configuration(r, q, v)
            for v in self.model_versions
            for r in self.resolutions
            for q in self.qps
        )

    @cached_property
    def _index(self) -> dict[Configuration, int]:
        return {cfg: i for i, cfg in enumerate(self.configs)}

    def index(self, cfg: Configuration) -> int:
        try:
            return self._index[cfg]
        except KeyError:
            raise ConfigurationError(f"{cfg} is not a member of this configuration space") from None

    def config(self, index: int) -> Configuration:
        if not 0 <= index < len(self):
            raise ConfigurationError(f"configuration index {index} out of range [0, {len(self)})")
        return self.configs[index]

    def setting_index(self, resolution: float, qp: int) -> tuple[int, int]:
        try:
            return self.resolutions.index(resolution), self.qps.index(qp)
        except ValueError:
            raise ConfigurationError(f"setting (r={resolution}, qp={qp}) not in space") from None

    @property
    def anchor(self) -> Configuration:
        """The most expensive configuration, whose predictions define ground truth."""
        return Configuration(max(self.resolutions), min(self.qps), self.model_versions[0])

    @cached_property
    def setting_of_config(self) -> np.ndarray:
        """Flat setting index (resolution-major) for every configuration index."""
        n = self.n_settings
        return np.tile(np.arange(n), len(self.model_versions))

    def to_dict(self) -> dict:
        return {
            "resolutions": list(self.resolutions),
            "qps": list(self.qps),
            "model_versions": list(self.model_versions),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConfigurationSpace":
        return cls(
            tuple(float(r) for r in d["resolutions"]),
            tuple(int(q) for q in d["qps"]),
            tuple(int(v) for v in d["model_versions"]),
        )


def enumerate_configs(space: ConfigurationSpace) -> tuple[Configuration, ...]:
    return space.configs


@dataclass(frozen=True)
class CostModel:
    """Normalized FLOPs C(r, v) = model_base_cost[v] * r ** resolution_exponent.

    QP never enters the cost: it changes the bitrate, not the work done by the server.
    """

    model_base_cost: dict[int, float] = field(default_factory=lambda: dict(DEFAULT_MODEL_BASE_COST))
    resolution_exponent: float = 2.0

    def __post_init__(self):
        costs = {int(k): float(v) for k, v in self.model_base_cost.items()}
        object.__setattr__(self, "model_base_cost", costs)
        versions = sorted(costs)
        if not versions:
            raise ConfigurationError("cost model has no model versions")
        values = [costs[v] for v in versions]
        if any(b >= a for a, b in zip(values, values[1:])):
            raise ConfigurationError(f"model_base_cost must strictly decrease with version: {costs}")
        if values[0] != 1.0:
            raise ConfigurationError("the most expensive model must have base cost exactly 1.0")
        if values[-1] <= 0:
            raise ConfigurationError("model costs must be positive")
        if self.resolution_exponent <= 0:
            raise ConfigurationError("resolution_exponent must be positive")

    def cost(self, cfg: Configuration) -> float:
        try:
            base = self.model_base_cost[cfg.model_version]
        except KeyError:
            raise ConfigurationError(f"no base cost for model version {cfg.model_version}") from None
        return base * cfg.resolution_scale ** self.resolution_exponent

    def cost_vector(self, space: ConfigurationSpace) -> np.ndarray:
        """Costs of every configuration, in flat index order."""
        return np.array([self.cost(cfg) for cfg in space.configs])

    def to_dict(self) -> dict:
        return {
            "model_base_cost": {str(k): v for k, v in self.model_base_cost.items()},
            "resolution_exponent": self.resolution_exponent,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CostModel":
        return cls({int(k): float(v) for k, v in d["model_base_cost"].items()},
                   float(d.get("resolution_exponent", 2.0)))


def cost(model: CostModel, cfg: Configuration) -> float:
    return model.cost(cfg)
