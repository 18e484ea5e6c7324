"""All tunables in one tree, overridable with ``section.key=value`` strings."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

from .exploration import RobotModel
from .lifecycle import LifecycleConfig
from .mapping import SimilarityConfig
from .priority import SigmaConfig
from .stationarity import DecayPolicy


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExploreConfig:
    M: int = 3
    bandwidth: float = 0.5
    forgetting: float = 0.99
    goal_tolerance: float = 0.3
    max_plan_attempts: int = 8
    unknown_weight: float = 0.0


@dataclass(frozen=True)
class EpisodeSettings:
    sense_period: float = 1.0
    change_detection: bool = True
    r_match: float = 0.5
    r_succ: float = 1.5
    patrol_spacing: float = 2.0
    relevancy_default: float = 0.1
    strict_class: bool = True
    belief_log: bool = True


@dataclass(frozen=True)
class Config:
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    decay: DecayPolicy = field(default_factory=DecayPolicy)
    lifecycle: LifecycleConfig = field(default_factory=LifecycleConfig)
    sigma: SigmaConfig = field(default_factory=SigmaConfig)
    robot: RobotModel = field(default_factory=RobotModel)
    explore: ExploreConfig = field(default_factory=ExploreConfig)
    episode: EpisodeSettings = field(default_factory=EpisodeSettings)

    def to_dict(self) -> dict:
        return asdict(self)

    def keys(self) -> list[str]:
        return [f"{s.name}.{f.name}" for s in fields(self) for f in fields(getattr(self, s.name))]


def _parse(raw: str, current):
    if isinstance(current, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if current is None:
        return None if raw.lower() in ("none", "null", "") else float(raw)
    return float(raw)


def apply_overrides(cfg: Config, overrides: list[str] | dict | None) -> Config:
    """Apply ``section.key=value`` overrides; unknown keys raise ConfigError naming the key."""
    if not overrides:
        return cfg
    items = overrides.items() if isinstance(overrides, dict) else [_split(o) for o in overrides]
    for key, raw in items:
        if key.count(".") != 1:
            raise ConfigError(f"unknown config key {key!r}")
        section, name = key.split(".")
        if section not in {f.name for f in fields(cfg)}:
            raise ConfigError(f"unknown config key {key!r}")
        sub = getattr(cfg, section)
        if name not in {f.name for f in fields(sub)}:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            value = _parse(str(raw), getattr(sub, name))
            cfg = replace(cfg, **{section: replace(sub, **{name: value})})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None
    return cfg


def _split(item: str) -> tuple[str, str]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    k, v = item.split("=", 1)
    return k.strip(), v.strip()
