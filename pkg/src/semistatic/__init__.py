"""Object-level map maintenance and task-driven exploration in semi-static 2D worlds."""

from .config import Config, ConfigError, apply_overrides
from .episode import Episode, Mapper, prior_map, survey_map
from .world import Scenario, ScenarioError, load_scenario, sense, world_state

__all__ = [
    "Config", "ConfigError", "apply_overrides", "Episode", "Mapper", "prior_map", "survey_map",
    "Scenario", "ScenarioError", "load_scenario", "sense", "world_state",
]
__version__ = "0.1.0"
