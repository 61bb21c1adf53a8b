"""Meta-learned general value functions as predictive features for control."""
from .agents import Agent, AgentConfig
from .core import ConfigurationError, Rng
from .envs import FrostHollow, MonsoonWorld, make_env
from .harness import ExperimentConfig, load_config, run_experiment, run_seed

__all__ = [
    "Agent", "AgentConfig", "ConfigurationError", "ExperimentConfig", "FrostHollow",
    "MonsoonWorld", "Rng", "load_config", "make_env", "run_experiment", "run_seed",
]
__version__ = "0.1.0"
