"""Boundary integral solver for sound-soft scattering in layered media."""

from .config import ConfigError, SceneConfig, parse_config, write_config
from .estimator import LayeredScatteringSolver
from .layers import LayerStack, PlaneWave
from .sommerfeld import RuleBook, layered_green

__all__ = [
    "ConfigError",
    "LayerStack",
    "LayeredScatteringSolver",
    "PlaneWave",
    "RuleBook",
    "SceneConfig",
    "layered_green",
    "parse_config",
    "write_config",
]
__version__ = "0.1.0"
