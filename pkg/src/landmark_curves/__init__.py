"""Curvilinear landmark detection with Bezier curve proposals and hierarchical refinement."""
from .config import CATEGORIES, Config, desk_config

__version__ = "0.1.0"

__all__ = ["CATEGORIES", "Config", "desk_config", "__version__"]
