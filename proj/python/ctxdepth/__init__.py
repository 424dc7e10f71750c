"""Monocular depth estimation with attention-based context aggregation."""

from ._ctxdepth import *  # noqa: F401,F403
from ._ctxdepth import Discretization, Error, ParameterError, SceneConfig  # noqa: F401

__version__ = "0.1.0"
