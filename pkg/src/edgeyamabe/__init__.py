"""Numerical lab for the normalized Yamabe flow on a model cone."""

__version__ = "0.1.0"

from .errors import ConfigError, EdgeYamabeError  # noqa: E402
from .geometry import EdgeModel, WarpSpec  # noqa: E402

__all__ = ["ConfigError", "EdgeModel", "EdgeYamabeError", "WarpSpec", "__version__"]
