"""Self-supervised visual representation learning on a shared training pipeline."""

from .methods import METHOD_NAMES, build, default_config

__version__ = "0.1.0"

__all__ = ["METHOD_NAMES", "build", "default_config", "__version__"]
