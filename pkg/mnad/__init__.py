"""
Memory-guided normality learning for video anomaly detection
"""
try:
    from ._version import __version__, __timestamp__
except ImportError:
    __version__ = "Unknown version"
    __timestamp__ = "Unknown timestamp"

from .utils import MnadError, ShapeError, ConfigError, DataError, CheckpointError, NumericalError
from .model import Model, get_model_class
from .memory import MemoryBank
from .trainer import TrainConfig, EvalConfig, Trainer, train, evaluate, score_stream

__all__ = [
    "__version__",
    "__timestamp__",
    "MnadError",
    "ShapeError",
    "ConfigError",
    "DataError",
    "CheckpointError",
    "NumericalError",
    "Model",
    "get_model_class",
    "MemoryBank",
    "TrainConfig",
    "EvalConfig",
    "Trainer",
    "train",
    "evaluate",
    "score_stream",
]
