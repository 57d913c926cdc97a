from utils.config import Config, ExperimentConfig
from utils.errors import ConfigError, FormatError, InputError, TsslError
from utils.rng import make_rng

__all__ = [
    "Config",
    "ConfigError",
    "ExperimentConfig",
    "FormatError",
    "InputError",
    "TsslError",
    "make_rng",
]
