import configparser
import io
import os
from pathlib import Path
from typing import Iterable, List, Optional

from dotenv import load_dotenv

from utils.errors import ConfigError
from utils.presets import PRESETS

# Load environment variables
load_dotenv()

EXPERIMENTS = ("lorenz", "tracking", "mep", "example2")


class Config:
    """Environment-backed runtime settings"""

    def __init__(self):
        self._threads = os.getenv("TSSL_THREADS")
        self._log_level = os.getenv("TSSL_LOG_LEVEL", "INFO").upper()
        self._output_dir = os.getenv("TSSL_OUTPUT_DIR", "runs")

    @property
    def threads(self) -> int:
        if self._threads is None or self._threads.strip() == "":
            return os.cpu_count() or 1
        return int(self._threads)

    @property
    def log_level(self) -> str:
        return self._log_level

    @property
    def output_dir(self) -> Path:
        return Path(self._output_dir)

    def validate(self) -> bool:
        """Validate environment settings"""
        problems = []

        if self._threads is not None and self._threads.strip() != "":
            try:
                if int(self._threads) < 1:
                    problems.append("TSSL_THREADS must be a positive integer")
            except ValueError:
                problems.append("TSSL_THREADS must be a positive integer")
        if self._log_level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            problems.append(f"Unknown TSSL_LOG_LEVEL: {self._log_level}")

        if problems:
            raise ConfigError("; ".join(problems))

        return True


class ExperimentConfig:
    """
    Experiment file: `key = value` lines grouped under `[section]` headers

    A preset supplies every default; a user file and `section.key=value`
    overrides are layered on top.
    """

    def __init__(self, parser: configparser.ConfigParser):
        self._parser = parser

    @classmethod
    def from_text(cls, text: str, preset: Optional[str] = None) -> "ExperimentConfig":
        parser = _new_parser()
        try:
            if preset is not None:
                parser.read_string(_preset_text(preset), source=f"<preset {preset}>")
            if text:
                parser.read_string(text, source="<config>")
        except configparser.Error as e:
            raise ConfigError(f"Malformed configuration: {e}") from e
        config = cls(parser)
        if preset is None and config.get_str("experiment", "name", "") in PRESETS:
            # Fill unspecified keys from the named experiment's preset
            return cls.from_text(text, preset=config.get_str("experiment", "name"))
        return config

    @classmethod
    def from_preset(cls, preset: str) -> "ExperimentConfig":
        return cls.from_text("", preset=preset)

    @classmethod
    def from_file(cls, path, preset: Optional[str] = None) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Configuration file not found: {path}")
        return cls.from_text(path.read_text(encoding="utf-8"), preset=preset)

    def with_overrides(self, overrides: Iterable[str]) -> "ExperimentConfig":
        """
        Return a copy with `section.key=value` overrides applied

        Args:
            overrides: Strings such as "data.alpha=0.25"

        Returns:
            ExperimentConfig: The updated configuration
        """
        parser = _new_parser()
        parser.read_string(self.to_text())
        for item in overrides:
            if "=" not in item or "." not in item.split("=", 1)[0]:
                raise ConfigError(f"Override must look like section.key=value: {item!r}")
            name, value = item.split("=", 1)
            section, key = name.strip().split(".", 1)
            if not parser.has_section(section):
                parser.add_section(section)
            parser.set(section, key.strip(), value.strip())
        return ExperimentConfig(parser)

    def to_text(self) -> str:
        buffer = io.StringIO()
        self._parser.write(buffer)
        return buffer.getvalue()

    def section(self, name: str) -> dict:
        if not self._parser.has_section(name):
            return {}
        return dict(self._parser.items(name))

    def has(self, section: str, key: str) -> bool:
        return self._parser.has_option(section, key) and self._parser.get(section, key).strip() != ""

    def get_str(self, section: str, key: str, default: Optional[str] = None) -> str:
        if not self.has(section, key):
            if default is None:
                raise ConfigError(f"Missing configuration value [{section}] {key}")
            return default
        return self._parser.get(section, key).strip()

    def get_float(self, section: str, key: str, default: Optional[float] = None) -> float:
        raw = self.get_str(section, key, None if default is None else repr(default))
        try:
            return float(raw)
        except ValueError as e:
            raise ConfigError(f"[{section}] {key} must be a number, got {raw!r}") from e

    def get_int(self, section: str, key: str, default: Optional[int] = None) -> int:
        raw = self.get_str(section, key, None if default is None else str(default))
        try:
            return int(float(raw)) if float(raw).is_integer() else int(raw)
        except ValueError as e:
            raise ConfigError(f"[{section}] {key} must be an integer, got {raw!r}") from e

    def get_bool(self, section: str, key: str, default: Optional[bool] = None) -> bool:
        raw = self.get_str(section, key, None if default is None else str(default)).lower()
        if raw in ("1", "true", "yes", "on"):
            return True
        if raw in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{section}] {key} must be a boolean, got {raw!r}")

    def get_floats(self, section: str, key: str, default: Optional[List[float]] = None) -> List[float]:
        if not self.has(section, key):
            if default is None:
                raise ConfigError(f"Missing configuration value [{section}] {key}")
            return list(default)
        raw = self.get_str(section, key)
        try:
            return [float(v) for v in raw.replace(";", ",").split(",") if v.strip()]
        except ValueError as e:
            raise ConfigError(f"[{section}] {key} must be a comma-separated list of numbers") from e

    def get_ints(self, section: str, key: str, default: Optional[List[int]] = None) -> List[int]:
        return [int(v) for v in self.get_floats(section, key, default)]

    @property
    def experiment(self) -> str:
        return self.get_str("experiment", "name")

    @property
    def seeds(self) -> List[int]:
        return self.get_ints("experiment", "seeds", [])

    @property
    def output_dir(self) -> Path:
        return Path(self.get_str("experiment", "output_dir", str(Config().output_dir)))

    def validate(self) -> bool:
        """Validate the invariants of the experiment configuration"""
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(
                f"Unknown experiment {self.experiment!r}; expected one of {', '.join(EXPERIMENTS)}"
            )
        if not self.seeds:
            raise ConfigError("The seed list must not be empty")
        if any(seed < 0 for seed in self.seeds):
            raise ConfigError("Seeds must be nonnegative")
        alpha = self.get_float("data", "alpha", 0.0)
        if not 0.0 <= alpha <= 1.0:
            raise ConfigError(f"[data] alpha must lie in [0, 1], got {alpha}")
        if self.has("data", "path") and not Path(self.get_str("data", "path")).exists():
            raise ConfigError(f"Dataset file not found: {self.get_str('data', 'path')}")
        if self.get_int("data", "n") < 1:
            raise ConfigError("[data] n must be positive")
        if self.get_int("controller", "epochs_min") > self.get_int("controller", "epochs_max"):
            raise ConfigError("[controller] epochs_min must not exceed epochs_max")
        return True


def _new_parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None, strict=False)
    parser.optionxform = str  # keep keys such as M case-sensitive
    return parser


def _preset_text(preset: str) -> str:
    if preset not in PRESETS:
        raise ConfigError(f"Unknown preset {preset!r}; expected one of {', '.join(PRESETS)}")
    return PRESETS[preset]
