"""Application configuration settings."""

import configparser
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from pydantic import ValidationError
from pydantic_settings import BaseSettings

from .errors import ConfigError
from .models import AppConfig

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Process-level settings loaded from environment variables (prefix ``ACPP_``)."""

    # Logging
    LOG_LEVEL: str = "INFO"

    # Codec jobs
    CODEC_WORKERS: int = 4  # concurrent (image, qp) encode jobs
    CODEC_TIMEOUT: int = 300  # seconds per external command

    # Training data
    PREFETCH_DEPTH: int = 2  # batches assembled ahead of the training step

    # Paths
    WORK_DIR: str = "./work"
    OUTPUT_DIR: str = "./runs"

    # Rate targeting
    DEFAULT_TARGET_BPP: float = 0.15

    class Config:
        env_prefix = "ACPP_"
        env_file = ".env"
        env_file_encoding = "utf-8"


settings = Settings()


# Config file sections and the AppConfig field each one populates.
_SECTIONS = {
    "run": None,
    "model": "model",
    "train": "train",
    "optimizer": ("train", "optimizer"),
    "loss": ("train", "loss"),
    "codec": "codec_spec",
}


def _line_of(text: str, section: str, key: Optional[str]) -> Optional[int]:
    """Best-effort 1-based line number of ``key`` inside ``[section]``."""
    current = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if key is None and current == section:
                return number
            continue
        if current == section and key is not None:
            name = line.split("=", 1)[0].split(":", 1)[0].strip()
            if name == key:
                return number
    return None


def _locate(loc: tuple) -> tuple:
    """Map a pydantic error location back to (section, key)."""
    if not loc:
        return "run", None
    head = loc[0]
    if head == "model":
        return "model", loc[1] if len(loc) > 1 else None
    if head == "codec_spec":
        return "codec", loc[1] if len(loc) > 1 else None
    if head == "train":
        if len(loc) > 1 and loc[1] in ("optimizer", "loss"):
            return loc[1], loc[2] if len(loc) > 2 else None
        return "train", loc[1] if len(loc) > 1 else None
    return "run", head


def parse_app_config(text: str, source: str = "<config>") -> AppConfig:
    """Parse the INI-style experiment configuration.

    Unknown sections or keys are errors; every error names section.key and
    the line it was found on.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from e

    data: Dict[str, Any] = {"train": {}}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(
                f"{source}:{_line_of(text, section, None)}: unknown section [{section}]"
            )
        values = dict(parser.items(section))
        target = _SECTIONS[section]
        if target is None:
            data.update(values)
        elif isinstance(target, tuple):
            data.setdefault(target[0], {})[target[1]] = values
        else:
            data.setdefault(target, {}).update(values)

    try:
        return AppConfig.model_validate(data)
    except ValidationError as e:
        problems = []
        for error in e.errors():
            section, key = _locate(tuple(error["loc"]))
            line = _line_of(text, section, key)
            where = f"{section}.{key}" if key else f"[{section}]"
            problems.append(f"{source}:{line or '?'}: {where}: {error['msg']}")
        raise ConfigError("\n".join(problems)) from e


def load_app_config(path: str) -> AppConfig:
    """Read and validate an experiment configuration file."""
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigError(f"config file not found: {config_path}")
    text = config_path.read_text(encoding="utf-8")
    config = parse_app_config(text, source=str(config_path))
    logger.debug(f"Loaded config {config_path}")
    return config
