from __future__ import annotations

"""Runtime configuration and config-document loading."""

from dataclasses import dataclass, fields
import json
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping

from .errors import ConfigError

try:  # pragma: no cover
    import importlib
    yaml = importlib.import_module("yaml")  # type: ignore
except Exception:  # pragma: no cover
    yaml = None

DEFAULT_WORKSPACE = ".adc"
DEFAULT_TILE_SIZE = 256


@dataclass(frozen=True)
class AdcConfig:
    workspace: str = DEFAULT_WORKSPACE
    threads: int = 1
    log_level: str = "WARNING"
    tile_size: int = DEFAULT_TILE_SIZE

    @classmethod
    def from_options(cls, opt) -> "AdcConfig":
        workspace = str(_env_or("ADC_WORKSPACE", getattr(opt, "workspace", None) or DEFAULT_WORKSPACE))
        raw_threads = _env_or("ADC_THREADS", getattr(opt, "threads", None))
        threads = os.cpu_count() or 1
        try:
            if raw_threads not in (None, ""):
                threads = max(1, int(raw_threads))  # type: ignore[arg-type]
        except Exception:
            threads = os.cpu_count() or 1
        log_level = str(_env_or("ADC_LOG_LEVEL", "WARNING")).upper()
        verbose = int(getattr(opt, "verbose", 0) or 0)
        if verbose == 1:
            log_level = "INFO"
        elif verbose >= 2 or os.environ.get("ADC_DEBUG"):
            log_level = "DEBUG"
        tile_size = DEFAULT_TILE_SIZE
        try:
            tile_size = int(_env_or("ADC_TILE_SIZE", DEFAULT_TILE_SIZE))
        except Exception:
            tile_size = DEFAULT_TILE_SIZE
        return cls(workspace=workspace, threads=threads, log_level=log_level, tile_size=tile_size)


def _env_or(name: str, default):
    v = os.getenv(name)
    return v if v is not None else default


def load_document(path: str | Path) -> Dict[str, Any]:
    """Read a JSON (or, with PyYAML installed, YAML) config document."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        with p.open("r", encoding="utf-8") as f:
            if p.suffix in (".yml", ".yaml"):
                if yaml is None:
                    raise ConfigError(f"{p}: YAML config requires PyYAML")
                data = yaml.safe_load(f) or {}
            else:
                data = json.load(f)
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"{p}: cannot parse config ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: top-level config must be an object")
    return data


def check_keys(kind: str, data: Mapping[str, Any], allowed: Iterable[str]) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"{kind}: unknown keys {', '.join(unknown)}")


def dataclass_keys(cls) -> list:
    return [f.name for f in fields(cls)]


__all__ = ["AdcConfig", "load_document", "check_keys", "dataclass_keys", "DEFAULT_WORKSPACE"]
