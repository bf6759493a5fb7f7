from __future__ import annotations

"""Run manifests: one JSON record per CLI invocation.

Public objects:
  - RunManifest
  - write_manifest(path, manifest)
  - read_manifest(path)
  - package_versions()
"""

from dataclasses import dataclass, field
from datetime import datetime, timezone
import json
from pathlib import Path
import platform
from typing import Any, Dict, Iterable, List, Optional

from .fingerprint import file_checksum, fingerprint

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
_PACKAGES = ("numpy", "scipy", "pandas", "xarray", "shapely")


def package_versions() -> Dict[str, str]:
    from . import __version__

    out = {"agricube": __version__, "python": platform.python_version()}
    for name in _PACKAGES:
        try:
            mod = __import__(name)
            out[name] = str(getattr(mod, "__version__", "unknown"))
        except Exception:  # pragma: no cover
            out[name] = "missing"
    return out


@dataclass
class RunManifest:
    command: List[str]
    config_checksum: Optional[str] = None
    seed: Optional[int] = None
    versions: Dict[str, str] = field(default_factory=package_versions)
    outputs: Dict[str, str] = field(default_factory=dict)
    wall_time_s: float = 0.0
    exit_code: int = 0
    created_at: str = field(default_factory=lambda: datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"))

    def add_outputs(self, paths: Iterable[str | Path], base: Optional[Path] = None) -> None:
        for p in paths:
            path = Path(p)
            if not path.is_file():
                continue
            key = path.relative_to(base).as_posix() if base is not None and path.is_relative_to(base) \
                else path.as_posix()
            self.outputs[key] = file_checksum(path)

    def set_config(self, path: Optional[str | Path]) -> None:
        if path is not None and Path(path).is_file():
            self.config_checksum = file_checksum(path)

    @property
    def outputs_digest(self) -> Optional[str]:
        """One fingerprint over every output checksum (order independent)."""
        if not self.outputs:
            return None
        body = "\n".join(f"{k}={v}" for k, v in sorted(self.outputs.items()))
        return fingerprint(body.encode("utf-8"))

    def to_json(self) -> Dict[str, Any]:
        return {
            "version": MANIFEST_VERSION,
            "created_at": self.created_at,
            "command": list(self.command),
            "config_checksum": self.config_checksum,
            "seed": self.seed,
            "versions": dict(sorted(self.versions.items())),
            "outputs": dict(sorted(self.outputs.items())),
            "outputs_digest": self.outputs_digest,
            "wall_time_s": round(float(self.wall_time_s), 6),
            "exit_code": self.exit_code,
        }


def write_manifest(path: str | Path, manifest: RunManifest) -> Path:
    p = Path(path)
    if p.is_dir() or not p.suffix:
        p = p / MANIFEST_NAME
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8") as f:
        json.dump(manifest.to_json(), f, indent=2, sort_keys=False)
        f.write("\n")
    return p


def read_manifest(path: str | Path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST_NAME
    with p.open("r", encoding="utf-8") as f:
        return json.load(f)


__all__ = ["RunManifest", "write_manifest", "read_manifest", "package_versions", "MANIFEST_NAME"]
