from __future__ import annotations

"""Content fingerprints used by run manifests and determinism checks."""

import hashlib
from pathlib import Path
from typing import Dict, Iterable, Optional

import numpy as np

_CHUNK = 1 << 20


def fingerprint(data: Optional[bytes], length: int = 12) -> Optional[str]:
    if data is None:
        return None
    return hashlib.sha1(data).hexdigest()[:length]


def file_checksum(path: str | Path) -> str:
    h = hashlib.sha1()
    with open(path, "rb") as f:
        while True:
            block = f.read(_CHUNK)
            if not block:
                break
            h.update(block)
    return h.hexdigest()


def array_checksum(arr: np.ndarray) -> str:
    a = np.ascontiguousarray(arr)
    h = hashlib.sha1()
    h.update(str(a.dtype).encode("ascii"))
    h.update(repr(a.shape).encode("ascii"))
    h.update(a.tobytes())
    return h.hexdigest()


def tree_checksums(root: str | Path, patterns: Iterable[str] = ("**/*",)) -> Dict[str, str]:
    """Checksums of every file under root matching patterns, keyed by posix relative path."""
    base = Path(root)
    out: Dict[str, str] = {}
    for pat in patterns:
        for p in sorted(base.glob(pat)):
            if p.is_file():
                out[p.relative_to(base).as_posix()] = file_checksum(p)
    return dict(sorted(out.items()))


__all__ = ["fingerprint", "file_checksum", "array_checksum", "tree_checksums"]
