from __future__ import annotations

"""Per-parcel knowledge base fed back by analysis runs.

Every attribute value carries its provenance (producer, run id, timestamp).
The store is an append-only JSON-lines journal; reads return the latest
value per (parcel, attribute) and the full history stays on disk until
``compact`` is called.
"""

from dataclasses import dataclass, field
from datetime import datetime, timezone
import json
import logging
import math
import os
from pathlib import Path
import threading
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Set, Tuple

import numpy as np

from .errors import FormatError, UsageError
from .fingerprint import fingerprint

log = logging.getLogger(__name__)

KB_NAME = "kb.jsonl"
LPIS_PRODUCER = "lpis"

Scalar = Any  # str | int | float | bool | None


def _now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def normalize_value(value: Any) -> Scalar:
    """JSON-safe scalar; NaN and numpy scalars are folded to plain Python values."""
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if value is None or isinstance(value, (str, bool, int, float)):
        return value
    raise UsageError(f"knowledge base values must be scalars, got {type(value).__name__}")


@dataclass(frozen=True)
class AttributeValue:
    parcel_id: int
    attribute: str
    value: Scalar
    producer: str
    run_id: str
    ts: str

    def to_json(self) -> Dict[str, Any]:
        return {
            "parcel_id": self.parcel_id,
            "attribute": self.attribute,
            "value": self.value,
            "producer": self.producer,
            "run_id": self.run_id,
            "ts": self.ts,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "AttributeValue":
        try:
            return cls(int(data["parcel_id"]), str(data["attribute"]), data.get("value"),
                       str(data["producer"]), str(data.get("run_id", "")), str(data.get("ts", "")))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed knowledge base entry ({exc})") from None


@dataclass
class UpsertReport:
    producer: str
    run_id: str
    applied: int = 0
    unchanged: int = 0
    unknown_ids: List[int] = field(default_factory=list)

    @property
    def changed(self) -> int:
        return self.applied


def payload_run_id(producer: str, results: Mapping[int, Mapping[str, Any]]) -> str:
    """Deterministic run id: identical payloads from one producer share it."""
    body = json.dumps(
        {str(k): {a: normalize_value(v) for a, v in sorted(attrs.items())} for k, attrs in sorted(results.items())},
        sort_keys=True, separators=(",", ":"))
    return fingerprint((producer + "\n" + body).encode("utf-8")) or ""


class KnowledgeBase:
    def __init__(self, path: str | Path, *, known_ids: Optional[Iterable[int]] = None,
                 clock: Callable[[], str] = _now):
        p = Path(path)
        self.path = p / KB_NAME if p.is_dir() else p
        self.known_ids: Optional[Set[int]] = None if known_ids is None else {int(i) for i in known_ids}
        self._clock = clock
        self._lock = threading.Lock()
        self._history: Dict[Tuple[int, str], List[AttributeValue]] = {}
        self._load()

    def _load(self) -> None:
        if not self.path.exists():
            return
        with self.path.open("r", encoding="utf-8") as f:
            for n, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    entry = AttributeValue.from_json(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise FormatError(f"{self.path}:{n}: malformed JSON ({exc.msg})") from None
                except FormatError as exc:
                    raise FormatError(f"{self.path}:{n}: {exc}") from None
                self._history.setdefault((entry.parcel_id, entry.attribute), []).append(entry)
        log.debug("knowledge base %s: %d attribute value(s)", self.path, len(self._history))

    # --- reads ---
    def latest(self, parcel_id: int, attribute: str) -> Optional[AttributeValue]:
        hist = self._history.get((int(parcel_id), attribute))
        return hist[-1] if hist else None

    def get(self, parcel_id: int, attribute: str, default: Scalar = None) -> Scalar:
        entry = self.latest(parcel_id, attribute)
        return default if entry is None else entry.value

    def history(self, parcel_id: int, attribute: str) -> List[AttributeValue]:
        return list(self._history.get((int(parcel_id), attribute), ()))

    def attributes(self, parcel_id: Optional[int] = None) -> List[str]:
        names = {a for (pid, a) in self._history if parcel_id is None or pid == int(parcel_id)}
        return sorted(names)

    def parcel_ids(self) -> List[int]:
        return sorted({pid for pid, _ in self._history} | (self.known_ids or set()))

    def row(self, parcel_id: int) -> Dict[str, Scalar]:
        pid = int(parcel_id)
        return {a: hist[-1].value for (p, a), hist in sorted(self._history.items()) if p == pid}

    def rows(self) -> Dict[int, Dict[str, Scalar]]:
        out: Dict[int, Dict[str, Scalar]] = {pid: {} for pid in self.parcel_ids()}
        for (pid, attr), hist in sorted(self._history.items()):
            out[pid][attr] = hist[-1].value
        return out

    def __len__(self) -> int:
        return len(self._history)

    # --- writes ---
    def upsert(self, results: Mapping[int, Mapping[str, Any]], producer: str,
               run_id: Optional[str] = None) -> UpsertReport:
        """Apply producer output; values equal to the current ones from the same producer are skipped.

        Unknown parcel ids (when the id set is known) are reported and skipped.
        """
        if not producer:
            raise UsageError("producer id is required")
        run = run_id or payload_run_id(producer, results)
        report = UpsertReport(producer, run)
        lines: List[AttributeValue] = []
        with self._lock:
            stamp = self._clock()
            for pid in sorted(int(k) for k in results):
                if self.known_ids is not None and pid not in self.known_ids:
                    report.unknown_ids.append(pid)
                    continue
                attrs = results[pid] if pid in results else results[str(pid)]  # type: ignore[index]
                for attr in sorted(attrs):
                    value = normalize_value(attrs[attr])
                    cur = self.latest(pid, attr)
                    if cur is not None and cur.value == value and cur.producer == producer \
                            and type(cur.value) is type(value):
                        report.unchanged += 1
                        continue
                    entry = AttributeValue(pid, str(attr), value, producer, run, stamp)
                    lines.append(entry)
                    report.applied += 1
            if lines:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as f:
                    for entry in lines:
                        f.write(json.dumps(entry.to_json(), separators=(",", ":"), sort_keys=True) + "\n")
                for entry in lines:
                    self._history.setdefault((entry.parcel_id, entry.attribute), []).append(entry)
        if report.unknown_ids:
            log.warning("knowledge base upsert from %s: %d unknown parcel id(s) skipped: %s",
                        producer, len(report.unknown_ids), report.unknown_ids[:10])
        log.info("knowledge base upsert from %s (run %s): %d applied, %d unchanged",
                 producer, run, report.applied, report.unchanged)
        return report

    def register_parcels(self, parcels: Iterable[Any], run_id: Optional[str] = None) -> UpsertReport:
        """Seed declared and predicted crops from parcel records; adds their ids to the known set."""
        results: Dict[int, Dict[str, Any]] = {}
        for p in parcels:
            row: Dict[str, Any] = {"crop_declared": p.crop_declared}
            if p.crop_predicted is not None:
                row["crop_predicted"] = p.crop_predicted
            results[int(p.id)] = row
        if self.known_ids is not None:
            self.known_ids |= set(results)
        return self.upsert(results, LPIS_PRODUCER, run_id)

    def compact(self) -> int:
        """Rewrite the journal keeping only the latest entry per (parcel, attribute)."""
        with self._lock:
            if not self.path.exists():
                return 0
            before = sum(len(h) for h in self._history.values())
            tmp = self.path.with_name(self.path.name + ".part")
            with tmp.open("w", encoding="utf-8") as f:
                for key in sorted(self._history):
                    f.write(json.dumps(self._history[key][-1].to_json(), separators=(",", ":"), sort_keys=True) + "\n")
            os.replace(tmp, self.path)
            self._history = {k: [h[-1]] for k, h in self._history.items()}
        dropped = before - len(self._history)
        log.info("knowledge base compacted: %d superseded value(s) dropped", dropped)
        return dropped


def update_knowledge_base(kb: KnowledgeBase, parcel_results: Mapping[int, Mapping[str, Any]],
                          producer_id: str, run_id: Optional[str] = None) -> UpsertReport:
    return kb.upsert(parcel_results, producer_id, run_id)


__all__ = [
    "KB_NAME",
    "LPIS_PRODUCER",
    "AttributeValue",
    "UpsertReport",
    "KnowledgeBase",
    "normalize_value",
    "payload_run_id",
    "update_knowledge_base",
]
