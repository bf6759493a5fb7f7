from __future__ import annotations

"""Plain-text report rendering for the terminal."""

import os
import sys
from typing import Callable, List, Optional, Sequence


def supports_color(disable: bool = False, stream=None) -> bool:
    if disable:
        return False
    if os.environ.get("NO_COLOR") is not None:
        return False
    stream = stream or sys.stdout
    return bool(getattr(stream, "isatty", lambda: False)())


class Palette:
    NAMES = ("RESET", "GREEN", "RED", "YELLOW", "CYAN", "BOLD")

    def __init__(self, enabled: bool):
        if not enabled:
            for k in self.NAMES:
                setattr(self, k, "")
        else:
            self.RESET = "\x1b[0m"
            self.GREEN = "\x1b[32m"
            self.RED = "\x1b[31m"
            self.YELLOW = "\x1b[33m"
            self.CYAN = "\x1b[36m"
            self.BOLD = "\x1b[1m"

    def c(self, color: str, text: str) -> str:
        v = getattr(self, color, "")
        return f"{v}{text}{self.RESET}" if v else text


def render_table(headers: Sequence[str], rows: Sequence[Sequence[str]], pal: Optional[Palette] = None,
                 color_of: Optional[Callable[[int, int, str], Optional[str]]] = None) -> List[str]:
    """Right-aligned text table; ``color_of(row, col, text)`` may name a palette color per cell."""
    pal = pal or Palette(False)
    widths = [len(h) for h in headers]
    for r in rows:
        for j, cell in enumerate(r):
            widths[j] = max(widths[j], len(cell))
    lines = [pal.c("BOLD", "  ".join(h.rjust(widths[j]) for j, h in enumerate(headers)))]
    lines.append(pal.c("CYAN", "  ".join("-" * w for w in widths)))
    for i, r in enumerate(rows):
        cells = []
        for j, cell in enumerate(r):
            text = cell.rjust(widths[j])
            color = color_of(i, j, cell) if color_of else None
            cells.append(pal.c(color, text) if color else text)
        lines.append("  ".join(cells))
    return lines


__all__ = ["Palette", "supports_color", "render_table"]
