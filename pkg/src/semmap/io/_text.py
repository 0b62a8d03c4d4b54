"""Shared text-format helpers: number formatting and diagnostic collection."""

from __future__ import annotations

from ..errors import FormatError


def fmt(value: float) -> str:
    """Canonical number rendering: 9 significant digits, no trailing noise."""
    return format(float(value), ".9g")


class Diagnostics:
    """Collects (line, message) pairs and raises one FormatError at the end."""

    def __init__(self, source: str):
        self.source = source
        self.items: list[tuple[int | None, str]] = []

    def add(self, line: int | None, message: str):
        self.items.append((line, message))

    def raise_if_any(self):
        if self.items:
            summary = "; ".join(
                f"line {line}: {msg}" if line is not None else msg
                for line, msg in self.items[:8]
            )
            more = "" if len(self.items) <= 8 else f" (+{len(self.items) - 8} more)"
            raise FormatError(f"{self.source}: {summary}{more}", self.items)

    def fail(self, line: int | None, message: str):
        self.add(line, message)
        self.raise_if_any()


def parse_floats(tokens: list[str], n: int, diag: Diagnostics, line: int) -> list[float]:
    if len(tokens) != n:
        diag.fail(line, f"expected {n} numbers, got {len(tokens)}")
    out = []
    for tok in tokens:
        try:
            out.append(float(tok))
        except ValueError:
            diag.fail(line, f"not a number: {tok!r}")
    return out
