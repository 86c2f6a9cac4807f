"""Ordered sets of non-overlapping [start, end) time regions, in seconds."""

from __future__ import annotations

from typing import Iterable, Iterator

from .errors import ValidationError


class Timeline:
    """Normalized list of [start, end) regions.

    Construction sorts the input and merges overlapping or touching
    regions, so starts are strictly increasing and regions never overlap.
    """

    __slots__ = ("regions",)

    def __init__(self, regions: Iterable[tuple[float, float]] = ()):
        cleaned = []
        for start, end in regions:
            start, end = float(start), float(end)
            if not end > start:
                raise ValidationError(f"region end {end} must exceed start {start}")
            cleaned.append((start, end))
        cleaned.sort()
        merged: list[tuple[float, float]] = []
        for start, end in cleaned:
            if merged and start <= merged[-1][1]:
                prev_start, prev_end = merged[-1]
                merged[-1] = (prev_start, max(prev_end, end))
            else:
                merged.append((start, end))
        self.regions: tuple[tuple[float, float], ...] = tuple(merged)

    def __iter__(self) -> Iterator[tuple[float, float]]:
        return iter(self.regions)

    def __len__(self) -> int:
        return len(self.regions)

    def __eq__(self, other) -> bool:
        return isinstance(other, Timeline) and self.regions == other.regions

    def __repr__(self) -> str:
        return f"Timeline({list(self.regions)})"

    def duration(self) -> float:
        """Total covered duration in seconds."""
        return sum(end - start for start, end in self.regions)

    def end(self) -> float:
        return self.regions[-1][1] if self.regions else 0.0

    def contains(self, t: float) -> bool:
        return any(start <= t < end for start, end in self.regions)

    def crop(self, start: float, end: float) -> "Timeline":
        """Intersect with the extent [start, end)."""
        out = []
        for s, e in self.regions:
            s2, e2 = max(s, start), min(e, end)
            if e2 > s2:
                out.append((s2, e2))
        return Timeline(out)

    def shift(self, offset: float) -> "Timeline":
        return Timeline((s + offset, e + offset) for s, e in self.regions)
