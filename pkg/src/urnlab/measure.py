"""Finite nonnegative measures over integer colors.

A ``SparseMeasure`` stores strictly positive weights on a sorted tuple of colors.
Weights are either all ``Fraction`` (exact mode) or all ``float``; mixing the two
degrades the measure to floats.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Sequence

Weight = float | Fraction


def _is_exact(value: object) -> bool:
    return isinstance(value, (Fraction, int)) and not isinstance(value, bool)


def exact_sum(values: Iterable[Weight]) -> Weight:
    values = list(values)
    if all(isinstance(v, Fraction) for v in values):
        return sum(values, Fraction(0))
    return math.fsum(float(v) for v in values)


@dataclass(frozen=True, slots=True)
class SparseMeasure:
    colors: tuple[int, ...]
    weights: tuple[Weight, ...]
    total_mass: Weight

    @classmethod
    def from_mapping(cls, entries: Mapping[int, Weight] | Iterable[tuple[int, Weight]]) -> SparseMeasure:
        items = entries.items() if isinstance(entries, Mapping) else entries
        merged: dict[int, Weight] = {}
        for color, weight in items:
            if color < 0:
                raise ValueError(f"Colors are nonnegative integers, got {color}")
            if weight < 0:
                raise ValueError(f"Negative weight {weight!r} at color {color}")
            merged[color] = merged.get(color, 0) + weight
        exact = all(_is_exact(w) for w in merged.values())
        pairs = sorted((c, Fraction(w) if exact else float(w)) for c, w in merged.items() if w != 0)
        colors = tuple(c for c, _ in pairs)
        weights = tuple(w for _, w in pairs)
        return cls(colors, weights, exact_sum(weights) if weights else (Fraction(0) if exact else 0.0))

    @classmethod
    def point_mass(cls, color: int, mass: Weight = Fraction(1)) -> SparseMeasure:
        return cls.from_mapping({color: mass})

    @classmethod
    def empty(cls) -> SparseMeasure:
        return cls((), (), Fraction(0))

    @property
    def is_exact(self) -> bool:
        return all(isinstance(w, Fraction) for w in self.weights)

    def __len__(self) -> int:
        return len(self.colors)

    def __iter__(self) -> Iterator[tuple[int, Weight]]:
        return iter(zip(self.colors, self.weights))

    def __getitem__(self, color: int) -> Weight:
        lo, hi = 0, len(self.colors)
        while lo < hi:
            mid = (lo + hi) // 2
            if self.colors[mid] < color:
                lo = mid + 1
            else:
                hi = mid
        if lo < len(self.colors) and self.colors[lo] == color:
            return self.weights[lo]
        return Fraction(0) if self.is_exact else 0.0

    def to_dict(self) -> dict[int, Weight]:
        return dict(zip(self.colors, self.weights))

    def as_float(self) -> SparseMeasure:
        if not self.is_exact:
            return self
        weights = tuple(float(w) for w in self.weights)
        return SparseMeasure(self.colors, weights, math.fsum(weights))

    def scaled(self, factor: Weight) -> SparseMeasure:
        return SparseMeasure.from_mapping({c: w * factor for c, w in self})

    def normalized(self) -> SparseMeasure:
        if self.total_mass == 0:
            raise ValueError("Cannot normalize the zero measure")
        return self.scaled(1 / self.total_mass if self.is_exact else 1.0 / self.total_mass)

    def l1_distance(self, other: SparseMeasure) -> float:
        colors = set(self.colors) | set(other.colors)
        return math.fsum(abs(float(self[c]) - float(other[c])) for c in colors)

    def to_json(self) -> dict[str, float]:
        return {str(c): float(w) for c, w in self}


def draw_color(colors: Sequence[int], weights: Sequence[float], total: float, uniform: float) -> int:
    """Map one uniform variate to a color by a cumulative scan in color order.

    ``total`` is the nominal mass; if rounding leaves the scan short of it, the
    last color is returned.
    """
    target = uniform * total
    acc = 0.0
    for color, weight in zip(colors, weights):
        acc += weight
        if target < acc:
            return color
    return colors[-1]


def parse_weight(text: str) -> Fraction:
    """Parse ``"0.25"``, ``"1/3"`` or ``"2"`` as an exact fraction."""
    return Fraction(text.strip())


def parse_measure(text: str) -> SparseMeasure:
    """Parse a ``"c:w,c:w,..."`` literal with exact weights."""
    entries: dict[int, Weight] = {}
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        color, sep, weight = chunk.partition(":")
        if not sep:
            raise ValueError(f"Expected 'color:weight', got {chunk!r}")
        c = int(color)
        entries[c] = entries.get(c, Fraction(0)) + parse_weight(weight)
    return SparseMeasure.from_mapping(entries)


def format_measure(measure: SparseMeasure) -> str:
    return ",".join(f"{c}:{w}" for c, w in measure)

