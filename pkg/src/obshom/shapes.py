"""Hole shapes: balls, axis-aligned boxes and the empty set."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_KINDS = ("ball", "box", "empty")


@dataclass(frozen=True)
class ShapeSpec:
    """A hole shape centred at the origin, lengths in lattice units."""

    kind: str
    radius: float = 0.0
    half_widths: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}; expected one of {_KINDS}")
        if self.radius < 0:
            raise ValueError("ball radius must be >= 0")
        if any(w < 0 for w in self.half_widths):
            raise ValueError("box half widths must be >= 0")
        if self.kind == "box" and not self.half_widths:
            raise ValueError("box shape needs half_widths")

    @classmethod
    def ball(cls, r: float) -> "ShapeSpec":
        return cls("ball", radius=float(r))

    @classmethod
    def box(cls, half_widths) -> "ShapeSpec":
        return cls("box", half_widths=tuple(float(w) for w in half_widths))

    @classmethod
    def empty(cls) -> "ShapeSpec":
        return cls("empty")

    @property
    def is_empty(self) -> bool:
        if self.kind == "empty":
            return True
        if self.kind == "ball":
            return self.radius == 0.0
        return all(w == 0.0 for w in self.half_widths)

    @property
    def bounding_radius(self) -> float:
        """Radius of the smallest origin-centred ball containing the shape."""
        if self.is_empty:
            return 0.0
        if self.kind == "ball":
            return self.radius
        return float(np.sqrt(sum(w * w for w in self.half_widths)))

    def scaled(self, factor: float) -> "ShapeSpec":
        if self.kind == "ball":
            return ShapeSpec.ball(self.radius * factor)
        if self.kind == "box":
            return ShapeSpec.box([w * factor for w in self.half_widths])
        return self

    def contains(self, offsets: np.ndarray, slack: float = 0.0) -> np.ndarray:
        """Boolean mask of which offsets (rows, relative to the centre) lie in the closed shape."""
        offsets = np.atleast_2d(offsets)
        if self.is_empty:
            return np.zeros(offsets.shape[0], dtype=bool)
        if self.kind == "ball":
            return np.sqrt(np.sum(offsets**2, axis=1)) <= self.radius + slack
        hw = np.asarray(self.half_widths, dtype=float)
        if hw.size != offsets.shape[1]:
            raise ValueError(f"box has {hw.size} half widths but points are {offsets.shape[1]}-dimensional")
        return np.all(np.abs(offsets) <= hw + slack, axis=1)

    def to_dict(self) -> dict:
        if self.kind == "ball":
            return {"kind": "ball", "radius": self.radius}
        if self.kind == "box":
            return {"kind": "box", "half_widths": list(self.half_widths)}
        return {"kind": "empty"}

    @classmethod
    def from_dict(cls, d: dict) -> "ShapeSpec":
        kind = d.get("kind")
        if kind == "ball":
            return cls.ball(d["radius"])
        if kind == "box":
            return cls.box(d["half_widths"])
        if kind == "empty":
            return cls.empty()
        raise ValueError(f"unknown shape kind {kind!r}")
