from __future__ import annotations

from typing import Callable

from .base import GroundingOutcome, GroundingQuery, NoTarget, ParseFailure, Point


class ConstantGrounder:
    """Always answers the same view-relative point; ``point=None`` never finds anything."""

    def __init__(self, point: tuple[float, float] | None = (0.5, 0.5), failure: str = "no_target"):
        self.point = point
        self.failure = failure

    def ground(self, query: GroundingQuery) -> GroundingOutcome:
        if self.point is None:
            if self.failure == "parse_failure":
                return ParseFailure("mock: unparseable")
            return NoTarget("mock: no target")
        return Point(*self.point)

    def identity(self) -> dict:
        return {"kind": "mock", "point": list(self.point) if self.point else None, "failure": self.failure}


class CallableGrounder:
    """Adapter for ad-hoc grounders written as plain functions."""

    def __init__(self, fn: Callable[[GroundingQuery], GroundingOutcome], name: str = "callable"):
        self.fn = fn
        self.name = name

    def ground(self, query: GroundingQuery) -> GroundingOutcome:
        return self.fn(query)

    def identity(self) -> dict:
        return {"kind": self.name}
