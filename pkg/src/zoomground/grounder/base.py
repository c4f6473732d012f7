from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Protocol, Union, runtime_checkable

from ..geometry import NormPoint, PixelBox


class TransportError(RuntimeError):
    """The endpoint could not be reached (or kept failing) within the retry budget."""


class AuthError(TransportError):
    def __init__(self, message: str, env_var: str | None = None):
        super().__init__(message)
        self.env_var = env_var


@dataclass(frozen=True)
class Point:
    x: float
    y: float
    # True when the model's raw answer fell outside the view and was clamped
    clamped: bool = False

    @property
    def norm(self) -> NormPoint:
        return NormPoint(self.x, self.y)


@dataclass(frozen=True)
class NoTarget:
    reason: str = ""


@dataclass(frozen=True)
class ParseFailure:
    raw: str


GroundingOutcome = Union[Point, NoTarget, ParseFailure]


def clamped_point(x: float, y: float) -> Point:
    x, y = float(x), float(y)
    cx, cy = min(max(x, 0.0), 1.0), min(max(y, 0.0), 1.0)
    return Point(cx, cy, clamped=(cx != x or cy != y))


def outcome_to_dict(o: GroundingOutcome) -> dict[str, Any]:
    if isinstance(o, Point):
        return {"kind": "point", "x": o.x, "y": o.y, "clamped": o.clamped}
    if isinstance(o, NoTarget):
        return {"kind": "no_target", "reason": o.reason}
    return {"kind": "parse_failure", "raw": o.raw}


def outcome_from_dict(d: dict[str, Any]) -> GroundingOutcome:
    kind = d["kind"]
    if kind == "point":
        return Point(d["x"], d["y"], d.get("clamped", False))
    if kind == "no_target":
        return NoTarget(d.get("reason", ""))
    if kind == "parse_failure":
        return ParseFailure(d["raw"])
    raise ValueError(f"unknown outcome kind {kind!r}")


@dataclass
class GroundingQuery:
    """One grounding request: a view of the screenshot plus the instruction.

    ``image`` is the crop itself (a PIL image or anything with ``size`` and
    ``crop``); encoding to bytes is left to backends that actually ship pixels.
    ``region`` locates the crop in original-image pixels, and ``source_size`` is
    the original screenshot size. ``sample_id`` and ``round_index`` identify the
    call for deterministic simulated backends.
    """

    image: Any
    width: int
    height: int
    instruction: str
    region: PixelBox | None = None
    source_size: tuple[int, int] | None = None
    sample_id: str = ""
    round_index: int = 1
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"query view must be at least 1x1, got {self.width}x{self.height}")
        if not self.instruction or not self.instruction.strip():
            raise ValueError("instruction must be non-empty")

    @property
    def is_full_view(self) -> bool:
        if self.region is None or self.source_size is None:
            return self.region is None
        return self.region.astuple() == (0, 0, *self.source_size)


@runtime_checkable
class Grounder(Protocol):
    def ground(self, query: GroundingQuery) -> GroundingOutcome: ...

    def identity(self) -> dict[str, Any]: ...
