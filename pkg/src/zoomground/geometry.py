"""Coordinate algebra shared by every stage of the zoom pipeline.

Three coordinate systems appear throughout:

* normalized points/viewports in ``[0, 1]`` relative to the *original* screenshot,
* normalized points relative to whatever view the grounding model was shown,
* integer pixels of the original screenshot.

Crops are always expressed in original-image pixels, so composing a crop with
its viewport is just normalization (no accumulated relative offsets).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass


class GeometryError(ValueError):
    pass


class BoundaryMode(str, enum.Enum):
    SHIFT = "shift"
    CLIP = "clip"
    SHRINK = "shrink"


@dataclass(frozen=True)
class NormPoint:
    x: float
    y: float

    def __post_init__(self):
        if not (0.0 <= self.x <= 1.0 and 0.0 <= self.y <= 1.0):
            raise GeometryError(f"normalized point out of range: ({self.x}, {self.y})")


@dataclass(frozen=True)
class PixelPoint:
    x: int
    y: int

    def distance(self, other: "PixelPoint") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class Viewport:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (0.0 <= self.x1 < self.x2 <= 1.0 and 0.0 <= self.y1 < self.y2 <= 1.0):
            raise GeometryError(f"invalid viewport {self.astuple()}")

    @classmethod
    def full(cls) -> "Viewport":
        return cls(0.0, 0.0, 1.0, 1.0)

    def astuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def contains(self, p: NormPoint) -> bool:
        return self.x1 <= p.x <= self.x2 and self.y1 <= p.y <= self.y2


@dataclass(frozen=True)
class PixelBox:
    """Half-open pixel rectangle ``[left, left+width) x [top, top+height)``."""

    left: int
    top: int
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise GeometryError(f"box must have positive size, got {self.width}x{self.height}")

    @classmethod
    def from_xyxy(cls, x1: int, y1: int, x2: int, y2: int) -> "PixelBox":
        return cls(int(x1), int(y1), int(x2) - int(x1), int(y2) - int(y1))

    @property
    def right(self) -> int:
        return self.left + self.width

    @property
    def bottom(self) -> int:
        return self.top + self.height

    def xyxy(self) -> tuple[int, int, int, int]:
        return (self.left, self.top, self.right, self.bottom)

    def astuple(self) -> tuple[int, int, int, int]:
        return (self.left, self.top, self.width, self.height)

    def inside(self, img_w: int, img_h: int) -> bool:
        return self.left >= 0 and self.top >= 0 and self.right <= img_w and self.bottom <= img_h

    def intersect(self, other: "PixelBox") -> "PixelBox | None":
        left, top = max(self.left, other.left), max(self.top, other.top)
        right, bottom = min(self.right, other.right), min(self.bottom, other.bottom)
        if right <= left or bottom <= top:
            return None
        return PixelBox(left, top, right - left, bottom - top)

    def translate(self, dx: int, dy: int) -> "PixelBox":
        return PixelBox(self.left + dx, self.top + dy, self.width, self.height)


def round_half_away(v: float) -> int:
    return int(math.floor(v + 0.5)) if v >= 0 else -int(math.floor(-v + 0.5))


def map_to_original(p: NormPoint, v: Viewport) -> NormPoint:
    """Map a point predicted on the view ``v`` back to original-image coordinates."""
    x = v.x1 + (v.x2 - v.x1) * p.x
    y = v.y1 + (v.y2 - v.y1) * p.y
    # float rounding must not push the result past the viewport edge
    return NormPoint(min(max(x, v.x1), v.x2), min(max(y, v.y1), v.y2))


def to_pixels(p: NormPoint, width: int, height: int) -> PixelPoint:
    if width < 1 or height < 1:
        raise GeometryError(f"image dimensions must be positive, got {width}x{height}")
    x = min(max(round_half_away(width * p.x), 0), width - 1)
    y = min(max(round_half_away(height * p.y), 0), height - 1)
    return PixelPoint(x, y)


def patch_grid(width: int, height: int, rows: int, cols: int) -> list[PixelBox]:
    """Split an image into ``rows x cols`` disjoint tiles, row-major.

    Integer-division remainders go to the last row and column.
    """
    if rows < 1 or cols < 1:
        raise GeometryError(f"grid must be at least 1x1, got {rows}x{cols}")
    if width < cols or height < rows:
        raise GeometryError(f"{width}x{height} image too small for a {rows}x{cols} grid")
    tw, th = width // cols, height // rows
    boxes = []
    for r in range(rows):
        top = r * th
        h = height - top if r == rows - 1 else th
        for c in range(cols):
            left = c * tw
            w = width - left if c == cols - 1 else tw
            boxes.append(PixelBox(left, top, w, h))
    return boxes


def next_crop_size(
    width_t: int,
    height_t: int,
    rho: float,
    m: int,
    max_size: tuple[int, int] | None = None,
) -> tuple[int, int]:
    """Shrink the current view by ``rho`` without going below the context floor ``m``.

    ``max_size`` caps the result at the original image dimensions, which only
    matters when ``m`` is larger than the screenshot.
    """
    if not 0.0 < rho < 1.0:
        raise GeometryError(f"shrink ratio must lie in (0, 1), got {rho}")
    if m < 1:
        raise GeometryError(f"minimum crop size must be >= 1, got {m}")
    w = max(math.floor(rho * width_t), m)
    h = max(math.floor(rho * height_t), m)
    if max_size is not None:
        w, h = min(w, max_size[0]), min(h, max_size[1])
    return w, h


def _shift_axis(c: int, size: int, limit: int) -> tuple[int, int]:
    start = c - size // 2
    start = min(max(start, 0), limit - size)
    return start, size


def _clip_axis(c: int, size: int, limit: int) -> tuple[int, int]:
    start = c - size // 2
    end = start + size
    start, end = max(start, 0), min(end, limit)
    return start, end - start


def _shrink_axis(c: int, size: int, limit: int) -> tuple[int, int]:
    half = min(size // 2, c, limit - c)
    if half <= 0:
        # center on the first/last pixel: a one-pixel span is the only centered fit
        return min(c, limit - 1), 1
    return c - half, 2 * half


_AXIS_POLICIES = {
    BoundaryMode.SHIFT: _shift_axis,
    BoundaryMode.CLIP: _clip_axis,
    BoundaryMode.SHRINK: _shrink_axis,
}


def place_window(
    center: PixelPoint,
    w: int,
    h: int,
    img_w: int,
    img_h: int,
    mode: BoundaryMode | str = BoundaryMode.SHIFT,
) -> PixelBox:
    """Place a ``w x h`` crop window centered on ``center`` inside the image.

    shift keeps the size and slides the window back inside; clip intersects the
    centered window with the image; shrink keeps ``center`` at the midpoint and
    takes the largest window that fits.
    """
    mode = BoundaryMode(mode)
    if not (1 <= w <= img_w and 1 <= h <= img_h):
        raise GeometryError(f"window {w}x{h} does not fit image {img_w}x{img_h}")
    if not (0 <= center.x < img_w and 0 <= center.y < img_h):
        raise GeometryError(f"center {center} outside image {img_w}x{img_h}")
    axis = _AXIS_POLICIES[mode]
    left, width = axis(center.x, w, img_w)
    top, height = axis(center.y, h, img_h)
    return PixelBox(left, top, width, height)


def viewport_from_box(box: PixelBox, img_w: int, img_h: int) -> Viewport:
    if not box.inside(img_w, img_h):
        raise GeometryError(f"box {box.astuple()} is not inside {img_w}x{img_h}")
    return Viewport(box.left / img_w, box.top / img_h, box.right / img_w, box.bottom / img_h)


def point_in_box(p: PixelPoint, box: PixelBox) -> bool:
    return box.left <= p.x < box.right and box.top <= p.y < box.bottom
