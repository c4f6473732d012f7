"""Turn raw model text into a grounding outcome.

Both prompt protocols ask for *pixel* coordinates in the crop the model was
shown, so both parsers divide by the crop size. Values that look normalized
(e.g. ``0.4``) are deliberately not rescaled.
"""

from __future__ import annotations

import json
import math
import re

from .base import GroundingOutcome, ParseFailure, clamped_point

_BRACKET_GROUP = re.compile(r"\[([^\[\]]*)\]")
_NUMBER = re.compile(r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?")
_TOOL_CALL = re.compile(r"<tool_call>(.*?)(?:</tool_call>|$)", re.DOTALL)


def _check_dims(crop_w: int, crop_h: int) -> None:
    if crop_w < 1 or crop_h < 1:
        raise ValueError(f"crop dimensions must be positive, got {crop_w}x{crop_h}")


def _strict_numbers(group: str) -> list[float] | None:
    tokens = [t.strip() for t in re.split(r"[,\s]+", group.strip()) if t.strip()]
    if not tokens or not all(_NUMBER.fullmatch(t) for t in tokens):
        return None
    return [float(t) for t in tokens]


def parse_bbox_response(text: str, crop_w: int, crop_h: int) -> GroundingOutcome:
    """Read the first ``[x1, y1, x2, y2]`` group and return its center."""
    _check_dims(crop_w, crop_h)
    if not isinstance(text, str):
        return ParseFailure(repr(text))
    m = _BRACKET_GROUP.search(text)
    if m is None:
        return ParseFailure(text)
    nums = _strict_numbers(m.group(1))
    if nums is None or len(nums) != 4:
        return ParseFailure(text)
    if not all(math.isfinite(v) for v in nums):
        return ParseFailure(text)
    x1, y1, x2, y2 = nums
    return clamped_point((x1 + x2) / 2.0 / crop_w, (y1 + y2) / 2.0 / crop_h)


def _coordinate(obj) -> list | None:
    if not isinstance(obj, dict):
        return None
    args = obj.get("arguments", obj.get("parameters"))
    if isinstance(args, str):
        try:
            args = json.loads(args)
        except json.JSONDecodeError:
            return None
    if isinstance(args, dict) and "coordinate" in args:
        return args["coordinate"]
    return None


def parse_toolcall_response(text: str, crop_w: int, crop_h: int) -> GroundingOutcome:
    """Read ``arguments.coordinate`` from the first ``<tool_call>`` block."""
    _check_dims(crop_w, crop_h)
    if not isinstance(text, str):
        return ParseFailure(repr(text))
    m = _TOOL_CALL.search(text)
    if m is None:
        return ParseFailure(text)
    body = m.group(1).strip()
    # tolerate a fenced json block inside the tags
    body = re.sub(r"^```(?:json)?\s*|\s*```$", "", body)
    try:
        obj = json.loads(body)
    except json.JSONDecodeError:
        return ParseFailure(text)
    coord = _coordinate(obj)
    if (
        not isinstance(coord, (list, tuple))
        or len(coord) != 2
        or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in coord)
    ):
        return ParseFailure(text)
    try:
        x, y = coord[0] / crop_w, coord[1] / crop_h
    except OverflowError:
        return ParseFailure(text)
    if not (math.isfinite(x) and math.isfinite(y)):
        return ParseFailure(text)
    return clamped_point(x, y)


PARSERS = {
    "bbox-text": parse_bbox_response,
    "tool-call": parse_toolcall_response,
}
