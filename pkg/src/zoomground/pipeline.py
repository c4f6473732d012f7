"""Test-time zoom for point-predicting grounding models.

Round 1 is either a single full-screenshot prediction or a patch/global
agreement test (pre-zoom). Every later round crops a window around the
current click, shrunk by the schedule but never below the minimum crop size,
placed directly in original-image pixels so that mapping errors cannot
accumulate. The run stops at the configured depth, after a floor-sized crop,
or as soon as the model reports nothing.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Sequence

from .geometry import (
    BoundaryMode,
    NormPoint,
    PixelBox,
    PixelPoint,
    Viewport,
    map_to_original,
    next_crop_size,
    patch_grid,
    place_window,
    to_pixels,
    viewport_from_box,
)
from .grounder.base import (
    Grounder,
    GroundingOutcome,
    GroundingQuery,
    NoTarget,
    Point,
    outcome_from_dict,
    outcome_to_dict,
)

DEPTH_REACHED = "depth-reached"
MIN_CROP_REACHED = "min-crop-reached"
NO_TARGET = "no-target"


@dataclass(frozen=True)
class ZoomConfig:
    depth: int = 3
    rho: tuple[float, ...] = (0.5,)
    min_crop: int = 768
    prezoom: bool = True
    grid: tuple[int, int] = (2, 2)
    tau: float = 50.0
    boundary: BoundaryMode = BoundaryMode.CLIP

    def __post_init__(self):
        object.__setattr__(self, "rho", tuple(float(r) for r in self.rho))
        object.__setattr__(self, "grid", tuple(int(g) for g in self.grid))
        object.__setattr__(self, "boundary", BoundaryMode(self.boundary))
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if not self.rho or not all(0.0 < r < 1.0 for r in self.rho):
            raise ValueError(f"every shrink ratio must lie in (0, 1), got {self.rho}")
        if len(self.rho) != 1 and len(self.rho) < self.depth - 1:
            raise ValueError(f"shrink schedule needs 1 or >= {self.depth - 1} entries, got {len(self.rho)}")
        if self.min_crop < 1:
            raise ValueError(f"min_crop must be >= 1, got {self.min_crop}")
        if self.tau < 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if len(self.grid) != 2 or min(self.grid) < 1:
            raise ValueError(f"grid must be rows x cols with both >= 1, got {self.grid}")

    def rho_for_step(self, step: int) -> float:
        """Shrink ratio applied when going from round ``step`` to ``step + 1``."""
        return self.rho[0] if len(self.rho) == 1 else self.rho[step - 1]

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["rho"] = list(self.rho)
        d["grid"] = list(self.grid)
        d["boundary"] = self.boundary.value
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ZoomConfig":
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class RoundRecord:
    index: int
    viewport: Viewport
    crop_box: PixelBox
    raw: GroundingOutcome
    mapped: NormPoint | None
    mapped_px: PixelPoint | None
    wall_ms: float = field(default=0.0, compare=False)


@dataclass
class TileRecord:
    box: PixelBox
    outcome: GroundingOutcome
    mapped: NormPoint | None = None
    px: PixelPoint | None = None
    distance: float | None = None
    # prediction landed outside its own tile and was pulled back in
    clamped: bool = False


@dataclass
class PreZoomRecord:
    global_outcome: GroundingOutcome
    global_mapped: NormPoint | None
    global_px: PixelPoint | None
    tiles: list[TileRecord]
    tau: float
    chosen: int | None = None
    fallback: int | None = None
    start: NormPoint | None = None
    start_px: PixelPoint | None = None

    @property
    def distances(self) -> list[float | None]:
        return [t.distance for t in self.tiles]


@dataclass
class ZoomResult:
    final_click: PixelPoint | None
    reason: str
    rounds: list[RoundRecord]
    per_round_clicks: list[PixelPoint | None]
    image_size: tuple[int, int]
    prezoom: PreZoomRecord | None = None
    config: dict[str, Any] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.final_click is not None


def _query(image, box: PixelBox, instruction: str, size, sample_id: str, round_index: int) -> GroundingQuery:
    return GroundingQuery(
        image=image.crop(box.xyxy()),
        width=box.width,
        height=box.height,
        instruction=instruction,
        region=box,
        source_size=size,
        sample_id=sample_id,
        round_index=round_index,
    )


def _clamp_into(px: PixelPoint, box: PixelBox) -> tuple[PixelPoint, bool]:
    x = min(max(px.x, box.left), box.right - 1)
    y = min(max(px.y, box.top), box.bottom - 1)
    return PixelPoint(x, y), (x, y) != (px.x, px.y)


def select_tile(
    global_px: PixelPoint, tile_px: Sequence[PixelPoint | None], tau: float
) -> tuple[int | None, list[float | None]]:
    """Index of the tile prediction agreeing with the global one, plus all distances.

    Failed tiles (``None``) are skipped. The nearest tile wins if strictly
    closer than ``tau``; ties go to the lowest index.
    """
    dists = [None if p is None else global_px.distance(p) for p in tile_px]
    valid = [i for i, d in enumerate(dists) if d is not None]
    if not valid:
        return None, dists
    best = min(valid, key=lambda i: dists[i])  # min() keeps the first of equal keys
    return (best if dists[best] < tau else None), dists


def pre_zoom(
    image,
    instruction: str,
    grounder: Grounder,
    grid: tuple[int, int] = (2, 2),
    tau: float = 50.0,
    *,
    sample_id: str = "",
    workers: int = 1,
) -> tuple[PixelPoint | None, PreZoomRecord]:
    """Pick the round-1 click from one global and ``rows*cols`` tile predictions.

    The tile prediction closest to the global one wins if it is strictly
    within ``tau`` pixels; otherwise the global prediction is kept. Returns
    ``None`` as the point when every call fails.
    """
    W, H = image.size
    full = PixelBox(0, 0, W, H)
    tiles = patch_grid(W, H, *grid)
    boxes = [full, *tiles]

    def call(box: PixelBox) -> GroundingOutcome:
        return grounder.ground(_query(image, box, instruction, (W, H), sample_id, 1))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(call, boxes))
    else:
        outcomes = [call(b) for b in boxes]

    g_out = outcomes[0]
    g_mapped = g_px = None
    if isinstance(g_out, Point):
        g_mapped = g_out.norm
        g_px = to_pixels(g_mapped, W, H)

    records = []
    for box, out in zip(tiles, outcomes[1:]):
        rec = TileRecord(box, out)
        if isinstance(out, Point):
            mapped = map_to_original(out.norm, viewport_from_box(box, W, H))
            px, pulled = _clamp_into(to_pixels(mapped, W, H), box)
            rec.clamped = pulled or out.clamped
            rec.mapped = NormPoint(px.x / W, px.y / H) if pulled else mapped
            rec.px = px
            if g_px is not None:
                rec.distance = g_px.distance(px)
        records.append(rec)

    record = PreZoomRecord(g_out, g_mapped, g_px, records, tau)
    valid = [i for i, r in enumerate(records) if r.px is not None]
    if g_px is not None:
        record.start, record.start_px = g_mapped, g_px
        record.chosen, _ = select_tile(g_px, [r.px for r in records], tau)
        if record.chosen is not None:
            best = records[record.chosen]
            record.start, record.start_px = best.mapped, best.px
    elif valid:
        cx, cy = W / 2.0, H / 2.0
        best = min(valid, key=lambda i: math.hypot(records[i].px.x - cx, records[i].px.y - cy))
        record.fallback = best
        record.start, record.start_px = records[best].mapped, records[best].px
    return record.start_px, record


def zoom_click(
    image,
    instruction: str,
    grounder: Grounder,
    config: ZoomConfig = ZoomConfig(),
    *,
    sample_id: str = "",
    prezoom_workers: int = 1,
) -> ZoomResult:
    W, H = image.size
    full = PixelBox(0, 0, W, H)
    v0 = Viewport.full()
    m = config.min_crop
    rounds: list[RoundRecord] = []
    clicks: list[PixelPoint | None] = []
    meta = config.to_dict()

    t0 = time.perf_counter()
    pz = None
    if config.prezoom:
        _, pz = pre_zoom(
            image, instruction, grounder, config.grid, config.tau, sample_id=sample_id, workers=prezoom_workers
        )
        # the chosen point is already in full-image coordinates, i.e. relative to V0
        raw = Point(pz.start.x, pz.start.y) if pz.start is not None else NoTarget("pre-zoom: every view failed")
    else:
        raw = grounder.ground(_query(image, full, instruction, (W, H), sample_id, 1))
    wall = (time.perf_counter() - t0) * 1000.0

    if not isinstance(raw, Point):
        rounds.append(RoundRecord(1, v0, full, raw, None, None, wall))
        return ZoomResult(None, NO_TARGET, rounds, [None], (W, H), pz, meta)

    cur = map_to_original(raw.norm, v0)
    cur_px = to_pixels(cur, W, H)
    rounds.append(RoundRecord(1, v0, full, raw, cur, cur_px, wall))
    clicks.append(cur_px)

    reason = DEPTH_REACHED
    cur_box = full
    if config.depth > 1 and W <= m and H <= m:
        return ZoomResult(cur_px, MIN_CROP_REACHED, rounds, clicks, (W, H), pz, meta)

    for t in range(2, config.depth + 1):
        w, h = next_crop_size(cur_box.width, cur_box.height, config.rho_for_step(t - 1), m, max_size=(W, H))
        # clip/shrink can leave a crop narrower than the floor; never grow the view back
        w, h = min(w, cur_box.width), min(h, cur_box.height)
        box = place_window(cur_px, w, h, W, H, config.boundary)
        view = viewport_from_box(box, W, H)

        t0 = time.perf_counter()
        out = grounder.ground(_query(image, box, instruction, (W, H), sample_id, t))
        wall = (time.perf_counter() - t0) * 1000.0

        if not isinstance(out, Point):
            rounds.append(RoundRecord(t, view, box, out, None, None, wall))
            clicks.append(cur_px)
            reason = NO_TARGET
            break
        cur = map_to_original(out.norm, view)
        cur_px = to_pixels(cur, W, H)
        rounds.append(RoundRecord(t, view, box, out, cur, cur_px, wall))
        clicks.append(cur_px)
        cur_box = box
        if t < config.depth and box.width <= m and box.height <= m:
            reason = MIN_CROP_REACHED
            break

    return ZoomResult(cur_px, reason, rounds, clicks, (W, H), pz, meta)


def schedule_equivalent_one_step(config: ZoomConfig) -> ZoomConfig:
    """Collapse all shrink steps into one step whose ratio is their product.

    Turns e.g. two x0.5 zooms (depth 3) into a single x0.25 zoom (depth 2).
    """
    steps = config.depth - 1
    if steps <= 1:
        return config
    ratio = math.prod(config.rho_for_step(s) for s in range(1, steps + 1))
    return replace(config, depth=2, rho=(ratio,))


# -- serialization -----------------------------------------------------------


def _pt(p: PixelPoint | None):
    return None if p is None else [p.x, p.y]


def _npt(p: NormPoint | None):
    return None if p is None else [p.x, p.y]


def _from_pt(v) -> PixelPoint | None:
    return None if v is None else PixelPoint(*v)


def _from_npt(v) -> NormPoint | None:
    return None if v is None else NormPoint(*v)


def result_to_dict(r: ZoomResult) -> dict[str, Any]:
    d: dict[str, Any] = {
        "final_click": _pt(r.final_click),
        "reason": r.reason,
        "image_size": list(r.image_size),
        "per_round_clicks": [_pt(c) for c in r.per_round_clicks],
        "rounds": [
            {
                "index": rr.index,
                "viewport": list(rr.viewport.astuple()),
                "crop_box": list(rr.crop_box.astuple()),
                "raw": outcome_to_dict(rr.raw),
                "mapped": _npt(rr.mapped),
                "mapped_px": _pt(rr.mapped_px),
                "wall_ms": rr.wall_ms,
            }
            for rr in r.rounds
        ],
        "prezoom": None,
        "config": r.config,
    }
    if r.prezoom is not None:
        pz = r.prezoom
        d["prezoom"] = {
            "global": outcome_to_dict(pz.global_outcome),
            "global_mapped": _npt(pz.global_mapped),
            "global_px": _pt(pz.global_px),
            "tiles": [
                {
                    "box": list(t.box.astuple()),
                    "outcome": outcome_to_dict(t.outcome),
                    "mapped": _npt(t.mapped),
                    "px": _pt(t.px),
                    "distance": t.distance,
                    "clamped": t.clamped,
                }
                for t in pz.tiles
            ],
            "tau": pz.tau,
            "chosen": pz.chosen,
            "fallback": pz.fallback,
            "start": _npt(pz.start),
            "start_px": _pt(pz.start_px),
        }
    return d


def result_from_dict(d: dict[str, Any]) -> ZoomResult:
    pz = None
    if d.get("prezoom") is not None:
        p = d["prezoom"]
        pz = PreZoomRecord(
            global_outcome=outcome_from_dict(p["global"]),
            global_mapped=_from_npt(p["global_mapped"]),
            global_px=_from_pt(p["global_px"]),
            tiles=[
                TileRecord(
                    PixelBox(*t["box"]),
                    outcome_from_dict(t["outcome"]),
                    _from_npt(t["mapped"]),
                    _from_pt(t["px"]),
                    t["distance"],
                    t["clamped"],
                )
                for t in p["tiles"]
            ],
            tau=p["tau"],
            chosen=p["chosen"],
            fallback=p["fallback"],
            start=_from_npt(p["start"]),
            start_px=_from_pt(p["start_px"]),
        )
    rounds = [
        RoundRecord(
            rr["index"],
            Viewport(*rr["viewport"]),
            PixelBox(*rr["crop_box"]),
            outcome_from_dict(rr["raw"]),
            _from_npt(rr["mapped"]),
            _from_pt(rr["mapped_px"]),
            rr["wall_ms"],
        )
        for rr in d["rounds"]
    ]
    return ZoomResult(
        final_click=_from_pt(d["final_click"]),
        reason=d["reason"],
        rounds=rounds,
        per_round_clicks=[_from_pt(c) for c in d["per_round_clicks"]],
        image_size=tuple(d["image_size"]),
        prezoom=pz,
        config=d.get("config", {}),
    )


def crop_sizes(result: ZoomResult) -> Sequence[tuple[int, int]]:
    return [(r.crop_box.width, r.crop_box.height) for r in result.rounds]
