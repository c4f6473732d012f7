import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zoomground.geometry import BoundaryMode, PixelBox, PixelPoint, map_to_original, point_in_box, to_pixels
from zoomground.grounder import (
    CallableGrounder,
    ConstantGrounder,
    NoTarget,
    OracleGrounder,
    OracleNoiseModel,
    ParseFailure,
    Point,
)
from zoomground.imaging import VirtualImage
from zoomground.pipeline import (
    DEPTH_REACHED,
    MIN_CROP_REACHED,
    NO_TARGET,
    ZoomConfig,
    crop_sizes,
    pre_zoom,
    result_from_dict,
    result_to_dict,
    schedule_equivalent_one_step,
    select_tile,
    zoom_click,
)


class TestConfig:
    def test_defaults(self):
        c = ZoomConfig()
        assert (c.depth, c.rho, c.min_crop, c.grid, c.tau) == (3, (0.5,), 768, (2, 2), 50.0)
        assert c.boundary is BoundaryMode.CLIP and c.prezoom

    @pytest.mark.parametrize(
        "kw",
        [{"depth": 0}, {"rho": (1.0,)}, {"rho": (0.5, 0.5)}, {"min_crop": 0}, {"tau": -1}, {"grid": (0, 2)}],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ZoomConfig(**({"depth": 4} if kw == {"rho": (0.5, 0.5)} else {}) | kw)

    def test_round_trip(self):
        c = ZoomConfig(depth=4, rho=(0.5, 0.4, 0.3), boundary="shrink", prezoom=False)
        assert ZoomConfig.from_dict(c.to_dict()) == c
        assert c.digest() == ZoomConfig.from_dict(c.to_dict()).digest()


class TestSelectTile:
    G = PixelPoint(500, 500)
    TILES = [PixelPoint(510, 505), PixelPoint(900, 100), PixelPoint(100, 900), PixelPoint(480, 520)]

    def test_worked_example(self):
        chosen, d = select_tile(self.G, self.TILES, 50)
        assert chosen == 0
        assert [round(x, 1) for x in d] == [11.2, 565.7, 565.7, 28.3]

    def test_tight_threshold_keeps_global(self):
        assert select_tile(self.G, self.TILES, 5)[0] is None

    def test_failed_tiles_excluded(self):
        chosen, d = select_tile(self.G, [None, None, None, PixelPoint(480, 520)], 50)
        assert chosen == 3 and d[:3] == [None, None, None]

    def test_tie_goes_to_lowest_index(self):
        assert select_tile(self.G, [PixelPoint(510, 500), PixelPoint(490, 500)], 50)[0] == 0

    def test_strict_threshold(self):
        assert select_tile(self.G, [PixelPoint(550, 500)], 50)[0] is None
        assert select_tile(self.G, [PixelPoint(550, 500)], 50.0001)[0] == 0

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.one_of(st.none(), st.tuples(st.integers(0, 999), st.integers(0, 999))), min_size=1, max_size=9),
        st.floats(0, 1500),
        st.floats(0, 1500),
    )
    def test_argmin_and_tau_monotone(self, tiles, t1, t2):
        tiles = [None if t is None else PixelPoint(*t) for t in tiles]
        lo, hi = sorted((t1, t2))
        c_lo, d = select_tile(self.G, tiles, lo)
        c_hi, _ = select_tile(self.G, tiles, hi)
        valid = [x for x in d if x is not None]
        if c_hi is not None:
            assert d[c_hi] == min(valid)
        # raising tau only ever switches global -> tile, never tile -> other tile
        if c_lo is not None:
            assert c_hi == c_lo


def scripted(points: dict):
    """Grounder answering per crop region; missing regions fail."""

    def fn(q):
        key = q.region.astuple()
        out = points.get(key)
        if out is None:
            return NoTarget("scripted")
        if isinstance(out, (NoTarget, ParseFailure)):
            return out
        return Point(*out)

    return CallableGrounder(fn, "scripted")


class TestPreZoom:
    IMG = VirtualImage(1000, 1000)

    def test_tile_chosen(self):
        g = scripted({
            (0, 0, 1000, 1000): (0.5, 0.5),
            (500, 500, 500, 500): (0.02, 0.01),  # -> (510, 505)
            (0, 0, 500, 500): (0.2, 0.2),
        })
        start, rec = pre_zoom(self.IMG, "x", g, (2, 2), 50)
        assert start == PixelPoint(510, 505) and rec.chosen == 3
        assert rec.tiles[0].distance == pytest.approx(math.hypot(400, 400))
        assert rec.tiles[1].px is None and rec.tiles[1].distance is None

    def test_global_failure_falls_back_to_central_tile(self):
        g = scripted({(0, 0, 500, 500): (0.1, 0.1), (500, 500, 500, 500): (0.1, 0.1)})
        start, rec = pre_zoom(self.IMG, "x", g, (2, 2), 50)
        assert rec.fallback == 3 and start == PixelPoint(550, 550)

    def test_everything_fails(self):
        start, rec = pre_zoom(self.IMG, "x", ConstantGrounder(None), (2, 2), 50)
        assert start is None and rec.chosen is None and rec.fallback is None

    def test_everything_fails_in_pipeline(self):
        r = zoom_click(self.IMG, "x", ConstantGrounder(None), ZoomConfig())
        assert r.reason == NO_TARGET and r.final_click is None and len(r.rounds) == 1

    def test_out_of_tile_prediction_is_clamped(self):
        g = CallableGrounder(lambda q: Point(1.0, 1.0) if q.region.width == 500 else Point(0.5, 0.5))
        _, rec = pre_zoom(self.IMG, "x", g, (2, 2), 50)
        assert all(t.px is not None and t.box.left <= t.px.x < t.box.right for t in rec.tiles)
        assert rec.tiles[0].px == PixelPoint(499, 499) and rec.tiles[0].clamped

    def test_parallel_matches_serial(self):
        o = OracleGrounder({"s": PixelBox(300, 600, 20, 20)}, OracleNoiseModel(sigma_ratio=0.03, seed=2))
        a = pre_zoom(self.IMG, "x", o, (2, 2), 50, sample_id="s")
        b = pre_zoom(self.IMG, "x", o, (2, 2), 50, sample_id="s", workers=5)
        assert a == b


class TestZoomClick:
    def test_4k_schedule(self):
        for mode in BoundaryMode:
            r = zoom_click(VirtualImage(3840, 2160), "x", ConstantGrounder(), ZoomConfig(boundary=mode))
            assert crop_sizes(r) == [(3840, 2160), (1920, 1080), (960, 768)]
            assert r.reason == DEPTH_REACHED

    def test_noiseless_oracle_hits_center(self):
        truth = PixelBox(1200, 300, 40, 20)
        g = OracleGrounder({"s": truth}, OracleNoiseModel())
        for cfg in [ZoomConfig(), ZoomConfig(prezoom=False, boundary="shrink", depth=5, min_crop=64)]:
            r = zoom_click(VirtualImage(1920, 1080), "x", g, cfg, sample_id="s")
            assert r.final_click == PixelPoint(1220, 310)
            assert all(point_in_box(c, truth) for c in r.per_round_clicks)

    def test_parse_failure_at_round_two(self):
        def fn(q):
            return Point(0.25, 0.25) if q.round_index == 1 else ParseFailure("garbage")

        r = zoom_click(VirtualImage(2000, 2000), "x", CallableGrounder(fn), ZoomConfig(prezoom=False))
        assert r.reason == NO_TARGET and len(r.rounds) == 2
        assert r.final_click == PixelPoint(500, 500) == r.per_round_clicks[1]

    def test_min_crop_termination(self):
        r = zoom_click(VirtualImage(1600, 1600), "x", ConstantGrounder(), ZoomConfig(depth=4, prezoom=False))
        # 1600 -> 800 (> 768, continue) -> 768 (floor) -> stop
        assert crop_sizes(r) == [(1600, 1600), (800, 800), (768, 768)]
        assert r.reason == MIN_CROP_REACHED

    def test_small_image_stops_after_first_round(self):
        r = zoom_click(VirtualImage(640, 480), "x", ConstantGrounder(), ZoomConfig(prezoom=False))
        assert len(r.rounds) == 1 and r.reason == MIN_CROP_REACHED

    def test_depth_one(self):
        r = zoom_click(VirtualImage(640, 480), "x", ConstantGrounder(), ZoomConfig(depth=1, prezoom=False))
        assert r.reason == DEPTH_REACHED

    def test_trace_round_trip(self):
        g = OracleGrounder({"s": PixelBox(10, 10, 30, 30)}, OracleNoiseModel(sigma_ratio=0.1, seed=4))
        r = zoom_click(VirtualImage(3000, 2000), "x", g, ZoomConfig(), sample_id="s")
        assert result_from_dict(result_to_dict(r)) == r


class TestScheduleEquivalence:
    def test_two_halves(self):
        c = schedule_equivalent_one_step(ZoomConfig(depth=3, rho=(0.5, 0.5)))
        assert c.rho == (0.25,) and c.depth == 2

    def test_single_step_unchanged(self):
        c = ZoomConfig(depth=2, rho=(0.5,))
        assert schedule_equivalent_one_step(c) == c

    def test_product(self):
        c = schedule_equivalent_one_step(ZoomConfig(depth=3, rho=(0.3, 0.5)))
        assert c.rho == (pytest.approx(0.15),) and c.depth == 2


# -- properties ---------------------------------------------------------------


@st.composite
def scenarios(draw):
    w = draw(st.integers(200, 5000))
    h = draw(st.integers(200, 5000))
    tw = draw(st.integers(1, min(w, 200)))
    th = draw(st.integers(1, min(h, 200)))
    truth = PixelBox(draw(st.integers(0, w - tw)), draw(st.integers(0, h - th)), tw, th)
    depth = draw(st.integers(1, 5))
    rho = tuple(draw(st.lists(st.floats(0.1, 0.9), min_size=1, max_size=1))) if draw(st.booleans()) else tuple(
        draw(st.lists(st.floats(0.1, 0.9), min_size=max(depth - 1, 1), max_size=max(depth - 1, 1)))
    )
    cfg = ZoomConfig(
        depth=depth,
        rho=rho,
        min_crop=draw(st.integers(16, 1500)),
        prezoom=draw(st.booleans()),
        boundary=draw(st.sampled_from(list(BoundaryMode))),
        tau=draw(st.floats(0, 300)),
    )
    noise = OracleNoiseModel(
        sigma_ratio=draw(st.floats(0, 0.3)),
        miss_rate=draw(st.sampled_from([0.0, 0.1])),
        seed=draw(st.integers(0, 2**31)),
        global_bias_ratio=draw(st.sampled_from([0.0, 0.03])),
    )
    return VirtualImage(w, h), truth, cfg, noise


@settings(max_examples=150, deadline=None)
@given(scenarios())
def test_trace_invariants(sc):
    img, truth, cfg, noise = sc
    g = OracleGrounder({"s": truth}, noise)
    r = zoom_click(img, "x", g, cfg, sample_id="s")
    W, H = img.size
    assert r.rounds and len(r.per_round_clicks) == len(r.rounds) <= cfg.depth
    prev = None
    for rec in r.rounds:
        # drift-free: crops address the original image, mapping re-derives bit-exactly
        assert rec.crop_box.inside(W, H)
        if isinstance(rec.raw, Point) and rec.index > 1:
            assert map_to_original(rec.raw.norm, rec.viewport) == rec.mapped
            assert to_pixels(rec.mapped, W, H) == rec.mapped_px
            assert rec.viewport.contains(rec.mapped)
        if prev is not None:
            assert rec.viewport.area <= prev.viewport.area
            assert rec.crop_box.width <= prev.crop_box.width and rec.crop_box.height <= prev.crop_box.height
            if cfg.boundary is BoundaryMode.SHIFT:
                assert min(rec.crop_box.width, rec.crop_box.height) >= min(cfg.min_crop, W, H)
        prev = rec
    if r.prezoom is not None:
        pz = r.prezoom
        valid = [d for d in pz.distances if d is not None]
        assert (pz.chosen is not None) == (pz.global_px is not None and bool(valid) and min(valid) < pz.tau)
    # determinism
    assert zoom_click(img, "x", g, cfg, sample_id="s") == r


@settings(max_examples=100, deadline=None)
@given(scenarios())
def test_per_depth_clicks_match_shallower_runs(sc):
    img, truth, cfg, noise = sc
    g = OracleGrounder({"s": truth}, noise)
    full = zoom_click(img, "x", g, cfg, sample_id="s")
    for d in range(1, cfg.depth + 1):
        short = zoom_click(img, "x", g, ZoomConfig(**{**cfg.__dict__, "depth": d}), sample_id="s")
        expected = full.per_round_clicks[min(d, len(full.per_round_clicks)) - 1]
        assert short.final_click == expected


def test_shift_mode_crop_equals_schedule():
    img = VirtualImage(4000, 3000)
    cfg = ZoomConfig(depth=4, rho=(0.5,), min_crop=300, prezoom=False, boundary="shift")
    g = ConstantGrounder((0.01, 0.99))
    r = zoom_click(img, "x", g, cfg)
    assert crop_sizes(r) == [(4000, 3000), (2000, 1500), (1000, 750), (500, 375)]
