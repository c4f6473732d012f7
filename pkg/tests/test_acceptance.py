"""Acceptance suite. Each test carries a ``criterion`` marker; the terminal
summary prints one PASS/FAIL line per criterion."""

import itertools
import json
import math
import os
import random
import signal
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from zoomground import bench
from zoomground.bench import (
    CATEGORIES,
    CORRECT_PAIR,
    ERROR_PAIR,
    Category,
    ConsecutivePair,
    CorrectnessSequence,
    calibrate_threshold,
    categorize,
)
from zoomground.geometry import (
    BoundaryMode,
    NormPoint,
    Viewport,
    map_to_original,
    patch_grid,
    place_window,
    to_pixels,
)
from zoomground.grounder import ConstantGrounder, OracleGrounder, OracleNoiseModel, Point
from zoomground.grounder.parsing import PARSERS
from zoomground.harness import aggregate, evaluate_sample, run_eval
from zoomground.imaging import VirtualImage
from zoomground.pipeline import DEPTH_REACHED, ZoomConfig, crop_sizes, zoom_click
from zoomground.synthetic import make_samples, truths

criterion = pytest.mark.criterion


# -- 1 -------------------------------------------------------------------------


@criterion(1, "geometry property suite, 10,000 randomized cases in < 5 s")
def test_geometry_properties(record):
    rng = np.random.default_rng(1)
    n = 10_000
    start = time.perf_counter()
    for _ in range(n):
        # round trip: a view-relative point maps inside its viewport
        x1, x2 = sorted(rng.uniform(0, 1, 2))
        y1, y2 = sorted(rng.uniform(0, 1, 2))
        if x1 == x2 or y1 == y2:
            continue
        v = Viewport(x1, y1, x2, y2)
        p = map_to_original(NormPoint(*rng.uniform(0, 1, 2)), v)
        assert v.x1 <= p.x <= v.x2 and v.y1 <= p.y <= v.y2

        # containment: pixel conversion addresses a valid pixel
        W, H = (int(d) for d in rng.integers(1, 8000, 2))
        px = to_pixels(p, W, H)
        assert 0 <= px.x < W and 0 <= px.y < H

        # boundary modes
        w, h = int(rng.integers(1, W + 1)), int(rng.integers(1, H + 1))
        for mode in BoundaryMode:
            box = place_window(px, w, h, W, H, mode)
            assert box.inside(W, H) and box.width <= w and box.height <= h
            if mode is BoundaryMode.SHIFT:
                assert (box.width, box.height) == (w, h)
            elif mode is BoundaryMode.SHRINK:
                assert abs((box.left + box.right) / 2 - px.x) <= 1 and abs((box.top + box.bottom) / 2 - px.y) <= 1

        # grid partition
        rows, cols = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        if W >= cols and H >= rows:
            tiles = patch_grid(W, H, rows, cols)
            assert sum(t.width * t.height for t in tiles) == W * H
            assert all(t.inside(W, H) for t in tiles)
            assert all(a.intersect(b) is None for a, b in itertools.combinations(tiles, 2))
    elapsed = time.perf_counter() - start
    record(f"{n} cases in {elapsed:.2f} s")
    assert elapsed < 5.0


# -- 2 -------------------------------------------------------------------------


@criterion(2, "crop schedule 3840x2160 -> 1920x1080 -> 960x768, depth-reached")
def test_crop_schedule(record):
    for mode in BoundaryMode:
        for prezoom in (True, False):
            cfg = ZoomConfig(depth=3, rho=(0.5,), min_crop=768, boundary=mode, prezoom=prezoom)
            r = zoom_click(VirtualImage(3840, 2160), "x", ConstantGrounder(), cfg)
            assert crop_sizes(r) == [(3840, 2160), (1920, 1080), (960, 768)]
            assert r.reason == DEPTH_REACHED
    record("all boundary modes, pre-zoom on/off")


# -- 3 -------------------------------------------------------------------------


@criterion(3, "noiseless oracle end-to-end on 200 samples: accuracy 1.000 everywhere, < 60 s")
def test_noiseless_end_to_end(tmp_path, record):
    start = time.perf_counter()
    ds = make_samples(100, 3840, 2160, seed=31) + make_samples(100, 1920, 1080, seed=32, prefix="hd")
    g = OracleGrounder(truths(ds), OracleNoiseModel())
    runs = 0
    for mode in BoundaryMode:
        for prezoom in (True, False):
            cfg = ZoomConfig(boundary=mode, prezoom=prezoom)
            t = run_eval(ds, g, cfg, tmp_path / f"{mode.value}-{prezoom}", parallelism=4, group_by=["domain", "kind"])
            assert t.overall.n == 200
            for row in t.rows:
                assert row.curve == [1.0, 1.0, 1.0] and row.accuracy == 1.0
            runs += 1
    elapsed = time.perf_counter() - start
    record(f"{runs} configs, {elapsed:.1f} s")
    assert elapsed < 60


# -- 4 -------------------------------------------------------------------------

# seeded Monte-Carlo goldens: correct counts out of 500 at depths 1, 2, 3
DEPTH_GOLDEN = (10, 33, 136)


@criterion(4, "depth 3 beats depth 1 by >= 20 pp under sigma_ratio=0.05")
def test_depth_improvement(record):
    ds = make_samples(500, 1920, 1080, target_frac=0.01, seed=2024)
    g = OracleGrounder(truths(ds), OracleNoiseModel(sigma_ratio=0.05, miss_rate=0.0, seed=7))
    cfg = ZoomConfig(depth=3, rho=(0.5,), min_crop=256, prezoom=False, boundary=BoundaryMode.SHIFT)
    results = [evaluate_sample(s, g, cfg) for s in ds]
    curve = aggregate(results).overall.curve
    counts = tuple(round(a * 500) for a in curve)
    gain = curve[2] - curve[0]
    record(f"depth curve {', '.join(f'{a:.3f}' for a in curve)}; gain {100 * gain:.1f} pp")
    assert counts == DEPTH_GOLDEN
    assert gain >= 0.20


# -- 5 -------------------------------------------------------------------------

# seeded goldens: depth-2 correct counts out of 500 with / without pre-zoom
PREZOOM_GOLDEN = (328, 255)


@criterion(5, "pre-zoom beats no pre-zoom at depth 2 under a biased global oracle")
def test_prezoom_benefit(record):
    ds = make_samples(500, 1920, 1080, target_frac=0.01, seed=2025)
    noise = OracleNoiseModel(sigma_ratio=0.01, miss_rate=0.2, seed=11, global_bias_ratio=0.03)
    g = OracleGrounder(truths(ds), noise)
    on = [evaluate_sample(s, g, ZoomConfig(depth=2, prezoom=True, tau=50)) for s in ds]
    off = [evaluate_sample(s, g, ZoomConfig(depth=2, prezoom=False, tau=50)) for s in ds]
    n_on, n_off = sum(r.final_correct for r in on), sum(r.final_correct for r in off)
    chosen = sum(r.result.prezoom.chosen is not None for r in on)
    fallback = sum(r.result.prezoom.fallback is not None for r in on)
    record(
        f"{n_on / 500:.3f} vs {n_off / 500:.3f}, margin {100 * (n_on - n_off) / 500:+.1f} pp; "
        f"tile chosen {chosen}, global-failure fallback {fallback}"
    )
    assert (n_on, n_off) == PREZOOM_GOLDEN
    assert n_on > n_off


# -- 6 -------------------------------------------------------------------------


@criterion(6, "categorization is a partition; worked examples; monotone refinement")
def test_categorization(record):
    seen = {}
    for bits in itertools.product([0, 1], repeat=4):
        cat = categorize(CorrectnessSequence.of(*bits))
        assert sum(cat is c for c in CATEGORIES) == 1
        seen[bits] = cat
    assert len(seen) == 16 and set(seen.values()) == set(CATEGORIES)

    examples = {
        (1, 1, 1, 1): Category.EASY_NORMAL,
        (1, 0, 1, 1): Category.EASY_MISLEAD,
        (0, 0, 1, 1): Category.HARD_NORMAL,
        (0, 1, 0, 0): Category.HARD_MISLEAD,
        (0, 0, 0, 0): Category.HARD_EST,
    }
    for bits, cat in examples.items():
        assert seen[bits] is cat

    flips = 0
    for bits, cat in seen.items():
        for i in range(4):
            if bits[i] == 0:
                after = seen[bits[:i] + (1,) + bits[i + 1 :]]
                flips += 1
                if cat.value.startswith("easy"):
                    assert after.value.startswith("easy")
    assert flips == 32
    # the criterion counts 16 sequences x 4 positions; positions already at 1 are no-op flips
    record(f"16 sequences, {flips} effective 0->1 flips of 64 positions")


# -- 7 -------------------------------------------------------------------------


def brute_force(correct, error, step=0.25):
    """Smallest optimal threshold over a fine grid that hits every piece."""
    hi = max(max(correct), max(error)) + 1
    grid = np.arange(0, hi + step, step)
    c, e = np.array(correct), np.array(error)
    acc = ((c[None, :] < grid[:, None]).sum(1) + (e[None, :] >= grid[:, None]).sum(1)) / (len(c) + len(e))
    best = int(np.argmax(acc))
    return float(grid[best]), float(acc[best])


@criterion(7, "threshold calibration equals brute force on 1,000 random pair sets")
def test_calibration_oracle(record):
    rng = np.random.default_rng(7)
    for _ in range(1000):
        # integer distances leave at least one grid point inside every decision interval
        n_c, n_e = int(rng.integers(1, 25)), int(rng.integers(1, 25))
        scale = int(rng.integers(5, 300))
        correct = rng.integers(0, scale, n_c).tolist()
        error = rng.integers(0, scale * 2, n_e).tolist()
        pairs = [ConsecutivePair(d, CORRECT_PAIR) for d in correct] + [ConsecutivePair(d, ERROR_PAIR) for d in error]
        cal = calibrate_threshold(pairs)
        tau_bf, acc_bf = brute_force(correct, error)
        assert cal.accuracy == acc_bf
        # same decision boundary: both thresholds classify every pair identically
        everything = np.array(correct + error)
        assert np.array_equal(everything < cal.tau, everything < tau_bf)

    for _ in range(200):
        correct = rng.uniform(0, 50, int(rng.integers(1, 20)))
        error = rng.uniform(50.5, 400, int(rng.integers(1, 20)))
        pairs = [ConsecutivePair(d, CORRECT_PAIR) for d in correct] + [ConsecutivePair(d, ERROR_PAIR) for d in error]
        cal = calibrate_threshold(pairs)
        assert cal.accuracy == 1.0 and correct.max() < cal.tau < error.min()

    record(
        f"1000 random + 200 separable sets; reference optimum {bench.REFERENCE_TAU_PX} px / "
        f"{100 * bench.REFERENCE_ACCURACY:.1f}% not reproducible without the original traces"
    )


# -- 8 -------------------------------------------------------------------------


def _cli(*args):
    return [sys.executable, "-m", "zoomground", *map(str, args)]


def _lines(path: Path) -> int:
    try:
        return path.read_bytes().count(b"\n")
    except FileNotFoundError:
        return 0


@criterion(8, "killed and resumed eval gives byte-identical metrics (3 random kill points)")
def test_resume_after_kill(tmp_path, record):
    n = 40
    ds_path = tmp_path / "ds.jsonl"
    subprocess.run(_cli("synth", ds_path, "-n", n, "--seed", 8), check=True, capture_output=True)
    common = ["--dataset", ds_path, "--grounder", "oracle", "--sigma-ratio", 0.05, "--miss-rate", 0.05,
              "--seed", 3, "--parallelism", 2]
    env = dict(os.environ, PYTHONUNBUFFERED="1")

    ref = tmp_path / "ref"
    subprocess.run(_cli("eval", *common, "--run-dir", ref), check=True, capture_output=True, env=env)

    rng = random.Random(2024)
    kill_points = sorted(rng.sample(range(3, n - 3), 3))
    for k in kill_points:
        run_dir = tmp_path / f"kill{k}"
        proc = subprocess.Popen(
            _cli("eval", *common, "--run-dir", run_dir, "--latency", 0.01),
            stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL, env=env,
        )
        deadline = time.time() + 60
        while _lines(run_dir / "results.jsonl") < k and proc.poll() is None and time.time() < deadline:
            time.sleep(0.002)
        time.sleep(rng.uniform(0, 0.02))  # land mid-sample, possibly mid-write
        interrupted = proc.poll() is None
        proc.send_signal(signal.SIGKILL)
        proc.wait()
        assert interrupted, "run finished before the kill point"
        done = _lines(run_dir / "results.jsonl")
        assert done < n
        subprocess.run(_cli("eval", *common, "--run-dir", run_dir), check=True, capture_output=True, env=env)
        for name in ("metrics.csv", "depth_curve.csv", "metrics.json"):
            assert (run_dir / name).read_bytes() == (ref / name).read_bytes(), name
        logged = [json.loads(line)["sample_id"] for line in (run_dir / "results.jsonl").read_text().splitlines()]
        assert sorted(logged) == sorted(set(logged)) and len(logged) == n
        record(f"killed after {done}/{n}")


# -- 9 -------------------------------------------------------------------------

GOLDENS = json.loads((Path(__file__).parent / "data" / "parser_goldens.json").read_text())


@criterion(9, "parser goldens, >= 20 recorded responses per protocol")
def test_parser_goldens(record):
    counts = {}
    for protocol, cases in GOLDENS.items():
        parse = PARSERS[protocol]
        for case in cases:
            out = parse(case["text"], case["w"], case["h"])
            want = case["expect"]
            if want["kind"] == "point":
                assert isinstance(out, Point), case["text"]
                assert math.isclose(out.x, want["x"], abs_tol=1e-12), case["text"]
                assert math.isclose(out.y, want["y"], abs_tol=1e-12), case["text"]
                assert out.clamped == want.get("clamped", False), case["text"]
            else:
                assert out.__class__.__name__ == "ParseFailure" and out.raw == case["text"], case["text"]
        counts[protocol] = len(cases)
    assert all(c >= 20 for c in counts.values()) and set(counts) == {"bbox-text", "tool-call"}
    assert any('"coordinate": [500, 300]' in c["text"] for c in GOLDENS["tool-call"])
    record(", ".join(f"{k}: {v}" for k, v in counts.items()))
