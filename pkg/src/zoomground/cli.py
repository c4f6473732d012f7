"""Command-line entry point: ``zoomground {ground,eval,bench,calibrate,synth}``.

Exit codes: 0 success, 2 usage, 3 transport, 4 validation, 5 no target.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench, harness, imaging, synthetic
from .config import EFFECTIVE_CONFIG, GROUNDER_KINDS, ConfigError, apply_overrides, load_config
from .geometry import BoundaryMode, PixelBox
from .grounder import TransportError
from .grounder.base import AuthError
from .pipeline import crop_sizes, result_to_dict, zoom_click

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_TRANSPORT = 3
EXIT_VALIDATION = 4
EXIT_NO_TARGET = 5

log = logging.getLogger("zoomground")


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration (flags override --config)")
    g.add_argument("--config", help="YAML run config")
    g.add_argument("--grounder", choices=GROUNDER_KINDS)
    g.add_argument("--endpoint", help="OpenAI-compatible base URL, e.g. http://host:8000/v1")
    g.add_argument("--model")
    g.add_argument("--depth", type=int, help="number of grounding rounds T")
    g.add_argument("--rho", type=float, action="append", help="shrink ratio; repeat for a per-step schedule")
    g.add_argument("--min-crop", type=int, help="minimum crop side m in pixels")
    g.add_argument("--tau", type=float, help="pre-zoom agreement threshold in pixels")
    g.add_argument("--boundary", choices=[m.value for m in BoundaryMode])
    g.add_argument("--prezoom", choices=("on", "off"))
    g.add_argument("--grid", help="pre-zoom tile grid, RxC")
    g.add_argument("--parallelism", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--run-dir")
    g.add_argument("--sigma-ratio", type=float, help="oracle noise scale")
    g.add_argument("--miss-rate", type=float, help="oracle miss probability")
    g.add_argument("--latency", type=float, help="oracle per-call delay in seconds")
    g.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zoomground", description="Iterative zoom-in GUI grounding.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ground", help="ground one instruction on one screenshot")
    p.add_argument("image")
    p.add_argument("instruction")
    p.add_argument("--trace", help="where to write the JSON trace (default: <run-dir>/trace.json or ./trace.json)")
    p.add_argument("--target", help="x1,y1,x2,y2 ground-truth box, needed by the oracle grounder")
    _common(p)

    p = sub.add_parser("eval", help="evaluate a dataset into a run directory")
    p.add_argument("--dataset", help="JSONL dataset manifest")
    p.add_argument("--group-by", action="append", help="tag key to break metrics down by (repeatable)")
    _common(p)

    p = sub.add_parser("bench", help="categorize a depth-4 results log into zoom-behavior subsets")
    p.add_argument("results", help="results.jsonl from an eval run")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-strict", dest="strict", action="store_false", help="pad traces from shallower configs")
    p.add_argument("-v", "--verbose", action="count", default=0)

    p = sub.add_parser("calibrate", help="fit the consecutive-prediction distance threshold")
    p.add_argument("pairs", help="CSV with distance,label columns")
    p.add_argument("--sweep", help="write the threshold -> accuracy curve here")
    p.add_argument("-v", "--verbose", action="count", default=0)

    p = sub.add_parser("synth", help="write a synthetic dataset over virtual screenshots")
    p.add_argument("out", help="output JSONL path")
    p.add_argument("-n", type=int, default=20)
    p.add_argument("--width", type=int, default=1920)
    p.add_argument("--height", type=int, default=1080)
    p.add_argument("--target-frac", type=float, default=0.01, help="target side as a fraction of image width")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--avoid-center", action="store_true", help="never cover the image center")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _parse_box(text: str) -> PixelBox:
    try:
        x1, y1, x2, y2 = (int(v) for v in text.split(","))
        return PixelBox.from_xyxy(x1, y1, x2, y2)
    except ValueError:
        raise UsageError(f"--target must be x1,y1,x2,y2 integers, got {text!r}") from None


def _echo_config(cfg, run_dir: Path) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / EFFECTIVE_CONFIG).write_text(cfg.dump(), encoding="utf-8")


def cmd_ground(args) -> int:
    cfg = apply_overrides(load_config(args.config), args)
    try:
        image = imaging.open_image(args.image)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read image {args.image}: {exc}") from None
    truths = None
    if cfg.grounder == "oracle":
        if not args.target:
            raise UsageError("the oracle grounder needs --target x1,y1,x2,y2")
        truths = {"query": _parse_box(args.target)}
    grounder = cfg.make_grounder(truths)
    zcfg = cfg.zoom_config()
    result = zoom_click(image, args.instruction, grounder, zcfg, sample_id="query")

    if args.trace:
        trace_path = Path(args.trace)
    elif cfg.run_dir:
        _echo_config(cfg, Path(cfg.run_dir))
        trace_path = Path(cfg.run_dir) / "trace.json"
    else:
        trace_path = Path("trace.json")
    trace_path.parent.mkdir(parents=True, exist_ok=True)
    trace = {"image": str(args.image), "instruction": args.instruction, **result_to_dict(result)}
    trace_path.write_text(json.dumps(trace, indent=2) + "\n", encoding="utf-8")

    sizes = " -> ".join(f"{w}x{h}" for w, h in crop_sizes(result))
    print(f"crops: {sizes}")
    print(f"reason: {result.reason}")
    print(f"trace: {trace_path}")
    if result.final_click is None:
        print("click: none", file=sys.stderr)
        return EXIT_NO_TARGET
    print(f"click: {result.final_click.x} {result.final_click.y}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = apply_overrides(load_config(args.config), args)
    if not cfg.dataset:
        raise UsageError("no dataset given (set `dataset:` in the config or pass --dataset)")
    if not cfg.run_dir:
        raise UsageError("no run directory given (set `run_dir:` in the config or pass --run-dir)")
    samples = harness.load_dataset(cfg.dataset)
    if not samples:
        print("dataset is empty, nothing to evaluate")
        return EXIT_OK
    grounder = cfg.make_grounder(synthetic.truths(samples))
    run_dir = Path(cfg.run_dir)
    table = harness.run_eval(
        samples,
        grounder,
        cfg.zoom_config(),
        run_dir,
        cfg.parallelism,
        seed=cfg.seed,
        group_by=cfg.group_by,
        manifest_extra={"dataset": str(cfg.dataset)},
    )
    _echo_config(cfg, run_dir)
    print(table.format())
    print(f"results: {run_dir}")
    return EXIT_OK


def cmd_bench(args) -> int:
    results = harness.load_results(args.results)
    out = Path(args.out)
    b = bench.build_bench(results, out, strict=args.strict)
    pairs = bench.consecutive_pairs(results)
    bench.write_pairs_csv(pairs, out / "pairs.csv")
    print(b.depth_csv(), end="")
    print(f"pairs: {len(pairs)} written to {out / 'pairs.csv'}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cal = bench.calibrate_threshold(bench.read_pairs_csv(args.pairs))
    print(f"tau: {cal.tau:.2f} px")
    print(f"accuracy: {cal.accuracy:.4f}")
    print(f"mean distance: correct-pair {cal.mean_correct:.2f} px (n={cal.n_correct}), "
          f"error-pair {cal.mean_error:.2f} px (n={cal.n_error})")
    if args.sweep:
        Path(args.sweep).write_text(cal.sweep_csv(), encoding="utf-8")
        print(f"sweep: {args.sweep}")
    return EXIT_OK


def cmd_synth(args) -> int:
    samples = synthetic.make_samples(
        args.n, args.width, args.height, target_frac=args.target_frac, seed=args.seed, avoid_center=args.avoid_center
    )
    harness.write_manifest(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return EXIT_OK


COMMANDS = {
    "ground": cmd_ground,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "calibrate": cmd_calibrate,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AuthError as exc:
        print(f"authentication failed: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (
        ConfigError,
        harness.DatasetError,
        harness.RunDirConflict,
        bench.BenchError,
        KeyError,
        ValueError,
    ) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"invalid input: {msg}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
