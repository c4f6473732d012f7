"""Dataset ingestion, evaluation, metrics and resumable run directories.

A run directory holds::

    manifest.json     config, grounder identity, seed, config hash
    results.jsonl     one SampleResult per line, append-only
    metrics.csv       accuracy per group plus the per-depth curve
    depth_curve.csv   long format (depth, group, accuracy) for plotting
    metrics.json      the same table as structured data

Re-running into an existing directory skips every (sample id, config hash)
already in the log, so an interrupted run resumes exactly where it stopped.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import threading
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from . import imaging
from .geometry import PixelBox, PixelPoint, point_in_box
from .grounder.base import AuthError, Grounder, TransportError
from .pipeline import ZoomConfig, ZoomResult, result_from_dict, result_to_dict, zoom_click

log = logging.getLogger(__name__)

RESULTS_FILE = "results.jsonl"
MANIFEST_FILE = "manifest.json"
METRICS_CSV = "metrics.csv"
DEPTH_CSV = "depth_curve.csv"
METRICS_JSON = "metrics.json"

Predicate = Callable[[PixelPoint, PixelBox], bool]


class DatasetError(ValueError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("invalid dataset:\n  " + "\n  ".join(self.problems))


class RunDirConflict(RuntimeError):
    pass


@dataclass
class GroundingSample:
    id: str
    image: str
    instruction: str
    bbox: PixelBox
    width: int
    height: int
    tags: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        d = {
            "id": self.id,
            "image": self.image,
            "instruction": self.instruction,
            "bbox": list(self.bbox.xyxy()),
            "width": self.width,
            "height": self.height,
        }
        if self.tags:
            d["tags"] = self.tags
        return d


def write_manifest(samples: Iterable[GroundingSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in samples:
            f.write(json.dumps(s.to_dict(), ensure_ascii=False) + "\n")


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def load_dataset(path: str | Path) -> list[GroundingSample]:
    """Parse and validate a line-delimited JSON dataset manifest.

    Each line holds ``id``, ``image`` (path relative to the manifest, URL, or
    ``virtual:WxH``), ``instruction``, ``bbox`` as ``[x1, y1, x2, y2]`` pixels,
    and optionally ``width``/``height`` and a string-to-string ``tags`` map.
    Samples whose image file is missing are skipped with a warning; every other
    problem is collected and reported together.
    """
    path = Path(path)
    base = path.parent
    problems: list[str] = []
    samples: list[GroundingSample] = []
    seen: set[str] = set()

    with open(path, encoding="utf-8") as f:
        lines = f.readlines()

    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            problems.append(f"line {lineno}: malformed JSON ({exc.msg})")
            continue
        if not isinstance(rec, dict):
            problems.append(f"line {lineno}: expected an object")
            continue
        missing = [k for k in ("id", "image", "instruction", "bbox") if k not in rec]
        if missing:
            problems.append(f"line {lineno}: missing field(s) {', '.join(missing)}")
            continue
        sid = str(rec["id"])
        where = f"sample {sid!r} (line {lineno})"
        if sid in seen:
            problems.append(f"{where}: duplicate id")
            continue
        seen.add(sid)

        bbox = rec["bbox"]
        if not (isinstance(bbox, list) and len(bbox) == 4 and all(_is_int(v) for v in bbox)):
            problems.append(f"{where}: bbox must be four integers [x1, y1, x2, y2]")
            continue
        if not isinstance(rec["instruction"], str) or not rec["instruction"].strip():
            problems.append(f"{where}: empty instruction")
            continue
        tags = rec.get("tags", {})
        if not isinstance(tags, dict) or not all(isinstance(k, str) and isinstance(v, str) for k, v in tags.items()):
            problems.append(f"{where}: tags must map strings to strings")
            continue

        ref = str(rec["image"])
        if not (imaging.is_virtual(ref) or imaging.is_url(ref)):
            p = Path(ref)
            if not p.is_absolute():
                p = base / p
            if not p.exists():
                log.warning("%s: image %s not found, skipping", where, p)
                continue
            ref = str(p)

        width, height = rec.get("width"), rec.get("height")
        if width is None or height is None:
            if imaging.is_url(ref):
                problems.append(f"{where}: width/height are required for URL images")
                continue
            try:
                width, height = imaging.image_size(ref)
            except Exception as exc:
                problems.append(f"{where}: cannot read image size ({exc})")
                continue
        if not (_is_int(width) and _is_int(height) and width >= 1 and height >= 1):
            problems.append(f"{where}: width/height must be positive integers")
            continue

        x1, y1, x2, y2 = bbox
        if x2 <= x1 or y2 <= y1:
            problems.append(f"{where}: empty ground-truth box {bbox}")
            continue
        box = PixelBox.from_xyxy(x1, y1, x2, y2)
        if not box.inside(width, height):
            problems.append(f"{where}: ground-truth box {bbox} exceeds image {width}x{height}")
            continue
        samples.append(GroundingSample(sid, ref, rec["instruction"], box, width, height, dict(tags)))

    if problems:
        raise DatasetError(problems)
    if not samples:
        log.warning("dataset %s is empty", path)
    return samples


@dataclass
class SampleResult:
    sample_id: str
    config_hash: str
    result: ZoomResult
    correct: list[bool]
    depth: int
    tags: dict[str, str] = field(default_factory=dict)
    error: str | None = None

    @property
    def final_correct(self) -> bool:
        return bool(self.correct) and self.correct[-1]

    def padded(self, depth: int | None = None) -> list[bool]:
        """Correctness at depths 1..depth; an early stop keeps its last click."""
        depth = depth or self.depth
        seq = list(self.correct[:depth])
        return seq + [seq[-1]] * (depth - len(seq))

    def to_dict(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "config_hash": self.config_hash,
            "depth": self.depth,
            "correct": self.correct,
            "final_correct": self.final_correct,
            "tags": self.tags,
            "error": self.error,
            "trace": result_to_dict(self.result),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SampleResult":
        return cls(
            sample_id=d["sample_id"],
            config_hash=d["config_hash"],
            result=result_from_dict(d["trace"]),
            correct=list(d["correct"]),
            depth=d["depth"],
            tags=d.get("tags", {}),
            error=d.get("error"),
        )


def run_hash(config: ZoomConfig, grounder_identity: dict, seed: int | None = None) -> str:
    blob = json.dumps({"zoom": config.to_dict(), "grounder": grounder_identity, "seed": seed}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def evaluate_sample(
    sample: GroundingSample,
    grounder: Grounder,
    config: ZoomConfig,
    *,
    config_hash: str = "",
    predicate: Predicate = point_in_box,
    image=None,
) -> SampleResult:
    if image is None:
        image = imaging.open_image(sample.image)
    result = zoom_click(image, sample.instruction, grounder, config, sample_id=sample.id)
    correct = [c is not None and predicate(c, sample.bbox) for c in result.per_round_clicks]
    error = None
    if not result.ok:
        error = f"no target at round 1 ({type(result.rounds[0].raw).__name__})"
    return SampleResult(sample.id, config_hash, result, correct, config.depth, dict(sample.tags), error)


@dataclass
class MetricsRow:
    group: tuple[str, ...]
    n: int
    correct: int
    curve: list[float]

    @property
    def accuracy(self) -> float:
        return self.correct / self.n

    @property
    def label(self) -> str:
        return "overall" if not self.group else "|".join(self.group)


@dataclass
class MetricsTable:
    group_by: tuple[str, ...]
    depth: int
    rows: list[MetricsRow]

    @property
    def overall(self) -> MetricsRow:
        return next(r for r in self.rows if not r.group)

    def group(self, *values: str) -> MetricsRow:
        return next(r for r in self.rows if r.group == tuple(values))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([*self.group_by, "n", "correct", "accuracy", *[f"d{d}" for d in range(1, self.depth + 1)]])
        for r in self.rows:
            keys = list(r.group) if r.group else ["ALL"] * len(self.group_by)
            w.writerow([*keys, r.n, r.correct, f"{r.accuracy:.6f}", *[f"{a:.6f}" for a in r.curve]])
        return buf.getvalue()

    def depth_curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["depth", "group", "accuracy"])
        for r in self.rows:
            for d, a in enumerate(r.curve, 1):
                w.writerow([d, r.label, f"{a:.6f}"])
        return buf.getvalue()

    def to_dict(self) -> dict[str, Any]:
        return {
            "group_by": list(self.group_by),
            "depth": self.depth,
            "rows": [
                {"group": list(r.group), "n": r.n, "correct": r.correct, "accuracy": r.accuracy, "curve": r.curve}
                for r in self.rows
            ],
        }

    def format(self) -> str:
        head = " ".join(f"{k:>12}" for k in self.group_by)
        lines = [f"{head} {'n':>6} {'acc':>7}  " + " ".join(f"{'d' + str(d):>6}" for d in range(1, self.depth + 1))]
        for r in self.rows:
            keys = r.group if r.group else ("ALL",) * len(self.group_by)
            lines.append(
                " ".join(f"{k:>12}" for k in keys)
                + f" {r.n:>6} {r.accuracy:>7.3f}  "
                + " ".join(f"{a:>6.3f}" for a in r.curve)
            )
        return "\n".join(lines)


def _row(group: tuple[str, ...], members: list[SampleResult], depth: int) -> MetricsRow:
    seqs = [r.padded(depth) for r in members]
    curve = [sum(s[d] for s in seqs) / len(seqs) for d in range(depth)]
    return MetricsRow(group, len(members), sum(s[-1] for s in seqs), curve)


def aggregate(results: Sequence[SampleResult], group_by: Sequence[str] = ()) -> MetricsTable:
    """Accuracy at the final depth and per-depth curves, overall and per tag group."""
    if not results:
        raise ValueError("cannot aggregate an empty result set")
    group_by = tuple(group_by)
    available = sorted({k for r in results for k in r.tags})
    unknown = [k for k in group_by if k not in available]
    if unknown:
        raise KeyError(f"unknown tag key(s) {unknown}; available: {available}")
    depth = max(r.depth for r in results)

    rows = [_row((), list(results), depth)]
    if group_by:
        groups: dict[tuple[str, ...], list[SampleResult]] = {}
        for r in results:
            groups.setdefault(tuple(r.tags.get(k, "") for k in group_by), []).append(r)
        rows += [_row(g, groups[g], depth) for g in sorted(groups)]
    return MetricsTable(group_by, depth, rows)


def _read_log(path: Path) -> list[dict]:
    """Load the results log, dropping a torn final line left by a killed writer."""
    if not path.exists():
        return []
    data = path.read_bytes()
    cut = data.rfind(b"\n") + 1
    if cut < len(data):
        log.warning("discarding %d bytes of incomplete record at end of %s", len(data) - cut, path)
        with open(path, "r+b") as f:
            f.truncate(cut)
        data = data[:cut]
    return [json.loads(line) for line in data.decode("utf-8").splitlines() if line.strip()]


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_metrics(table: MetricsTable, run_dir: str | Path) -> None:
    run_dir = Path(run_dir)
    _write_text(run_dir / METRICS_CSV, table.to_csv())
    _write_text(run_dir / DEPTH_CSV, table.depth_curve_csv())
    _write_text(run_dir / METRICS_JSON, json.dumps(table.to_dict(), indent=2) + "\n")


def load_results(path: str | Path) -> list[SampleResult]:
    return [SampleResult.from_dict(d) for d in _read_log(Path(path))]


def run_eval(
    dataset: Sequence[GroundingSample],
    grounder: Grounder,
    config: ZoomConfig,
    run_dir: str | Path,
    parallelism: int = 1,
    *,
    seed: int | None = None,
    group_by: Sequence[str] = (),
    predicate: Predicate = point_in_box,
    manifest_extra: dict[str, Any] | None = None,
) -> MetricsTable:
    if not dataset:
        raise ValueError("dataset is empty")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    identity = grounder.identity()
    chash = run_hash(config, identity, seed)

    manifest_path = run_dir / MANIFEST_FILE
    if manifest_path.exists():
        existing = json.loads(manifest_path.read_text(encoding="utf-8"))
        if existing.get("config_hash") != chash:
            raise RunDirConflict(
                f"{run_dir} holds results for config {existing.get('config_hash')}, "
                f"current config is {chash}; use a fresh run directory"
            )
    else:
        manifest = {
            "config_hash": chash,
            "zoom": config.to_dict(),
            "grounder": identity,
            "seed": seed,
            "image_encoding": imaging.IMAGE_ENCODING,
            **(manifest_extra or {}),
        }
        _write_text(manifest_path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    log_path = run_dir / RESULTS_FILE
    logged = _read_log(log_path)
    foreign = {d["config_hash"] for d in logged} - {chash}
    if foreign:
        raise RunDirConflict(f"{log_path} contains results from other configs: {sorted(foreign)}")
    done = {d["sample_id"]: d for d in logged}
    pending = [s for s in dataset if s.id not in done]
    log.info("%d samples logged, %d to run", len(dataset) - len(pending), len(pending))

    failures: list[tuple[str, str]] = []
    lock = threading.Lock()
    with open(log_path, "a", encoding="utf-8") as out:

        def work(sample: GroundingSample) -> None:
            try:
                res = evaluate_sample(sample, grounder, config, config_hash=chash, predicate=predicate)
            except AuthError:
                raise
            except TransportError as exc:
                log.error("sample %s: %s", sample.id, exc)
                with lock:
                    failures.append((sample.id, str(exc)))
                return
            line = json.dumps(res.to_dict(), ensure_ascii=False) + "\n"
            with lock:
                out.write(line)
                out.flush()
                done[sample.id] = res.to_dict()

        if parallelism <= 1:
            for s in pending:
                work(s)
        else:
            with ThreadPoolExecutor(max_workers=parallelism) as pool:
                futures = [pool.submit(work, s) for s in pending]
                finished, _ = wait(futures, return_when=FIRST_EXCEPTION)
                for f in finished:
                    if f.exception() is not None:
                        for other in futures:
                            other.cancel()
                        raise f.exception()

    if failures:
        raise TransportError(
            f"{len(failures)} sample(s) failed on transport and were not logged; rerun to retry: "
            + ", ".join(sid for sid, _ in failures[:10])
        )

    results = [SampleResult.from_dict(done[s.id]) for s in dataset if s.id in done]
    table = aggregate(results, group_by)
    write_metrics(table, run_dir)
    return table
