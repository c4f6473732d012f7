"""Zoom-behavior benchmark construction and distance-threshold calibration.

Every sample is run for four fixed zoom rounds, yielding a correctness
sequence s1..s4. The sequence sorts the sample into one of five categories
along two axes: when it first becomes correct (easy at round 1, hard later,
hard_est never) and whether it stays correct afterwards (normal vs mislead).
"""

from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grounder.base import Point
from .harness import SampleResult

BENCH_DEPTH = 4
CORRECT_PAIR = "correct-pair"
ERROR_PAIR = "error-pair"

# Reference optimum reported for a 72B grounder on its own traces; kept for
# documentation only since the traces are not public.
REFERENCE_TAU_PX = 50.7
REFERENCE_ACCURACY = 0.918


class BenchError(ValueError):
    pass


class Category(str, enum.Enum):
    EASY_NORMAL = "easy_normal"
    EASY_MISLEAD = "easy_mislead"
    HARD_NORMAL = "hard_normal"
    HARD_MISLEAD = "hard_mislead"
    HARD_EST = "hard_est"


CATEGORIES = tuple(Category)


@dataclass(frozen=True)
class CorrectnessSequence:
    s: tuple[bool, ...]

    def __post_init__(self):
        if len(self.s) != BENCH_DEPTH:
            raise BenchError(f"correctness sequence must have length {BENCH_DEPTH}, got {len(self.s)}")
        object.__setattr__(self, "s", tuple(bool(v) for v in self.s))

    @classmethod
    def of(cls, *bits) -> "CorrectnessSequence":
        if len(bits) == 1 and not isinstance(bits[0], (bool, int)):
            bits = tuple(bits[0])
        return cls(tuple(bool(b) for b in bits))

    def bits(self) -> tuple[int, ...]:
        return tuple(int(v) for v in self.s)

    def __str__(self):
        return "".join(map(str, self.bits()))


def correctness_sequence(result: SampleResult, strict: bool = True) -> CorrectnessSequence:
    """Per-depth correctness of a four-round trace.

    Traces that stopped early are padded with their final value. In strict
    mode the trace must come from a depth-4 config; otherwise shallower
    configs are padded the same way.
    """
    if result.depth > BENCH_DEPTH:
        raise BenchError(f"sample {result.sample_id}: depth {result.depth} exceeds {BENCH_DEPTH}")
    if strict and result.depth != BENCH_DEPTH:
        raise BenchError(
            f"sample {result.sample_id}: produced with depth {result.depth}, "
            f"bench construction needs depth {BENCH_DEPTH} (disable strict mode to pad)"
        )
    if not result.correct:
        raise BenchError(f"sample {result.sample_id}: empty trace")
    return CorrectnessSequence(tuple(result.padded(BENCH_DEPTH)))


def categorize(seq: CorrectnessSequence) -> Category:
    s = seq.s
    if not any(s):
        return Category.HARD_EST
    first = s.index(True)
    mislead = not all(s[first:])
    if first == 0:
        return Category.EASY_MISLEAD if mislead else Category.EASY_NORMAL
    return Category.HARD_MISLEAD if mislead else Category.HARD_NORMAL


@dataclass
class BenchEntry:
    sample_id: str
    sequence: CorrectnessSequence
    category: Category
    tags: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "id": self.sample_id,
            "sequence": list(self.sequence.bits()),
            "category": self.category.value,
            "tags": self.tags,
        }


@dataclass
class BenchManifest:
    entries: list[BenchEntry]
    counts: dict[Category, int]
    depth_accuracy: dict[Category, list[float] | None]
    meta: dict

    def counts_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["category", "count"])
        for c in CATEGORIES:
            w.writerow([c.value, self.counts[c]])
        w.writerow(["total", sum(self.counts.values())])
        return buf.getvalue()

    def depth_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["category", "n", *[f"d{d}" for d in range(1, BENCH_DEPTH + 1)]])
        for c in CATEGORIES:
            curve = self.depth_accuracy[c]
            w.writerow([c.value, self.counts[c], *([f"{a:.6f}" for a in curve] if curve else [""] * BENCH_DEPTH)])
        return buf.getvalue()


def category_depth_accuracy(seqs: Sequence[CorrectnessSequence]) -> list[float] | None:
    if not seqs:
        return None
    arr = np.array([s.bits() for s in seqs], dtype=float)
    return [float(v) for v in arr.mean(axis=0)]


def build_bench(
    results: Sequence[SampleResult],
    out_dir: str | Path | None = None,
    *,
    strict: bool = True,
) -> BenchManifest:
    """Categorize every result and optionally write the bench files to ``out_dir``.

    Files written: ``bench_manifest.jsonl`` (id, sequence, category),
    ``category_counts.csv``, ``category_depth_accuracy.csv`` (d1..d4 per
    category) and ``bench_meta.json``.
    """
    if not results:
        raise BenchError("no results to build from")
    hashes = sorted({r.config_hash for r in results})
    if len(hashes) > 1:
        raise BenchError(f"results come from {len(hashes)} different configs: {hashes}")
    configs = {json.dumps(r.result.config, sort_keys=True) for r in results}
    if len(configs) > 1:
        raise BenchError("results come from different zoom configs")

    entries = []
    for r in results:
        seq = correctness_sequence(r, strict=strict)
        entries.append(BenchEntry(r.sample_id, seq, categorize(seq), dict(r.tags)))

    counts = {c: 0 for c in CATEGORIES}
    by_cat: dict[Category, list[CorrectnessSequence]] = {c: [] for c in CATEGORIES}
    for e in entries:
        counts[e.category] += 1
        by_cat[e.category].append(e.sequence)

    config = json.loads(next(iter(configs)))
    meta = {
        "config_hash": hashes[0],
        "zoom": config,
        "prezoom": bool(config.get("prezoom")) if config else None,
        "strict": strict,
        "samples": len(entries),
    }
    bench = BenchManifest(entries, counts, {c: category_depth_accuracy(by_cat[c]) for c in CATEGORIES}, meta)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "bench_manifest.jsonl", "w", encoding="utf-8") as f:
            for e in entries:
                f.write(json.dumps(e.to_dict(), ensure_ascii=False) + "\n")
        (out / "category_counts.csv").write_text(bench.counts_csv(), encoding="utf-8")
        (out / "category_depth_accuracy.csv").write_text(bench.depth_csv(), encoding="utf-8")
        (out / "bench_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return bench


@dataclass(frozen=True)
class ConsecutivePair:
    distance: float
    label: str
    sample_id: str = ""
    round_index: int = 0

    def __post_init__(self):
        if not self.distance >= 0:
            raise ValueError(f"distance must be >= 0, got {self.distance}")
        if self.label not in (CORRECT_PAIR, ERROR_PAIR):
            raise ValueError(f"unknown pair label {self.label!r}")


def consecutive_pairs(results: Iterable[SampleResult]) -> list[ConsecutivePair]:
    """Displacements between predictions of adjacent rounds.

    Both rounds must have produced a point. Pairs where both clicks are
    correct are labelled correct-pair, pairs with exactly one correct click
    error-pair; pairs where both miss carry no signal and are dropped.
    """
    out = []
    for r in results:
        rounds = r.result.rounds
        for t in range(len(rounds) - 1):
            a, b = rounds[t], rounds[t + 1]
            if not (isinstance(a.raw, Point) and isinstance(b.raw, Point)):
                continue
            ca, cb = r.correct[t], r.correct[t + 1]
            if not (ca or cb):
                continue
            label = CORRECT_PAIR if (ca and cb) else ERROR_PAIR
            out.append(ConsecutivePair(a.mapped_px.distance(b.mapped_px), label, r.sample_id, t + 1))
    return out


def write_pairs_csv(pairs: Iterable[ConsecutivePair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["sample_id", "round", "distance", "label"])
        for p in pairs:
            w.writerow([p.sample_id, p.round_index, repr(float(p.distance)), p.label])


def read_pairs_csv(path: str | Path) -> list[ConsecutivePair]:
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        cols = set(reader.fieldnames or [])
        if not {"distance", "label"} <= cols:
            raise ValueError(f"{path}: need 'distance' and 'label' columns, found {sorted(cols)}")
        pairs = []
        for i, row in enumerate(reader, 2):
            try:
                pairs.append(
                    ConsecutivePair(
                        float(row["distance"]),
                        row["label"].strip(),
                        row.get("sample_id") or "",
                        int(row["round"]) if row.get("round") else 0,
                    )
                )
            except ValueError as exc:
                raise ValueError(f"{path}:{i}: {exc}") from None
    return pairs


@dataclass
class Calibration:
    tau: float
    accuracy: float
    mean_correct: float
    mean_error: float
    n_correct: int
    n_error: int
    sweep: list[tuple[float, float]]

    def sweep_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "accuracy"])
        for t, a in self.sweep:
            w.writerow([repr(float(t)), f"{a:.6f}"])
        return buf.getvalue()


def threshold_accuracy(correct: np.ndarray, error: np.ndarray, taus: np.ndarray) -> np.ndarray:
    """Accuracy of the rule ``distance < tau => correct-pair`` at each tau."""
    c = np.sort(correct)
    e = np.sort(error)
    c_below = np.searchsorted(c, taus, side="left")
    e_below = np.searchsorted(e, taus, side="left")
    return (c_below + (len(e) - e_below)) / (len(c) + len(e))


def candidate_thresholds(distances: np.ndarray) -> np.ndarray:
    u = np.unique(distances)
    return np.concatenate([[0.0], (u[:-1] + u[1:]) / 2, [u[-1] + 1.0]])


def calibrate_threshold(pairs: Sequence[ConsecutivePair]) -> Calibration:
    correct = np.array([p.distance for p in pairs if p.label == CORRECT_PAIR], dtype=float)
    error = np.array([p.distance for p in pairs if p.label == ERROR_PAIR], dtype=float)
    if len(correct) == 0 or len(error) == 0:
        raise ValueError("calibration needs at least one correct-pair and one error-pair")
    taus = candidate_thresholds(np.concatenate([correct, error]))
    acc = threshold_accuracy(correct, error, taus)
    best = int(np.argmax(acc))  # first maximum is the smallest tau
    return Calibration(
        tau=float(taus[best]),
        accuracy=float(acc[best]),
        mean_correct=float(correct.mean()),
        mean_error=float(error.mean()),
        n_correct=len(correct),
        n_error=len(error),
        sweep=[(float(t), float(a)) for t, a in zip(taus, acc)],
    )
