"""Simulated grounding models with known ground truth.

The oracle aims at the visible part of the target and adds Gaussian error whose
scale is a fixed fraction of the view it is shown, so zooming in shrinks the
error measured in original pixels. Every draw is keyed on (seed, round, sample,
view region), which keeps runs reproducible regardless of call order or
thread scheduling.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from ..geometry import PixelBox
from .base import GroundingOutcome, GroundingQuery, NoTarget, clamped_point


@dataclass(frozen=True)
class OracleNoiseModel:
    sigma_ratio: float = 0.0
    miss_rate: float = 0.0
    seed: int = 0
    # systematic offset of full-screenshot predictions, as a fraction of the image diagonal
    global_bias_ratio: float = 0.0

    def __post_init__(self):
        if self.sigma_ratio < 0:
            raise ValueError(f"sigma_ratio must be >= 0, got {self.sigma_ratio}")
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ValueError(f"miss_rate must lie in [0, 1], got {self.miss_rate}")
        if self.global_bias_ratio < 0:
            raise ValueError(f"global_bias_ratio must be >= 0, got {self.global_bias_ratio}")


def _key_words(*parts) -> list[int]:
    digest = hashlib.sha256("|".join(map(str, parts)).encode()).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


def _rng(seed: int, *parts) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, *_key_words(*parts)]))


def query_key(query: GroundingQuery) -> tuple:
    region = query.region.astuple() if query.region is not None else (0, 0, query.width, query.height)
    return (query.sample_id, query.instruction, region)


def oracle_ground(
    query: GroundingQuery,
    truth: PixelBox,
    noise: OracleNoiseModel,
    round_index: int,
    offset_px: tuple[float, float] = (0.0, 0.0),
) -> GroundingOutcome:
    """Noisy click on ``truth`` (given in crop pixels)."""
    rng = _rng(noise.seed, "round", round_index, *query_key(query))
    if rng.random() < noise.miss_rate:
        return NoTarget("simulated miss")
    w, h = query.width, query.height
    sigma = noise.sigma_ratio * min(w, h)
    cx = truth.left + truth.width / 2.0 + offset_px[0]
    cy = truth.top + truth.height / 2.0 + offset_px[1]
    if sigma > 0:
        dx, dy = rng.normal(0.0, sigma, size=2)
        cx, cy = cx + dx, cy + dy
    return clamped_point(cx / w, cy / h)


class OracleGrounder:
    """Grounder backed by per-sample ground-truth boxes in original pixels.

    Views that do not overlap the target return ``NoTarget``.
    """

    def __init__(self, truths: dict[str, PixelBox], noise: OracleNoiseModel, latency_s: float = 0.0):
        self.truths = dict(truths)
        self.noise = noise
        self.latency_s = latency_s

    def bias_offset(self, sample_id: str, width: int, height: int) -> tuple[float, float]:
        if self.noise.global_bias_ratio == 0:
            return (0.0, 0.0)
        magnitude = self.noise.global_bias_ratio * math.hypot(width, height)
        angle = _rng(self.noise.seed, "bias", sample_id).uniform(0.0, 2.0 * math.pi)
        return (magnitude * math.cos(angle), magnitude * math.sin(angle))

    def ground(self, query: GroundingQuery) -> GroundingOutcome:
        if self.latency_s:
            time.sleep(self.latency_s)
        try:
            truth = self.truths[query.sample_id]
        except KeyError:
            raise ValueError(f"oracle has no ground truth for sample {query.sample_id!r}") from None
        region = query.region or PixelBox(0, 0, query.width, query.height)
        visible = truth.intersect(region)
        if visible is None:
            return NoTarget("target outside view")
        offset = (0.0, 0.0)
        if query.is_full_view:
            offset = self.bias_offset(query.sample_id, query.width, query.height)
        return oracle_ground(
            query, visible.translate(-region.left, -region.top), self.noise, query.round_index, offset
        )

    def identity(self) -> dict:
        return {"kind": "oracle", **asdict(self.noise)}
