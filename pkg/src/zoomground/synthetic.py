"""Seeded synthetic datasets over virtual screenshots.

Samples reference ``virtual:WxH`` images, so no pixels are stored or decoded;
the oracle grounder only needs geometry.
"""

from __future__ import annotations

import numpy as np

from .geometry import PixelBox
from .harness import GroundingSample
from .imaging import virtual_ref

DOMAINS = ("Development", "Creative", "CAD", "Scientific", "Office", "OS")
KINDS = ("text", "icon")


def make_samples(
    n: int,
    width: int = 1920,
    height: int = 1080,
    *,
    target_frac: float = 0.01,
    seed: int = 0,
    avoid_center: bool = False,
    prefix: str = "syn",
) -> list[GroundingSample]:
    """Generate ``n`` samples with square targets of side ``target_frac * width``.

    Targets are placed uniformly at random. With ``avoid_center`` the target
    never covers the image center, so a click at the center always misses.
    Domain and element-kind tags cycle so every group is populated.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    side = max(1, round(target_frac * width))
    if side > min(width, height):
        raise ValueError(f"target side {side}px does not fit a {width}x{height} image")
    rng = np.random.default_rng(seed)
    cx, cy = width // 2, height // 2
    ref = virtual_ref(width, height)
    out = []
    for i in range(n):
        while True:
            left = int(rng.integers(0, width - side + 1))
            top = int(rng.integers(0, height - side + 1))
            box = PixelBox(left, top, side, side)
            if not (avoid_center and box.left <= cx < box.right and box.top <= cy < box.bottom):
                break
        tags = {"domain": DOMAINS[i % len(DOMAINS)], "kind": KINDS[i % len(KINDS)]}
        out.append(GroundingSample(f"{prefix}-{i:05d}", ref, f"element {i}", box, width, height, tags))
    return out


def truths(samples) -> dict[str, PixelBox]:
    """Ground-truth lookup table for :class:`OracleGrounder`."""
    return {s.id: s.bbox for s in samples}
