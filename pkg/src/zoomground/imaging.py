"""Image sources for the pipeline.

The pipeline only needs ``.size`` and ``.crop((l, t, r, b))``, which PIL images
provide. ``VirtualImage`` offers the same surface without pixel data so that
synthetic benchmarks can run thousands of samples without touching disk.
"""

from __future__ import annotations

import io
import re
from pathlib import Path

import httpx
from PIL import Image

VIRTUAL_PREFIX = "virtual:"
_VIRTUAL = re.compile(r"virtual:(\d+)x(\d+)")

# lossless so endpoints see exactly the pixels we cropped
IMAGE_ENCODING = {"format": "PNG", "lossless": True}


class VirtualImage:
    def __init__(self, width: int, height: int):
        self.width = int(width)
        self.height = int(height)

    @property
    def size(self) -> tuple[int, int]:
        return (self.width, self.height)

    def crop(self, box: tuple[int, int, int, int]) -> "VirtualImage":
        left, top, right, bottom = box
        return VirtualImage(right - left, bottom - top)

    def to_pil(self) -> Image.Image:
        return Image.new("RGB", self.size, (255, 255, 255))

    def __repr__(self):
        return f"VirtualImage({self.width}x{self.height})"


def is_virtual(ref: str) -> bool:
    return ref.startswith(VIRTUAL_PREFIX)


def virtual_ref(width: int, height: int) -> str:
    return f"{VIRTUAL_PREFIX}{width}x{height}"


def parse_virtual(ref: str) -> tuple[int, int]:
    m = _VIRTUAL.fullmatch(ref)
    if not m:
        raise ValueError(f"malformed virtual image reference {ref!r}")
    return int(m.group(1)), int(m.group(2))


def is_url(ref: str) -> bool:
    return ref.startswith(("http://", "https://"))


def image_size(ref: str | Path) -> tuple[int, int]:
    """Read image dimensions without decoding pixel data."""
    ref = str(ref)
    if is_virtual(ref):
        return parse_virtual(ref)
    with Image.open(ref) as im:
        return im.size


def open_image(ref: str | Path, timeout: float = 30.0):
    ref = str(ref)
    if is_virtual(ref):
        return VirtualImage(*parse_virtual(ref))
    if is_url(ref):
        resp = httpx.get(ref, timeout=timeout, follow_redirects=True)
        resp.raise_for_status()
        im = Image.open(io.BytesIO(resp.content))
    else:
        im = Image.open(ref)
    im.load()
    return im.convert("RGB")


def encode_png(image) -> bytes:
    if isinstance(image, VirtualImage):
        image = image.to_pil()
    buf = io.BytesIO()
    image.save(buf, format=IMAGE_ENCODING["format"])
    return buf.getvalue()
