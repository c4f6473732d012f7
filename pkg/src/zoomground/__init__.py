"""Training-free iterative zoom-in for GUI element grounding."""

from .geometry import BoundaryMode, NormPoint, PixelBox, PixelPoint, Viewport
from .pipeline import ZoomConfig, ZoomResult, pre_zoom, zoom_click

__version__ = "0.1.0"

__all__ = [
    "BoundaryMode",
    "NormPoint",
    "PixelBox",
    "PixelPoint",
    "Viewport",
    "ZoomConfig",
    "ZoomResult",
    "pre_zoom",
    "zoom_click",
]
