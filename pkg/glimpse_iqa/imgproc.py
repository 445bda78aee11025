"""Define grayscale preprocessing and multi-scale foveal glimpse extraction."""
from dataclasses import dataclass
import logging
from typing import Sequence, Tuple

import numpy as np
from scipy import ndimage

from .errors import ShapeError

_LOGGER: logging.Logger = logging.getLogger(__name__)

LUMA_WEIGHTS: Tuple[float, float, float] = (0.299, 0.587, 0.114)
DEFAULT_LCN_WINDOW: int = 7
DEFAULT_LCN_EPS: float = 1e-4
DEFAULT_SCALES: Tuple[int, int, int] = (32, 96, 288)
DEFAULT_PATCH: int = 32


class GrayImage:
    """A single-channel image of finite floats."""

    __slots__ = ("values",)

    def __init__(self, values) -> None:
        """Initialize."""
        array = np.array(values, dtype=np.float64)
        if array.ndim != 2 or array.shape[0] < 1 or array.shape[1] < 1:
            raise ShapeError(f"A gray image needs a non-empty 2-D array, got {array.shape}")
        if not np.all(np.isfinite(array)):
            raise ShapeError("A gray image must hold finite values")
        array.setflags(write=False)
        self.values: np.ndarray = array

    @property
    def height(self) -> int:
        """Return the height in pixels."""
        return self.values.shape[0]

    @property
    def width(self) -> int:
        """Return the width in pixels."""
        return self.values.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        """Return (height, width)."""
        return self.values.shape

    def __repr__(self) -> str:
        return f"<GrayImage {self.height}x{self.width}>"


@dataclass(frozen=True)
class GlimpseStack:
    """Same-size patches cut around one fixation, finest scale first."""

    patches: np.ndarray
    scales: Tuple[int, ...]
    center: Tuple[int, int]


def to_grayscale(rgb) -> GrayImage:
    """Convert an 8-bit RGB (or already single-channel) image to luminance in [0, 1]."""
    array = np.asarray(rgb)
    if array.size == 0:
        raise ShapeError("Cannot convert an empty image")
    if array.ndim == 2:
        return GrayImage(array.astype(np.float64) / 255.0)
    if array.ndim != 3 or array.shape[2] < 3:
        raise ShapeError(f"Expected an HxWx3 RGB array, got {array.shape}")
    channels = array[..., :3].astype(np.float64)
    luma = channels @ np.array(LUMA_WEIGHTS)
    return GrayImage(luma / 255.0)


def local_contrast_normalize(
    img: GrayImage, window: int = DEFAULT_LCN_WINDOW, eps: float = DEFAULT_LCN_EPS
) -> GrayImage:
    """
    Subtract the local mean and divide by the local standard deviation.

    Statistics run over the window×window neighbourhood; pixels outside the image
    contribute nothing and the window is normalised by its in-image pixel count.
    """
    if window < 1 or window % 2 == 0:
        raise ShapeError(f"Contrast normalisation window must be odd, got {window}")
    values = img.values
    ones = np.ones_like(values)
    kwargs = {"size": window, "mode": "constant", "cval": 0.0}
    # uniform_filter divides by window²; the ratio of two filtered maps cancels it
    count = ndimage.uniform_filter(ones, **kwargs)
    mean = ndimage.uniform_filter(values, **kwargs) / count
    mean_sq = ndimage.uniform_filter(values * values, **kwargs) / count
    std = np.sqrt(np.maximum(mean_sq - mean * mean, 0.0))
    return GrayImage((values - mean) / (std + eps))


def loc_to_pixel(l: Sequence[float], h: int, w: int) -> Tuple[float, float]:
    """Map a normalised (lx, ly) location to continuous (row, col) pixel coordinates."""
    lx = float(np.clip(l[0], -1.0, 1.0))
    ly = float(np.clip(l[1], -1.0, 1.0))
    return (ly + 1.0) / 2.0 * (h - 1), (lx + 1.0) / 2.0 * (w - 1)


def pixel_to_loc(row: float, col: float, h: int, w: int) -> Tuple[float, float]:
    """Map continuous (row, col) pixel coordinates to a normalised (lx, ly) location."""
    lx = 2.0 * col / (w - 1) - 1.0 if w > 1 else 0.0
    ly = 2.0 * row / (h - 1) - 1.0 if h > 1 else 0.0
    return float(np.clip(lx, -1.0, 1.0)), float(np.clip(ly, -1.0, 1.0))


def glimpse_center(l: Sequence[float], h: int, w: int) -> Tuple[int, int]:
    """Return the integer pixel a fixation rounds to (halves round up)."""
    row, col = loc_to_pixel(l, h, w)
    return int(np.floor(row + 0.5)), int(np.floor(col + 0.5))


def crop_clamped(values: np.ndarray, center: Tuple[int, int], size: int) -> np.ndarray:
    """Cut a size×size window starting at center − size//2, replicating border pixels."""
    h, w = values.shape
    rows = np.clip(np.arange(size) + center[0] - size // 2, 0, h - 1)
    cols = np.clip(np.arange(size) + center[1] - size // 2, 0, w - 1)
    return values[np.ix_(rows, cols)]


def block_mean(patch: np.ndarray, out: int) -> np.ndarray:
    """Downsample a square patch to out×out by exact block averaging."""
    size = patch.shape[0]
    if size % out:
        raise ShapeError(f"Patch side {size} is not a multiple of {out}")
    if size == out:
        return patch.copy()
    ratio = size // out
    return patch.reshape(out, ratio, out, ratio).mean(axis=(1, 3))


def extract_glimpse(
    img: GrayImage,
    l: Sequence[float],
    scales: Sequence[int] = DEFAULT_SCALES,
    out: int = DEFAULT_PATCH,
) -> GlimpseStack:
    """Stack the block-averaged windows of every scale around a fixation."""
    scales = tuple(int(s) for s in scales)
    if any(b <= a for a, b in zip(scales, scales[1:])):
        raise ShapeError(f"Glimpse scales must be strictly increasing, got {scales}")
    center = glimpse_center(l, img.height, img.width)
    patches = np.stack(
        [block_mean(crop_clamped(img.values, center, size), out) for size in scales]
    )
    return GlimpseStack(patches, scales, center)
