"""Define scanpath rendering of an episode's fixations over its image."""
import base64
import io
import logging
from typing import List, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np
from PIL import Image, ImageDraw

from .imgproc import GrayImage, loc_to_pixel
from .net import EpisodeTrace

_LOGGER: logging.Logger = logging.getLogger(__name__)

SCALE_COLORS: Tuple[str, ...] = ("#e41a1c", "#ff7f00", "#377eb8")
PATH_COLOR: str = "#4daf4a"

Box = Tuple[int, int, int, int]


def fixation_boxes(
    center: Tuple[int, int], scales: Sequence[int], height: int, width: int
) -> List[Box]:
    """Return each scale's window as (top, left, bottom, right), clamped to the image."""
    boxes = []
    for size in scales:
        top = center[0] - size // 2
        left = center[1] - size // 2
        boxes.append(
            (
                max(0, top),
                max(0, left),
                min(height, top + size),
                min(width, left + size),
            )
        )
    return boxes


def _png_base64(img: GrayImage) -> str:
    values = img.values
    span = float(np.ptp(values))
    scaled = (values - values.min()) / span if span > 0 else np.zeros_like(values)
    array = np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)
    buffer = io.BytesIO()
    Image.fromarray(array, mode="L").save(buffer, format="PNG")
    return base64.b64encode(buffer.getvalue()).decode("ascii")


def render_svg(
    img: GrayImage, trace: EpisodeTrace, scales: Sequence[int], title: str = ""
) -> str:
    """
    Return an SVG of the image with one numbered group per fixation.

    Each group carries the exact continuous centre as data-row/data-col and one
    rectangle per glimpse scale.
    """
    height, width = img.shape
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" '
        f'width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
    ]
    if title:
        parts.append(f"<title>{escape(title)}</title>")
    parts.append(
        f'<image x="0" y="0" width="{width}" height="{height}" '
        f'xlink:href="data:image/png;base64,{_png_base64(img)}"/>'
    )
    points = []
    for number, step in enumerate(trace.steps, start=1):
        row, col = loc_to_pixel(step.location, height, width)
        points.append(f"{step.center[1]},{step.center[0]}")
        parts.append(
            f'<g class="fixation" data-step="{number}" data-row="{row!r}" data-col="{col!r}">'
        )
        for color, (top, left, bottom, right) in zip(
            SCALE_COLORS, fixation_boxes(step.center, scales, height, width)
        ):
            parts.append(
                f'<rect x="{left}" y="{top}" width="{right - left}" height="{bottom - top}" '
                f'fill="none" stroke="{color}" stroke-width="1"/>'
            )
        parts.append(
            f'<text x="{step.center[1]}" y="{step.center[0]}" fill="{PATH_COLOR}" '
            f'font-size="12" text-anchor="middle">{number}</text>'
        )
        parts.append("</g>")
    if len(points) > 1:
        parts.append(
            f'<polyline points="{" ".join(points)}" fill="none" stroke="{PATH_COLOR}" '
            f'stroke-dasharray="3,2"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(
    img: GrayImage, trace: EpisodeTrace, scales: Sequence[int], path: str, title: str = ""
) -> None:
    with open(path, "w", encoding="utf-8") as fptr:
        fptr.write(render_svg(img, trace, scales, title))
    _LOGGER.info("Wrote scanpath %s", path)


def write_png(img: GrayImage, trace: EpisodeTrace, scales: Sequence[int], path: str) -> None:
    """Rasterise the same overlay to a PNG file."""
    height, width = img.shape
    raster = Image.open(io.BytesIO(base64.b64decode(_png_base64(img)))).convert("RGB")
    draw = ImageDraw.Draw(raster)
    centers = []
    for number, step in enumerate(trace.steps, start=1):
        for color, (top, left, bottom, right) in zip(
            SCALE_COLORS, fixation_boxes(step.center, scales, height, width)
        ):
            draw.rectangle((left, top, right - 1, bottom - 1), outline=color)
        draw.text((step.center[1], step.center[0]), str(number), fill=PATH_COLOR)
        centers.append((step.center[1], step.center[0]))
    if len(centers) > 1:
        draw.line(centers, fill=PATH_COLOR)
    raster.save(path)
    _LOGGER.info("Wrote scanpath %s", path)
