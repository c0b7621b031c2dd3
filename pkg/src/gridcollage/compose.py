"""Rendering a collage raster from its member images."""

from __future__ import annotations

import io
import math
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from PIL import Image

from .grid import Arrangement, GridSpec, pos_to_rc, validate_arrangement

ImageLike = Union[Image.Image, np.ndarray, str, Path, bytes]

# 512 x 512 total for the supported grid sizes
DEFAULT_CELL_PX = {2: 256, 3: 170}
JPEG_QUALITY = 90


class ImageDecodeError(ValueError):
    pass


def _open(img: ImageLike, image_id: str) -> Image.Image:
    try:
        if isinstance(img, Image.Image):
            out = img
        elif isinstance(img, np.ndarray):
            out = Image.fromarray(np.asarray(img, dtype=np.uint8))
        elif isinstance(img, bytes):
            out = Image.open(io.BytesIO(img))
        else:
            out = Image.open(img)
        out.load()
        return out.convert("RGB")
    except Exception as exc:  # PIL raises a zoo of exception types
        raise ImageDecodeError(f"cannot decode image {image_id!r}: {exc}") from exc


def compose_collage(images: Sequence[ImageLike], arrangement: Arrangement | Sequence[int],
                    cell_px: int | None = None, ids: Sequence[str] | None = None) -> Image.Image:
    """Paste image ``j`` (bilinear-resized to ``cell_px``) into cell ``arrangement[j]``."""
    grid = GridSpec.from_k(len(images))
    validate_arrangement(arrangement, grid.k)
    if cell_px is None:
        cell_px = DEFAULT_CELL_PX.get(grid.n, 512 // grid.n)
    if cell_px < 16:
        raise ValueError("cell_px must be >= 16")
    ids = list(ids) if ids is not None else [str(j) for j in range(grid.k)]
    canvas = Image.new("RGB", (grid.n * cell_px, grid.n * cell_px))
    for j, (img, cell) in enumerate(zip(images, arrangement)):
        tile = _open(img, ids[j]).resize((cell_px, cell_px), Image.BILINEAR)
        rc = pos_to_rc(cell, grid.n)
        canvas.paste(tile, (rc.c * cell_px, rc.r * cell_px))
    return canvas


def encode_jpeg(img: Image.Image, quality: int = JPEG_QUALITY) -> bytes:
    buf = io.BytesIO()
    img.save(buf, format="JPEG", quality=quality)
    return buf.getvalue()


def cell_centers(n: int, cell_px: int) -> list[tuple[int, int]]:
    """(x, y) pixel at the centre of every cell, in cell order."""
    half = cell_px // 2
    return [(c * cell_px + half, r * cell_px + half) for r in range(n) for c in range(n)]
