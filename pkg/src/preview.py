"""
Spectrogram previews for SceneMix
"""

from io import BytesIO
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ShapeError
from .fileio import write_bytes_atomic
from .logger import logger

GAP_PIXELS = 4  # dark separator between stacked channels / side-by-side panels
SCALE = 2


def _to_gray(matrix: np.ndarray) -> np.ndarray:
    """Min-max scale to 0..255 with low mel bins at the bottom."""
    matrix = np.asarray(matrix, dtype=np.float64)
    lo, hi = float(matrix.min()), float(matrix.max())
    scaled = np.zeros_like(matrix) if hi <= lo else (matrix - lo) / (hi - lo)
    return np.flipud(np.round(scaled * 255.0)).astype(np.uint8)


def _stack_channels(values: np.ndarray) -> np.ndarray:
    if values.ndim != 3:
        raise ShapeError(f"expected a [channels][n_mels][frames] patch, got shape {values.shape}")
    rows = []
    for index, channel in enumerate(values):
        if index:
            rows.append(np.zeros((GAP_PIXELS, values.shape[2]), dtype=np.uint8))
        rows.append(_to_gray(channel))
    return np.vstack(rows)


def _save(pixels: np.ndarray, path: Path) -> None:
    image = Image.fromarray(pixels)
    image = image.resize((image.width * SCALE, image.height * SCALE), Image.Resampling.NEAREST)
    buffer = BytesIO()
    image.save(buffer, format="PNG")
    write_bytes_atomic(Path(path), buffer.getvalue())
    logger.debug(f"Wrote preview {path} ({image.width}x{image.height})")


def render_patch(values: np.ndarray, path: Path) -> None:
    """PNG of one patch: each channel scaled on its own, stacked top to bottom."""
    _save(_stack_channels(values), path)


def render_mixup(a: np.ndarray, b: np.ndarray, mixed: np.ndarray, path: Path) -> None:
    """Side-by-side PNG of two patches and their mixup."""
    panels = (a, b, mixed)
    images = [_stack_channels(p) for p in panels]
    if len({img.shape for img in images}) != 1:
        raise ShapeError(f"panels differ in shape: {[p.shape for p in panels]}")
    height = images[0].shape[0]
    columns = []
    for index, img in enumerate(images):
        if index:
            columns.append(np.zeros((height, GAP_PIXELS), dtype=np.uint8))
        columns.append(img)
    _save(np.hstack(columns), path)
