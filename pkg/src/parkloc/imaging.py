"""Image loading and geometric preprocessing.

All downstream stages consume a single canonical form: row-major grayscale
float64 in [0, 1], with both dimensions a multiple of the coarse cell size
so the descriptor grids tile the image exactly. Resampling is done with an
in-package separable bilinear kernel (half-pixel centers) so results are
bit-reproducible across runs and platforms instead of depending on a codec
library's resampler.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import DecodeError, InvalidInputError
from .validation import ensure_grayscale_array

# Coarse descriptor cells are 8 px; preprocessed dims must tile by this.
COARSE_CELL = 8

# Smallest usable side length after preprocessing, in pixels.
MIN_SIDE = 32

# BT.601 luma weights for RGB -> grayscale.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

DEFAULT_TARGET_LONG_SIDE = 640


@dataclass
class Image:
    """A preprocessed grayscale image.

    pixels: (height, width) float64 array with intensities in [0, 1].
    source_id: identifier the image is known by in manifests and reports.
    original_size: (width, height) of the file before preprocessing; kept so
        detection boxes given in original-image pixels can be rescaled.
    """

    pixels: np.ndarray
    source_id: str = ""
    original_size: tuple[int, int] | None = None

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma of an (H, W, 3) uint8 array, scaled to [0, 1] float64."""
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise InvalidInputError(f"expected (H, W, 3) array, got shape {rgb.shape}")
    weights = np.asarray(LUMA_WEIGHTS, dtype=np.float64)
    return (rgb.astype(np.float64) @ weights) / 255.0


def _axis_positions(dst_len: int, src_len: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample positions for one axis under the half-pixel-center convention."""
    scale = src_len / dst_len
    pos = (np.arange(dst_len, dtype=np.float64) + 0.5) * scale - 0.5
    pos = np.clip(pos, 0.0, src_len - 1.0)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, src_len - 1)
    frac = pos - lo
    return lo, hi, frac


def bilinear_resize(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resample of a 2-D float array to (out_h, out_w)."""
    if pixels.ndim != 2:
        raise InvalidInputError(f"expected 2-D array, got shape {pixels.shape}")
    if out_h < 1 or out_w < 1:
        raise InvalidInputError(f"target size must be positive, got {out_h}x{out_w}")
    src = np.asarray(pixels, dtype=np.float64)
    if src.shape == (out_h, out_w):
        return src.copy()
    lo, hi, frac = _axis_positions(out_w, src.shape[1])
    src = src[:, lo] * (1.0 - frac) + src[:, hi] * frac
    lo, hi, frac = _axis_positions(out_h, src.shape[0])
    frac = frac[:, None]
    return src[lo, :] * (1.0 - frac) + src[hi, :] * frac


def plan_preprocessed_size(width: int, height: int, target_long_side: int) -> tuple[int, int]:
    """Resize target (width, height): long side scaled to target_long_side,
    aspect preserved, both dims then snapped down to a multiple of the
    coarse cell size. Raises if either snapped side falls below MIN_SIDE."""
    if target_long_side < MIN_SIDE:
        raise InvalidInputError(f"target_long_side must be >= {MIN_SIDE}, got {target_long_side}")
    long_side = max(width, height)
    scale = target_long_side / long_side
    new_w = int(round(width * scale))
    new_h = int(round(height * scale))
    new_w = (new_w // COARSE_CELL) * COARSE_CELL
    new_h = (new_h // COARSE_CELL) * COARSE_CELL
    if new_w < MIN_SIDE or new_h < MIN_SIDE:
        raise InvalidInputError(
            f"image of size {width}x{height} preprocesses to {new_w}x{new_h}, "
            f"below the minimum of {MIN_SIDE} px per side"
        )
    return new_w, new_h


def preprocess_pixels(gray: np.ndarray, target_long_side: int = DEFAULT_TARGET_LONG_SIDE) -> np.ndarray:
    """Resize a grayscale float array to the canonical preprocessed geometry."""
    h, w = gray.shape
    new_w, new_h = plan_preprocessed_size(w, h, target_long_side)
    return bilinear_resize(gray, new_h, new_w)


def image_from_array(
    gray: np.ndarray,
    source_id: str = "",
    target_long_side: int = DEFAULT_TARGET_LONG_SIDE,
) -> Image:
    """Build a preprocessed Image from an in-memory grayscale array."""
    ensure_grayscale_array("pixels", np.asarray(gray))
    gray = np.asarray(gray, dtype=np.float64)
    original = (gray.shape[1], gray.shape[0])
    return Image(preprocess_pixels(gray, target_long_side), source_id, original)


def load_image(
    path: str | Path,
    target_long_side: int = DEFAULT_TARGET_LONG_SIDE,
    source_id: str | None = None,
) -> Image:
    """Decode an image file and preprocess it to the canonical form.

    Grayscale files are read directly; color files are converted through
    BT.601 luma. Decode failures raise DecodeError; geometry that cannot
    satisfy the minimum size raises InvalidInputError.
    """
    path = Path(path)
    try:
        with PILImage.open(path) as img:
            img.load()
            original = (img.width, img.height)
            if img.mode == "L":
                gray = np.asarray(img, dtype=np.float64) / 255.0
            else:
                gray = to_grayscale(np.asarray(img.convert("RGB"), dtype=np.uint8))
    except (OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode image {path}: {exc}") from exc
    pixels = preprocess_pixels(gray, target_long_side)
    sid = source_id if source_id is not None else path.stem
    return Image(pixels, sid, original)


def save_grayscale_png(pixels: np.ndarray, path: str | Path) -> None:
    """Write a float [0, 1] grayscale array as an 8-bit PNG."""
    arr = np.clip(np.rint(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(arr, mode="L").save(Path(path), format="PNG")
