"""Dense two-level descriptor grids and their on-disk format.

The matcher consumes a two-level pyramid per image: a coarse grid at 1/8
resolution used for candidate matching and a fine grid at 1/2 resolution
used for subpixel refinement. The built-in backend computes oriented
gradient histograms; descriptors can instead be injected from files
produced by any external extractor that writes the same binary format.

Built-in descriptor, per grid cell:
  * take a window of twice the cell size centered on the cell
    (16x16 px around each 8 px coarse cell, 4x4 px around each 2 px fine
    cell), clipped at image borders;
  * split the window into a 2x2 grid of subcells;
  * in each subcell accumulate a magnitude-weighted histogram of unsigned
    gradient orientation (mod 180 degrees) over 8 equal bins of 22.5
    degrees, bin 0 starting at angle 0 (x-axis right, y down);
  * concatenate (subcells row-major, bins innermost) and L2-normalize.

A window with no gradient energy yields the zero vector and is flagged
textureless; such cells never take part in matching.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidInputError, LoadError
from .imaging import COARSE_CELL, Image

FINE_CELL = 2
N_BINS = 8
SUBCELLS = 2  # per axis; descriptor dim = SUBCELLS**2 * N_BINS
DESCRIPTOR_DIM = SUBCELLS * SUBCELLS * N_BINS

# Raw histogram energy below this means "no texture in the window".
TEXTURELESS_EPS = 1e-8
# Norms within this of 1.0 are left untouched so renormalization is idempotent.
UNIT_NORM_TOL = 1e-6

FILE_MAGIC = b"PKLF"
FILE_VERSION = 1
_HEADER_FIXED = struct.Struct("<4sII")
_HEADER_LEVEL = struct.Struct("<III")

BUILTIN_BACKEND = "builtin-hog"
INJECTED_BACKEND = "injected-file"


@dataclass
class FeaturePyramid:
    """Descriptor grids for one image.

    coarse: (Hc, Wc, Dc) float32, one descriptor per coarse_cell px cell.
    fine:   (Hf, Wf, Df) float32, one descriptor per fine_cell px cell.
    """

    coarse: np.ndarray
    fine: np.ndarray
    source_id: str = ""
    coarse_cell: int = COARSE_CELL
    fine_cell: int = FINE_CELL

    def validate(self) -> None:
        for name, grid in (("coarse", self.coarse), ("fine", self.fine)):
            if grid.ndim != 3:
                raise InvalidInputError(f"{name} grid must be 3-D, got shape {grid.shape}")
            if grid.shape[2] < 8:
                raise InvalidInputError(
                    f"{name} descriptor dim must be >= 8, got {grid.shape[2]}"
                )
            if grid.dtype != np.float32:
                raise InvalidInputError(f"{name} grid must be float32, got {grid.dtype}")
        ratio = self.coarse_cell // self.fine_cell
        if (
            self.fine.shape[0] != self.coarse.shape[0] * ratio
            or self.fine.shape[1] != self.coarse.shape[1] * ratio
        ):
            raise InvalidInputError(
                f"fine grid {self.fine.shape[:2]} does not tile the coarse grid "
                f"{self.coarse.shape[:2]} at ratio {ratio}"
            )

    @property
    def coarse_textureless(self) -> np.ndarray:
        """Boolean (Hc, Wc) mask of cells carrying the zero descriptor."""
        return np.linalg.norm(self.coarse.astype(np.float64), axis=2) < 1e-12


@dataclass(frozen=True)
class FeatureBackend:
    """Which extractor fills the pyramid: built-in or injected from files."""

    kind: str = BUILTIN_BACKEND
    directory: Path | None = None

    def __post_init__(self) -> None:
        if self.kind not in (BUILTIN_BACKEND, INJECTED_BACKEND):
            raise InvalidInputError(f"unknown feature backend kind {self.kind!r}")
        if self.kind == INJECTED_BACKEND and self.directory is None:
            raise InvalidInputError("injected-file backend requires a directory")

    @classmethod
    def from_spec(cls, spec: str) -> "FeatureBackend":
        """Parse a backend spec string: "hog" or "injected:<dir>"."""
        if spec in ("hog", BUILTIN_BACKEND):
            return cls(BUILTIN_BACKEND)
        if spec.startswith("injected:"):
            return cls(INJECTED_BACKEND, Path(spec.split(":", 1)[1]))
        raise InvalidInputError(f"cannot parse backend spec {spec!r}")

    def spec_string(self) -> str:
        if self.kind == BUILTIN_BACKEND:
            return "hog"
        return f"injected:{self.directory}"


def _gradient_bins(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel orientation bin index and gradient magnitude.

    Orientation is unsigned (mod 180 degrees), so the two flanks of a thin
    ridge land in the same bin; 8 bins of 22.5 degrees each.
    """
    gy, gx = np.gradient(gray.astype(np.float64))
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx) % np.pi
    bins = np.floor(ang / (np.pi / N_BINS)).astype(np.int64) % N_BINS
    return bins, mag


def _integral_per_bin(bins: np.ndarray, mag: np.ndarray) -> np.ndarray:
    """(N_BINS, H+1, W+1) summed-area tables of binned gradient magnitude."""
    h, w = mag.shape
    tables = np.zeros((N_BINS, h + 1, w + 1), dtype=np.float64)
    for b in range(N_BINS):
        masked = np.where(bins == b, mag, 0.0)
        tables[b, 1:, 1:] = masked.cumsum(axis=0).cumsum(axis=1)
    return tables


def grid_descriptors(gray: np.ndarray, cell: int) -> np.ndarray:
    """Raw (unnormalized) descriptor grid for one pyramid level.

    Returns (H//cell, W//cell, DESCRIPTOR_DIM) float64. Windows are clipped
    to the image, so border cells integrate a smaller support.
    """
    h, w = gray.shape
    if h % cell or w % cell:
        raise InvalidInputError(f"image {w}x{h} does not tile by cell size {cell}")
    rows, cols = h // cell, w // cell
    bins, mag = _gradient_bins(gray)
    tables = _integral_per_bin(bins, mag)
    half = cell // 2

    out = np.empty((rows, cols, DESCRIPTOR_DIM), dtype=np.float64)
    top = np.arange(rows, dtype=np.int64) * cell - half
    left = np.arange(cols, dtype=np.int64) * cell - half
    sub = 0
    for dy in (0, cell):
        y0 = np.clip(top + dy, 0, h)
        y1 = np.clip(top + dy + cell, 0, h)
        for dx in (0, cell):
            x0 = np.clip(left + dx, 0, w)
            x1 = np.clip(left + dx + cell, 0, w)
            for b in range(N_BINS):
                t = tables[b]
                out[:, :, sub * N_BINS + b] = (
                    t[y1[:, None], x1[None, :]]
                    - t[y0[:, None], x1[None, :]]
                    - t[y1[:, None], x0[None, :]]
                    + t[y0[:, None], x0[None, :]]
                )
            sub += 1
    return out


def _normalize_grid(raw: np.ndarray) -> np.ndarray:
    """L2-normalize raw descriptors; windows without energy become zeros."""
    norms = np.linalg.norm(raw, axis=2)
    textureless = norms < TEXTURELESS_EPS
    safe = np.where(textureless, 1.0, norms)
    out = raw / safe[:, :, None]
    out[textureless] = 0.0
    return out.astype(np.float32)


def renormalize(grid: np.ndarray) -> np.ndarray:
    """Rescale descriptors to unit norm. Idempotent: vectors already within
    UNIT_NORM_TOL of unit length and zero vectors pass through unchanged."""
    g = np.asarray(grid)
    norms = np.linalg.norm(g.astype(np.float64), axis=-1)
    zero = norms < 1e-12
    unit = np.abs(norms - 1.0) <= UNIT_NORM_TOL
    scale = np.where(zero | unit, 1.0, norms)
    out = (g.astype(np.float64) / scale[..., None]).astype(np.float32)
    out[zero] = 0.0
    keep = unit & ~zero
    out[keep] = g[keep]
    return out


def extract(image: Image, backend: FeatureBackend | None = None) -> FeaturePyramid:
    """Compute or load the descriptor pyramid for a preprocessed image."""
    backend = backend or FeatureBackend()
    h, w = image.pixels.shape
    if h % COARSE_CELL or w % COARSE_CELL:
        raise InvalidInputError(
            f"image {w}x{h} is not preprocessed (dims must tile by {COARSE_CELL})"
        )
    if not np.isfinite(image.pixels).all():
        raise InvalidInputError("image pixels contain NaN or inf")

    if backend.kind == BUILTIN_BACKEND:
        coarse = _normalize_grid(grid_descriptors(image.pixels, COARSE_CELL))
        fine = _normalize_grid(grid_descriptors(image.pixels, FINE_CELL))
        pyr = FeaturePyramid(coarse, fine, image.source_id)
    else:
        path = Path(backend.directory) / f"{image.source_id}.pklf"
        if not path.is_file():
            raise LoadError(f"injected feature file not found: {path}")
        loaded = load_pyramid(path)
        expected_coarse = (h // COARSE_CELL, w // COARSE_CELL)
        expected_fine = (h // FINE_CELL, w // FINE_CELL)
        if loaded.coarse.shape[:2] != expected_coarse or loaded.fine.shape[:2] != expected_fine:
            raise InvalidInputError(
                f"injected grids {loaded.coarse.shape[:2]}/{loaded.fine.shape[:2]} do not "
                f"match image grids {expected_coarse}/{expected_fine} for {image.source_id!r}"
            )
        pyr = FeaturePyramid(
            renormalize(loaded.coarse), renormalize(loaded.fine), image.source_id
        )
    pyr.validate()
    return pyr


def save_pyramid(pyramid: FeaturePyramid, path: str | Path) -> None:
    """Write a pyramid to the binary feature format (see load_pyramid)."""
    pyramid.validate()
    parts = [_HEADER_FIXED.pack(FILE_MAGIC, FILE_VERSION, 2)]
    for grid in (pyramid.coarse, pyramid.fine):
        parts.append(_HEADER_LEVEL.pack(*grid.shape))
    for grid in (pyramid.coarse, pyramid.fine):
        parts.append(np.ascontiguousarray(grid, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_pyramid(path: str | Path) -> FeaturePyramid:
    """Read the binary feature format.

    Layout, all little-endian: magic "PKLF", version u32, level count u32,
    then rows/cols/dims u32 per level, then the levels' float32 payloads in
    C order, coarse first. Cell sizes are fixed by the format version
    (8 px coarse, 2 px fine). The source id is the file's stem.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER_FIXED.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, levels = _HEADER_FIXED.unpack_from(data, 0)
    if magic != FILE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FILE_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if levels != 2:
        raise FormatError(f"{path}: expected 2 levels, found {levels}")

    offset = _HEADER_FIXED.size
    shapes = []
    for _ in range(levels):
        if offset + _HEADER_LEVEL.size > len(data):
            raise FormatError(f"{path}: truncated level header")
        shapes.append(_HEADER_LEVEL.unpack_from(data, offset))
        offset += _HEADER_LEVEL.size

    grids = []
    for rows, cols, dims in shapes:
        count = rows * cols * dims
        nbytes = count * 4
        if offset + nbytes > len(data):
            raise FormatError(f"{path}: payload shorter than header promises")
        grid = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        grids.append(grid.reshape(rows, cols, dims).copy())
        offset += nbytes
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes")

    pyr = FeaturePyramid(grids[0], grids[1], path.stem)
    pyr.validate()
    return pyr
