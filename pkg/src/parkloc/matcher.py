"""Coarse-to-fine dense matching between two descriptor pyramids.

Coarse stage: similarities between all pairs of coarse descriptors are
scaled by a temperature and turned into a soft mutual-assignment score by
multiplying the row-wise and column-wise softmax of the similarity matrix
(dual softmax). A cell pair is accepted when each side is the other's
argmax and the combined score clears a confidence threshold. Cells flagged
textureless never enter the computation.

Fine stage: each accepted coarse pair is refined on the 1/2-resolution
grid. The fine descriptor at the center of the match in image A is
correlated with every descriptor in a w x w window around the match in
image B; a softmax over those correlations gives a heatmap whose
expectation yields a subpixel offset. The refined point in A is the exact
pixel center of the coarse cell; the point in B is the window center
shifted by the expected offset. Windows that would leave the grid are
shifted inside and flagged, never dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .features import FeatureBackend, FeaturePyramid, extract
from .imaging import Image
from .validation import ensure_odd_window, ensure_positive

DEFAULT_TEMPERATURE = 0.1
DEFAULT_THRESHOLD = 0.2
DEFAULT_WINDOW = 5


@dataclass(frozen=True)
class MatchParams:
    """Knobs of the two matching stages.

    temperature: divisor applied to raw similarities before both the coarse
        dual softmax and the fine heatmap softmax. Lower = sharper.
    threshold: minimum dual-softmax score for a coarse match.
    window: odd side length, in fine cells, of the refinement window.
    """

    temperature: float = DEFAULT_TEMPERATURE
    threshold: float = DEFAULT_THRESHOLD
    window: int = DEFAULT_WINDOW

    def validate(self) -> None:
        ensure_positive("temperature", self.temperature)
        if not 0.0 <= self.threshold < 1.0:
            raise InvalidInputError(f"threshold must lie in [0, 1), got {self.threshold!r}")
        ensure_odd_window("window", self.window)


@dataclass(frozen=True)
class CoarseMatch:
    """A mutual coarse-cell correspondence. Cells are flat row-major indices
    into each image's coarse grid."""

    cell_a: int
    cell_b: int
    confidence: float


@dataclass(frozen=True)
class FineMatch:
    """A refined correspondence in preprocessed-image pixel coordinates
    (x right, y down, pixel centers at integer coordinates)."""

    point_a: tuple[float, float]
    point_b: tuple[float, float]
    confidence: float
    clamped: bool = False


def _softmax(scores: np.ndarray, axis: int) -> np.ndarray:
    shifted = scores - scores.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def match_descriptor_sets(
    desc_a: np.ndarray,
    desc_b: np.ndarray,
    temperature: float = DEFAULT_TEMPERATURE,
    threshold: float = DEFAULT_THRESHOLD,
) -> list[tuple[int, int, float]]:
    """Dual-softmax mutual-argmax matching between two descriptor sets.

    desc_a: (Na, D), desc_b: (Nb, D). Returns (i, j, confidence) triples
    sorted by (i, j). This is the raw kernel; textureless exclusion and
    grid index bookkeeping live in coarse_match.
    """
    ensure_positive("temperature", temperature)
    a = np.asarray(desc_a, dtype=np.float64)
    b = np.asarray(desc_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise InvalidInputError(
            f"descriptor sets must be (N, D) with equal D, got {a.shape} and {b.shape}"
        )
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise InvalidInputError("descriptors contain NaN or inf")
    if a.shape[0] == 0 or b.shape[0] == 0:
        return []

    scores = (a @ b.T) / temperature
    p = _softmax(scores, axis=1) * _softmax(scores, axis=0)

    best_j = p.argmax(axis=1)
    best_i = p.argmax(axis=0)
    rows = np.arange(a.shape[0])
    conf = p[rows, best_j]
    accepted = (best_i[best_j] == rows) & (conf > threshold)
    idx = np.nonzero(accepted)[0]
    return [(int(i), int(best_j[i]), float(conf[i])) for i in idx]


def coarse_match(
    pyr_a: FeaturePyramid,
    pyr_b: FeaturePyramid,
    temperature: float = DEFAULT_TEMPERATURE,
    threshold: float = DEFAULT_THRESHOLD,
) -> list[CoarseMatch]:
    """Match the coarse grids of two pyramids.

    Textureless cells on either side are excluded before the softmax, so
    they neither emit matches nor dilute the probabilities of real cells.
    Returned matches are sorted by (cell_a, cell_b).
    """
    if pyr_a.coarse.shape[2] != pyr_b.coarse.shape[2]:
        raise InvalidInputError(
            f"coarse descriptor dims differ: {pyr_a.coarse.shape[2]} vs "
            f"{pyr_b.coarse.shape[2]}"
        )
    flat_a = pyr_a.coarse.reshape(-1, pyr_a.coarse.shape[2])
    flat_b = pyr_b.coarse.reshape(-1, pyr_b.coarse.shape[2])
    valid_a = np.nonzero(~pyr_a.coarse_textureless.reshape(-1))[0]
    valid_b = np.nonzero(~pyr_b.coarse_textureless.reshape(-1))[0]
    if valid_a.size == 0 or valid_b.size == 0:
        return []

    triples = match_descriptor_sets(
        flat_a[valid_a], flat_b[valid_b], temperature, threshold
    )
    matches = [
        CoarseMatch(int(valid_a[i]), int(valid_b[j]), conf) for i, j, conf in triples
    ]
    matches.sort(key=lambda m: (m.cell_a, m.cell_b))
    return matches


def softmax_heatmap(correlations: np.ndarray, temperature: float = DEFAULT_TEMPERATURE) -> np.ndarray:
    """Normalize a square grid of correlations into a probability heatmap."""
    ensure_positive("temperature", temperature)
    c = np.asarray(correlations, dtype=np.float64)
    flat = c.reshape(-1) / temperature
    flat = np.exp(flat - flat.max())
    return (flat / flat.sum()).reshape(c.shape)


def expectation_offset(heatmap: np.ndarray) -> tuple[float, float]:
    """Expected (dx, dy) of a w x w heatmap, in cells, relative to its
    center cell. A delta at the center gives (0, 0); all mass in the
    top-left corner of a 5 x 5 map gives (-2, -2)."""
    h = np.asarray(heatmap, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise InvalidInputError(f"heatmap must be square, got shape {h.shape}")
    w = h.shape[0]
    offs = np.arange(w, dtype=np.float64) - (w // 2)
    dx = float((h.sum(axis=0) * offs).sum())
    dy = float((h.sum(axis=1) * offs).sum())
    return dx, dy


def _cell_center_px(index: int, cell: int) -> float:
    # pixel center of a grid cell along one axis
    return (index + 0.5) * cell - 0.5


def _center_fine_index(coarse_index: int, coarse_cell: int, fine_cell: int) -> int:
    # fine cell containing the coarse cell's pixel center (ties floor)
    return (coarse_index * coarse_cell + (coarse_cell - 1) // 2) // fine_cell


def refine_matches(
    matches: list[CoarseMatch],
    pyr_a: FeaturePyramid,
    pyr_b: FeaturePyramid,
    window: int = DEFAULT_WINDOW,
    temperature: float = DEFAULT_TEMPERATURE,
) -> list[FineMatch]:
    """Refine coarse matches to subpixel correspondences (batched)."""
    ensure_odd_window("window", window)
    ensure_positive("temperature", temperature)
    if not matches:
        return []
    hf_b, wf_b = pyr_b.fine.shape[:2]
    if window > hf_b or window > wf_b:
        raise InvalidInputError(
            f"window {window} exceeds fine grid {wf_b}x{hf_b} of image B"
        )

    wc_a = pyr_a.coarse.shape[1]
    wc_b = pyr_b.coarse.shape[1]
    cells_a = np.array([m.cell_a for m in matches], dtype=np.int64)
    cells_b = np.array([m.cell_b for m in matches], dtype=np.int64)
    rows_a, cols_a = np.divmod(cells_a, wc_a)
    rows_b, cols_b = np.divmod(cells_b, wc_b)

    cc, fc = pyr_a.coarse_cell, pyr_a.fine_cell
    half = window // 2

    # A side: the single fine descriptor under each coarse cell center.
    fr_a = (rows_a * cc + (cc - 1) // 2) // fc
    fc_a = (cols_a * cc + (cc - 1) // 2) // fc
    center_vecs = pyr_a.fine[fr_a, fc_a].astype(np.float64)  # (M, D)

    # B side: w x w windows centered on the match, shifted inside the grid.
    fr_b = (rows_b * cc + (cc - 1) // 2) // fc
    fc_b = (cols_b * cc + (cc - 1) // 2) // fc
    top = np.clip(fr_b - half, 0, hf_b - window)
    left = np.clip(fc_b - half, 0, wf_b - window)
    clamped = (top != fr_b - half) | (left != fc_b - half)

    steps = np.arange(window, dtype=np.int64)
    win_rows = top[:, None] + steps  # (M, w)
    win_cols = left[:, None] + steps
    windows = pyr_b.fine[win_rows[:, :, None], win_cols[:, None, :]].astype(np.float64)

    corr = np.einsum("mijd,md->mij", windows, center_vecs)
    flat = corr.reshape(len(matches), -1) / temperature
    flat = np.exp(flat - flat.max(axis=1, keepdims=True))
    heat = (flat / flat.sum(axis=1, keepdims=True)).reshape(corr.shape)

    offs = np.arange(window, dtype=np.float64) - half
    dx = (heat.sum(axis=1) * offs).sum(axis=1)
    dy = (heat.sum(axis=2) * offs).sum(axis=1)

    center_rows = top + half
    center_cols = left + half
    # A's sampled fine vector sits q px off the exact coarse center (the
    # center never falls on a fine-cell center when cc/fc is even); shift
    # point_b by -q so both endpoints refer to the coarse-center content.
    # Self-match then reports exactly zero displacement.
    qx = fc_a * fc + (fc - 1) / 2.0 - (cols_a * cc + (cc - 1) / 2.0)
    qy = fr_a * fc + (fc - 1) / 2.0 - (rows_a * cc + (cc - 1) / 2.0)
    bx = (center_cols + dx) * fc + (fc - 1) / 2.0 - qx
    by = (center_rows + dy) * fc + (fc - 1) / 2.0 - qy
    ax = (cols_a + 0.5) * cc - 0.5
    ay = (rows_a + 0.5) * cc - 0.5

    return [
        FineMatch(
            (float(ax[k]), float(ay[k])),
            (float(bx[k]), float(by[k])),
            matches[k].confidence,
            bool(clamped[k]),
        )
        for k in range(len(matches))
    ]


def refine_match(
    match: CoarseMatch,
    pyr_a: FeaturePyramid,
    pyr_b: FeaturePyramid,
    window: int = DEFAULT_WINDOW,
    temperature: float = DEFAULT_TEMPERATURE,
) -> FineMatch:
    """Refine a single coarse match. See refine_matches."""
    return refine_matches([match], pyr_a, pyr_b, window, temperature)[0]


def match_pyramids(
    pyr_a: FeaturePyramid, pyr_b: FeaturePyramid, params: MatchParams | None = None
) -> list[FineMatch]:
    """Full coarse-to-fine matching between two extracted pyramids."""
    params = params or MatchParams()
    params.validate()
    coarse = coarse_match(pyr_a, pyr_b, params.temperature, params.threshold)
    return refine_matches(coarse, pyr_a, pyr_b, params.window, params.temperature)


def match_pair(
    image_a: Image,
    image_b: Image,
    backend: FeatureBackend | None = None,
    params: MatchParams | None = None,
) -> list[FineMatch]:
    """Extract pyramids for two preprocessed images and match them.

    Matches come back ordered by A's cell in row-major order, then B's.
    """
    pyr_a = extract(image_a, backend)
    pyr_b = extract(image_b, backend)
    return match_pyramids(pyr_a, pyr_b, params)
