"""Vehicle-aware match filtering.

Vehicles move between the gallery pass and a query, so correspondences
that land on a vehicle say nothing about *where* the camera is; worse,
two different sections can contain identical-looking vehicles. This
module drops matches whose endpoints fall inside detector-reported
vehicle boxes before matches are counted for localization.

Detection files are plain text, one box per line:

    source_id class score x_min y_min x_max y_max

with '#' starting a comment. Coordinates are pixels in the original
image; they are rescaled to the preprocessed frame using per-image scale
factors. Box boundaries are inclusive: a point exactly on an edge counts
as inside.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidInputError, ParseError
from .matcher import FineMatch

logger = logging.getLogger(__name__)

VEHICLE_CLASSES = frozenset({"car", "truck", "bus", "motorcycle"})
DEFAULT_MIN_SCORE = 0.5

# Removal modes: "either" drops a match when the point in A or the point
# in B is on a vehicle; "both" only when both are. Either is the default
# because one moved vehicle already invalidates the correspondence.
REMOVAL_MODES = ("either", "both")


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    class_label: str = "car"
    score: float = 1.0

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def scaled(self, sx: float, sy: float) -> "BoundingBox":
        return BoundingBox(
            self.x_min * sx, self.y_min * sy, self.x_max * sx, self.y_max * sy,
            self.class_label, self.score,
        )


@dataclass
class DetectionSet:
    """All retained vehicle boxes for one image."""

    source_id: str
    boxes: list[BoundingBox] = field(default_factory=list)

    def contains_point(self, x: float, y: float) -> bool:
        return any(b.contains(x, y) for b in self.boxes)

    def prune_outside(self, width: int, height: int) -> "DetectionSet":
        """Drop boxes that do not intersect the frame [0, w-1] x [0, h-1]."""
        kept = []
        for b in self.boxes:
            if b.x_max >= 0 and b.x_min <= width - 1 and b.y_max >= 0 and b.y_min <= height - 1:
                kept.append(b)
            else:
                logger.warning(
                    "%s: dropping box %s outside the %dx%d frame",
                    self.source_id, b, width, height,
                )
        return DetectionSet(self.source_id, kept)


def load_detections(
    path: str | Path,
    scales: dict[str, tuple[float, float]] | None = None,
    classes: frozenset[str] | set[str] = VEHICLE_CLASSES,
    min_score: float = DEFAULT_MIN_SCORE,
) -> dict[str, DetectionSet]:
    """Parse a detection file into per-image DetectionSets.

    Only boxes of the requested classes with score >= min_score are kept.
    scales maps source_id -> (sx, sy) taking original-image pixels to the
    preprocessed frame; ids missing from the map keep their coordinates
    and trigger a warning so resolution mismatches do not pass silently.
    """
    path = Path(path)
    sets: dict[str, DetectionSet] = {}
    unknown: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 7:
                raise ParseError(
                    f"{path}:{lineno}: expected 7 fields "
                    f"(source_id class score x_min y_min x_max y_max), got {len(parts)}"
                )
            source_id, label = parts[0], parts[1]
            try:
                score = float(parts[2])
                coords = tuple(float(v) for v in parts[3:7])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: non-numeric field: {exc}") from exc
            if not 0.0 <= score <= 1.0:
                raise ParseError(f"{path}:{lineno}: score {score} outside [0, 1]")
            x_min, y_min, x_max, y_max = coords
            if not (x_min < x_max and y_min < y_max):
                raise ParseError(
                    f"{path}:{lineno}: degenerate box ({x_min}, {y_min}, {x_max}, {y_max})"
                )
            if label not in classes or score < min_score:
                continue
            box = BoundingBox(x_min, y_min, x_max, y_max, label, score)
            if scales is not None:
                if source_id in scales:
                    box = box.scaled(*scales[source_id])
                else:
                    unknown.add(source_id)
            sets.setdefault(source_id, DetectionSet(source_id)).boxes.append(box)
    for sid in sorted(unknown):
        logger.warning(
            "%s: source_id %r not in the scale map; keeping its boxes unscaled", path, sid
        )
    return sets


def filter_matches(
    matches: list[FineMatch],
    detections_a: DetectionSet | None,
    detections_b: DetectionSet | None,
    mode: str = "either",
) -> list[FineMatch]:
    """Return the matches that survive vehicle removal, order preserved.

    mode "either": a match dies when its endpoint in image A lies in any
    of A's boxes or its endpoint in B lies in any of B's boxes.
    mode "both": it dies only when both endpoints lie on vehicles.
    No detections on a side means nothing is inside on that side.
    """
    if mode not in REMOVAL_MODES:
        raise InvalidInputError(
            f"unknown removal mode {mode!r}, expected one of {REMOVAL_MODES}"
        )
    kept = []
    for m in matches:
        in_a = detections_a.contains_point(*m.point_a) if detections_a else False
        in_b = detections_b.contains_point(*m.point_b) if detections_b else False
        dropped = (in_a or in_b) if mode == "either" else (in_a and in_b)
        if not dropped:
            kept.append(m)
    return kept
