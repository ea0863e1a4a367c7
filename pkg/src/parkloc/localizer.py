"""Localization: pick the gallery entry with the most surviving matches.

A query is matched against every gallery entry; vehicle filtering (when
enabled) removes matches whose endpoints sit on detected vehicles; the
entry with the highest surviving count wins and contributes its section
label. Ties go to the earliest entry in manifest order. The ratio of the
second-highest to the highest count is kept as a confidence signal
(queries whose best count is zero are flagged low-confidence and predict
the first entry's section by the tie rule).
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .errors import InvalidInputError, ParseError
from .features import FeatureBackend, FeaturePyramid, extract
from .gallery import GalleryIndex
from .imaging import Image
from .matcher import FineMatch, MatchParams, match_pyramids
from .vehicle_filter import DetectionSet, filter_matches

RESULTS_NAME = "results.txt"
COUNTS_NAME = "counts.csv"
RAW_COUNTS_NAME = "counts_raw.csv"


@dataclass
class LocalizationResult:
    query_id: str
    counts: list[int]          # per-entry counts the decision was made on
    raw_counts: list[int]      # per-entry counts before vehicle filtering
    entry_ids: tuple[str, ...]
    best_entry: str
    predicted_section: str
    best_count: int
    second_count: int
    second_best_ratio: float
    low_confidence: bool


def decide_from_counts(counts: list[int], index: GalleryIndex, query_id: str, raw: list[int]) -> LocalizationResult:
    """Turn per-entry counts into a decision. Ties pick the earliest entry."""
    best_idx = max(range(len(counts)), key=lambda i: (counts[i], -i))
    best = counts[best_idx]
    second = max((c for i, c in enumerate(counts) if i != best_idx), default=0)
    ratio = second / best if best > 0 else 0.0
    return LocalizationResult(
        query_id=query_id,
        counts=counts,
        raw_counts=raw,
        entry_ids=index.entry_ids,
        best_entry=index.entries[best_idx].source_id,
        predicted_section=index.entries[best_idx].section_id,
        best_count=best,
        second_count=second,
        second_best_ratio=ratio,
        low_confidence=best == 0,
    )


def entry_match_lists(
    query_pyramid: FeaturePyramid,
    index: GalleryIndex,
    params: MatchParams | None = None,
    jobs: int = 1,
) -> list[list[FineMatch]]:
    """Match a query pyramid against every entry, in manifest order.

    The per-entry lists are independent, so parallel execution cannot
    change them; results are always collected in entry order.
    """
    params = params or MatchParams()

    def _one(entry) -> list[FineMatch]:
        return match_pyramids(query_pyramid, entry.pyramid, params)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_one, index.entries))
    return [_one(e) for e in index.entries]


def counts_from_matches(
    match_lists: list[list[FineMatch]],
    query_detections: DetectionSet | None,
    index: GalleryIndex,
    removal_mode: str = "either",
) -> tuple[list[int], list[int]]:
    """(raw_counts, filtered_counts) per entry from cached match lists."""
    raw = [len(m) for m in match_lists]
    filtered = [
        len(filter_matches(m, query_detections, entry.detections, removal_mode))
        for m, entry in zip(match_lists, index.entries)
    ]
    return raw, filtered


def localize_pyramid(
    query_id: str,
    query_pyramid: FeaturePyramid,
    query_detections: DetectionSet | None,
    index: GalleryIndex,
    params: MatchParams | None = None,
    use_vehicle_filter: bool = True,
    removal_mode: str = "either",
    jobs: int = 1,
) -> LocalizationResult:
    if not index.entries:
        raise InvalidInputError("gallery index has no entries")
    match_lists = entry_match_lists(query_pyramid, index, params, jobs)
    raw, filtered = counts_from_matches(match_lists, query_detections, index, removal_mode)
    counts = filtered if use_vehicle_filter else raw
    return decide_from_counts(counts, index, query_id, raw)


def localize(
    query_image: Image,
    query_detections: DetectionSet | None,
    index: GalleryIndex,
    params: MatchParams | None = None,
    backend: FeatureBackend | None = None,
    use_vehicle_filter: bool = True,
    removal_mode: str = "either",
    jobs: int = 1,
) -> LocalizationResult:
    """Localize one preprocessed query image against a gallery index."""
    pyramid = extract(query_image, backend)
    return localize_pyramid(
        query_image.source_id, pyramid, query_detections, index,
        params, use_vehicle_filter, removal_mode, jobs,
    )


# ---------------------------------------------------------------------------
# result-file IO

def format_match_line(m: FineMatch) -> str:
    return (
        f"{m.point_a[0]:.3f} {m.point_a[1]:.3f} "
        f"{m.point_b[0]:.3f} {m.point_b[1]:.3f} {m.confidence:.3f}"
    )


def write_results(
    results: list[LocalizationResult], path: str | Path, config_echo: dict | None = None
) -> None:
    """Line format: query_id predicted_section best_entry best_count
    second_count ratio (ratio fixed to 6 decimals)."""
    lines = ["# parkloc results v1"]
    if config_echo is not None:
        lines.append("# config: " + json.dumps(config_echo, sort_keys=True))
    for r in results:
        lines.append(
            f"{r.query_id} {r.predicted_section} {r.best_entry} "
            f"{r.best_count} {r.second_count} {r.second_best_ratio:.6f}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class ResultRecord:
    """One parsed line of a results file."""

    query_id: str
    predicted_section: str
    best_entry: str
    best_count: int
    second_count: int
    second_best_ratio: float


def read_results(path: str | Path) -> list[ResultRecord]:
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ParseError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
            try:
                records.append(
                    ResultRecord(
                        parts[0], parts[1], parts[2],
                        int(parts[3]), int(parts[4]), float(parts[5]),
                    )
                )
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return records


def write_counts_csv(
    results: list[LocalizationResult],
    path: str | Path,
    config_echo: dict | None = None,
    raw: bool = False,
) -> None:
    if not results:
        raise InvalidInputError("no results to write")
    lines = []
    if config_echo is not None:
        lines.append("# config: " + json.dumps(config_echo, sort_keys=True))
    lines.append("query_id," + ",".join(results[0].entry_ids))
    for r in results:
        values = r.raw_counts if raw else r.counts
        lines.append(r.query_id + "," + ",".join(str(v) for v in values))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_counts_csv(path: str | Path) -> tuple[tuple[str, ...], list[tuple[str, list[int]]]]:
    """Returns (entry_ids, [(query_id, counts), ...])."""
    path = Path(path)
    entry_ids: tuple[str, ...] | None = None
    rows: list[tuple[str, list[int]]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            cells = line.split(",")
            if entry_ids is None:
                if cells[0] != "query_id" or len(cells) < 2:
                    raise ParseError(f"{path}:{lineno}: bad counts header")
                entry_ids = tuple(cells[1:])
                continue
            if len(cells) != len(entry_ids) + 1:
                raise ParseError(
                    f"{path}:{lineno}: expected {len(entry_ids) + 1} cells, got {len(cells)}"
                )
            try:
                rows.append((cells[0], [int(v) for v in cells[1:]]))
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    if entry_ids is None:
        raise ParseError(f"{path}: missing header row")
    return entry_ids, rows
