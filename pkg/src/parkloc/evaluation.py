"""Evaluation protocol for localization runs.

A query counts as correct when the predicted section is one of its
annotated section labels (boundary-straddling views carry two). On top of
plain accuracy the module produces the two diagnostic artifacts used to
inspect a run: the query-by-entry match-count matrix normalized per row
by its maximum, and a histogram of second-best/best count ratios, which
measures how decisively queries were localized.

The vehicle-remover ablation runs both arms from one matching pass: raw
matches per (query, entry) pair are computed once, then counted with and
without vehicle filtering.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EvaluationError
from .features import FeatureBackend, extract
from .gallery import GalleryIndex, parse_manifest
from .imaging import Image, save_grayscale_png
from .localizer import (
    LocalizationResult,
    counts_from_matches,
    decide_from_counts,
    entry_match_lists,
)
from .matcher import MatchParams
from .vehicle_filter import DetectionSet

DEFAULT_RATIO_BINS = 20


@dataclass(frozen=True)
class QueryAnnotation:
    """Ground truth for one query: 1 or 2 section labels."""

    query_id: str
    image_path: str
    labels: tuple[str, ...]


@dataclass(frozen=True)
class Verdict:
    query_id: str
    predicted_section: str
    labels: tuple[str, ...]
    correct: bool


@dataclass
class RatioHistogram:
    bin_edges: np.ndarray  # (bins + 1,) equal-width edges over [0, 1]
    counts: np.ndarray     # (bins,) occupancy; top bin includes 1.0
    mean: float
    median: float


@dataclass
class EvalReport:
    n_queries: int
    n_correct: int
    accuracy: float
    verdicts: list[Verdict]
    query_ids: tuple[str, ...]
    entry_ids: tuple[str, ...]
    count_matrix: np.ndarray       # (n_queries, n_entries)
    normalized_matrix: np.ndarray
    histogram: RatioHistogram

    @property
    def accuracy_3dp(self) -> str:
        return f"{self.accuracy:.3f}"


def annotations_from_manifest(path: str | Path) -> list[QueryAnnotation]:
    """Query manifest rows as annotations (up to two labels per query)."""
    entries = parse_manifest(path, max_labels=2)
    seen = set()
    for e in entries:
        if e.source_id in seen:
            raise EvaluationError(f"{path}: duplicate query id {e.source_id!r}")
        seen.add(e.source_id)
    return [QueryAnnotation(e.source_id, str(e.image_path), e.labels) for e in entries]


def ratio_histogram(ratios: list[float] | np.ndarray, bins: int = DEFAULT_RATIO_BINS) -> RatioHistogram:
    """Equal-width histogram of ratios over [0, 1]; the top bin is closed
    on the right so a ratio of exactly 1.0 lands in it."""
    arr = np.asarray(ratios, dtype=np.float64)
    if arr.size == 0:
        raise EvaluationError("cannot histogram zero ratios")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise EvaluationError("ratios must lie in [0, 1]")
    if bins < 1:
        raise EvaluationError(f"bins must be >= 1, got {bins}")
    counts, edges = np.histogram(arr, bins=bins, range=(0.0, 1.0))
    return RatioHistogram(edges, counts, float(arr.mean()), float(np.median(arr)))


def normalize_count_matrix(matrix: np.ndarray) -> np.ndarray:
    """Divide each row by its maximum; all-zero rows stay zero."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise EvaluationError(f"count matrix must be 2-D, got shape {m.shape}")
    if m.size and m.min() < 0:
        raise EvaluationError("counts cannot be negative")
    row_max = m.max(axis=1, keepdims=True)
    safe = np.where(row_max == 0, 1.0, row_max)
    return m / safe


def accuracy(
    results: list[LocalizationResult],
    annotations: list[QueryAnnotation],
    bins: int = DEFAULT_RATIO_BINS,
) -> EvalReport:
    """Score a run: one annotation per result, matched by query_id.

    Unmatched ids on either side are an error and are all listed, so a
    mismatched manifest surfaces once with the full picture.
    """
    if not results:
        raise EvaluationError("no results to evaluate")
    by_id = {a.query_id: a for a in annotations}
    if len(by_id) != len(annotations):
        raise EvaluationError("duplicate query ids in annotations")
    result_ids = [r.query_id for r in results]
    if len(set(result_ids)) != len(result_ids):
        raise EvaluationError("duplicate query ids in results")

    missing = [qid for qid in result_ids if qid not in by_id]
    extra = [a.query_id for a in annotations if a.query_id not in set(result_ids)]
    if missing or extra:
        raise EvaluationError(
            "results and annotations do not match by query_id; "
            f"results without annotation: {missing or 'none'}; "
            f"annotations without result: {extra or 'none'}"
        )

    verdicts = []
    for r in results:
        ann = by_id[r.query_id]
        verdicts.append(
            Verdict(r.query_id, r.predicted_section, ann.labels,
                    r.predicted_section in ann.labels)
        )
    n_correct = sum(v.correct for v in verdicts)

    entry_ids = results[0].entry_ids
    for r in results:
        if r.entry_ids != entry_ids:
            raise EvaluationError("results carry inconsistent gallery entry orders")
    matrix = np.array([r.counts for r in results], dtype=np.float64)
    ratios = [r.second_best_ratio for r in results]

    return EvalReport(
        n_queries=len(results),
        n_correct=n_correct,
        accuracy=n_correct / len(results),
        verdicts=verdicts,
        query_ids=tuple(result_ids),
        entry_ids=entry_ids,
        count_matrix=matrix,
        normalized_matrix=normalize_count_matrix(matrix),
        histogram=ratio_histogram(ratios, bins),
    )


# ---------------------------------------------------------------------------
# ablation

@dataclass
class QueryRecord:
    """A fully loaded query: annotation, preprocessed image, detections."""

    annotation: QueryAnnotation
    image: Image
    detections: DetectionSet | None


@dataclass
class AblationOutcome:
    with_filter: EvalReport
    without_filter: EvalReport


def ablation_result_lists(
    queries: list[QueryRecord],
    index: GalleryIndex,
    params: MatchParams | None = None,
    backend: FeatureBackend | None = None,
    removal_mode: str = "either",
    jobs: int = 1,
) -> tuple[list[LocalizationResult], list[LocalizationResult]]:
    """Localize every query twice (filter on / off) from one matching pass.

    Returns (results_with_filter, results_without_filter).
    """
    with_f, without_f = [], []
    for q in queries:
        pyramid = extract(q.image, backend)
        match_lists = entry_match_lists(pyramid, index, params, jobs)
        raw, filtered = counts_from_matches(match_lists, q.detections, index, removal_mode)
        qid = q.annotation.query_id
        with_f.append(decide_from_counts(filtered, index, qid, raw))
        without_f.append(decide_from_counts(raw, index, qid, raw))
    return with_f, without_f


def run_ablation(
    queries: list[QueryRecord],
    index: GalleryIndex,
    params: MatchParams | None = None,
    backend: FeatureBackend | None = None,
    removal_mode: str = "either",
    bins: int = DEFAULT_RATIO_BINS,
    jobs: int = 1,
) -> AblationOutcome:
    """Evaluate with and without the vehicle remover on shared matches."""
    annotations = [q.annotation for q in queries]
    with_f, without_f = ablation_result_lists(
        queries, index, params, backend, removal_mode, jobs
    )
    return AblationOutcome(
        with_filter=accuracy(with_f, annotations, bins),
        without_filter=accuracy(without_f, annotations, bins),
    )


# ---------------------------------------------------------------------------
# report files

def write_report(
    report: EvalReport,
    out_dir: str | Path,
    config_echo: dict | None = None,
    render_matrix: bool = False,
) -> None:
    """Write summary.txt, verdicts.csv, count matrices, and the ratio
    histogram into out_dir. render_matrix adds a grayscale PNG of the
    normalized matrix."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    echo = "# config: " + json.dumps(config_echo, sort_keys=True) if config_echo is not None else None

    lines = ["parkloc evaluation summary", ""]
    lines.append(f"queries   {report.n_queries}")
    lines.append(f"correct   {report.n_correct}")
    lines.append(f"accuracy  {report.accuracy:.3f}")
    lines.append(f"ratio mean    {report.histogram.mean:.6f}")
    lines.append(f"ratio median  {report.histogram.median:.6f}")
    if config_echo is not None:
        lines += ["", "config: " + json.dumps(config_echo, sort_keys=True)]
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    rows = [echo] if echo else []
    rows.append("query_id,predicted_section,labels,correct")
    for v in report.verdicts:
        rows.append(f"{v.query_id},{v.predicted_section},{'|'.join(v.labels)},{int(v.correct)}")
    (out / "verdicts.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")

    for name, matrix, fmt in (
        ("count_matrix.csv", report.count_matrix, lambda v: str(int(v))),
        ("count_matrix_normalized.csv", report.normalized_matrix, lambda v: f"{v:.6f}"),
    ):
        rows = [echo] if echo else []
        rows.append("query_id," + ",".join(report.entry_ids))
        for qid, row in zip(report.query_ids, matrix):
            rows.append(qid + "," + ",".join(fmt(v) for v in row))
        (out / name).write_text("\n".join(rows) + "\n", encoding="utf-8")

    rows = [echo] if echo else []
    rows.append("bin_low,bin_high,count")
    h = report.histogram
    for i in range(len(h.counts)):
        rows.append(f"{h.bin_edges[i]:.6f},{h.bin_edges[i + 1]:.6f},{int(h.counts[i])}")
    (out / "ratio_histogram.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")

    if render_matrix:
        save_grayscale_png(report.normalized_matrix, out / "count_matrix.png")


def write_ablation_table(outcome: AblationOutcome, path: str | Path,
                         config_echo: dict | None = None) -> None:
    """Two-row accuracy table comparing the arms."""
    lines = []
    if config_echo is not None:
        lines.append("# config: " + json.dumps(config_echo, sort_keys=True))
    lines.append(f"{'arm':<24} accuracy")
    lines.append(f"{'without_vehicle_remover':<24} {outcome.without_filter.accuracy:.3f}")
    lines.append(f"{'with_vehicle_remover':<24} {outcome.with_filter.accuracy:.3f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
