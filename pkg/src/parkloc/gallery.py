"""Section-labeled gallery: manifest parsing, index build, persistence.

A gallery manifest is line-oriented text:

    source_id image_path section_id

Query manifests use the same shape but may carry a second section id for
views straddling a boundary. Image paths are resolved relative to the
manifest's directory.

A built index is one directory: a verbatim copy of the manifest, one
binary feature file per entry under pyramids/, a detection file already
rescaled to the preprocessed frame, and metadata.json carrying the format
version, the build parameters and their hash, and per-entry geometry.
Building the same inputs twice yields byte-identical directories: nothing
time- or path-dependent is written.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .errors import BuildError, LoadError, ParseError
from .features import FeatureBackend, FeaturePyramid, extract, load_pyramid, save_pyramid
from .imaging import DEFAULT_TARGET_LONG_SIDE, Image, load_image
from .vehicle_filter import (
    DEFAULT_MIN_SCORE,
    VEHICLE_CLASSES,
    DetectionSet,
    load_detections,
)

logger = logging.getLogger(__name__)

INDEX_FORMAT_VERSION = 1
METADATA_NAME = "metadata.json"
MANIFEST_NAME = "manifest.txt"
DETECTIONS_NAME = "detections.txt"
PYRAMID_DIR = "pyramids"


@dataclass(frozen=True)
class ManifestEntry:
    source_id: str
    image_path: Path
    labels: tuple[str, ...]
    raw_path: str  # path token as written in the manifest


@dataclass
class GalleryEntry:
    source_id: str
    section_id: str
    pyramid: FeaturePyramid
    detections: DetectionSet
    original_size: tuple[int, int]
    processed_size: tuple[int, int]
    image_path: str


@dataclass
class GalleryIndex:
    entries: list[GalleryEntry]
    build_params: dict
    manifest_text: str
    path: Path | None = None

    @property
    def sections(self) -> set[str]:
        return {e.section_id for e in self.entries}

    @property
    def entry_ids(self) -> tuple[str, ...]:
        return tuple(e.source_id for e in self.entries)


def parse_manifest(path: str | Path, max_labels: int = 1) -> list[ManifestEntry]:
    """Read a manifest. Each line: source_id image_path label [label2].

    max_labels: 1 for gallery manifests, 2 for query manifests.
    '#' comments and blank lines are skipped. Duplicate ids are allowed
    here and rejected by the consumers that require uniqueness.
    """
    path = Path(path)
    base = path.parent
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if not 3 <= len(parts) <= 2 + max_labels:
                raise ParseError(
                    f"{path}:{lineno}: expected source_id image_path and 1"
                    + ("" if max_labels == 1 else f"..{max_labels}")
                    + f" section ids, got {len(parts)} fields"
                )
            source_id, raw_path = parts[0], parts[1]
            if "/" in source_id or "\\" in source_id:
                raise ParseError(f"{path}:{lineno}: source_id {source_id!r} contains a path separator")
            labels = tuple(parts[2:])
            if len(set(labels)) != len(labels):
                raise ParseError(f"{path}:{lineno}: repeated section id")
            entries.append(ManifestEntry(source_id, base / raw_path, labels, raw_path))
    return entries


def _check_unique_ids(entries: list[ManifestEntry], manifest: Path) -> None:
    seen: dict[str, int] = {}
    dups = []
    for e in entries:
        if e.source_id in seen:
            dups.append(e.source_id)
        seen[e.source_id] = 1
    if dups:
        raise BuildError(f"{manifest}: duplicate source_id(s): {', '.join(sorted(set(dups)))}")


def _canonical_params_json(params: dict) -> str:
    return json.dumps(params, sort_keys=True, separators=(",", ":"))


def params_hash(params: dict) -> str:
    return hashlib.sha256(_canonical_params_json(params).encode("utf-8")).hexdigest()


def _detection_line(source_id: str, box) -> str:
    return (
        f"{source_id} {box.class_label} {box.score!r} "
        f"{box.x_min!r} {box.y_min!r} {box.x_max!r} {box.y_max!r}"
    )


def build_index(
    manifest_path: str | Path,
    backend: FeatureBackend | None = None,
    detections_path: str | Path | None = None,
    out_dir: str | Path | None = None,
    target_long_side: int = DEFAULT_TARGET_LONG_SIDE,
    vehicle_classes: frozenset[str] | set[str] = VEHICLE_CLASSES,
    min_score: float = DEFAULT_MIN_SCORE,
    jobs: int = 1,
) -> GalleryIndex:
    """Build a gallery index from a manifest; optionally persist it.

    Every entry must carry exactly one section id. All referenced images
    are checked up front so one error message lists every missing file.
    """
    backend = backend or FeatureBackend()
    manifest_path = Path(manifest_path)
    entries = parse_manifest(manifest_path, max_labels=1)
    if not entries:
        raise BuildError(f"{manifest_path}: manifest is empty")
    _check_unique_ids(entries, manifest_path)

    missing = [str(e.image_path) for e in entries if not e.image_path.is_file()]
    if missing:
        raise BuildError(
            f"{manifest_path}: {len(missing)} image(s) missing: " + ", ".join(missing)
        )

    def _load_one(entry: ManifestEntry) -> tuple[Image, FeaturePyramid]:
        image = load_image(entry.image_path, target_long_side, source_id=entry.source_id)
        return image, extract(image, backend)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            loaded = list(pool.map(_load_one, entries))
    else:
        loaded = [_load_one(e) for e in entries]

    scales = {
        e.source_id: (
            img.width / img.original_size[0],
            img.height / img.original_size[1],
        )
        for e, (img, _) in zip(entries, loaded)
    }
    detection_map: dict[str, DetectionSet] = {}
    if detections_path is not None:
        detection_map = load_detections(
            detections_path, scales=scales, classes=vehicle_classes, min_score=min_score
        )
        extras = sorted(set(detection_map) - set(scales))
        if extras:
            logger.warning(
                "%s: detections reference %d image(s) not in the manifest: %s",
                detections_path, len(extras), ", ".join(extras),
            )

    gallery_entries = []
    for entry, (image, pyramid) in zip(entries, loaded):
        dets = detection_map.get(entry.source_id, DetectionSet(entry.source_id))
        dets = dets.prune_outside(image.width, image.height)
        gallery_entries.append(
            GalleryEntry(
                source_id=entry.source_id,
                section_id=entry.labels[0],
                pyramid=pyramid,
                detections=dets,
                original_size=image.original_size,
                processed_size=(image.width, image.height),
                image_path=entry.raw_path,
            )
        )

    build_params = {
        "format_version": INDEX_FORMAT_VERSION,
        "backend": backend.kind,
        "coarse_descriptor_dim": int(gallery_entries[0].pyramid.coarse.shape[2]),
        "fine_descriptor_dim": int(gallery_entries[0].pyramid.fine.shape[2]),
        "coarse_cell": gallery_entries[0].pyramid.coarse_cell,
        "fine_cell": gallery_entries[0].pyramid.fine_cell,
        "target_long_side": target_long_side,
        "min_score": min_score,
        "vehicle_classes": sorted(vehicle_classes),
    }
    index = GalleryIndex(
        entries=gallery_entries,
        build_params=build_params,
        manifest_text=manifest_path.read_text(encoding="utf-8"),
    )
    if out_dir is not None:
        save_index(index, out_dir)
    return index


def save_index(index: GalleryIndex, out_dir: str | Path) -> None:
    """Persist an index to a directory (see module docstring for layout)."""
    out = Path(out_dir)
    (out / PYRAMID_DIR).mkdir(parents=True, exist_ok=True)
    (out / MANIFEST_NAME).write_text(index.manifest_text, encoding="utf-8")

    det_lines = ["# coordinates: preprocessed frame (scale 1.0)"]
    for e in index.entries:
        for box in e.detections.boxes:
            det_lines.append(_detection_line(e.source_id, box))
    (out / DETECTIONS_NAME).write_text("\n".join(det_lines) + "\n", encoding="utf-8")

    for e in index.entries:
        save_pyramid(e.pyramid, out / PYRAMID_DIR / f"{e.source_id}.pklf")

    metadata = {
        "format_version": INDEX_FORMAT_VERSION,
        "build_params": index.build_params,
        "build_params_hash": params_hash(index.build_params),
        "entries": [
            {
                "source_id": e.source_id,
                "section_id": e.section_id,
                "image_path": e.image_path,
                "original_size": list(e.original_size),
                "processed_size": list(e.processed_size),
            }
            for e in index.entries
        ],
    }
    (out / METADATA_NAME).write_text(
        json.dumps(metadata, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    index.path = out


def load_index(path: str | Path, expect: dict | None = None) -> GalleryIndex:
    """Load a persisted index.

    expect may carry keys of build_params to verify: a mismatch in
    descriptor dims or cell sizes raises LoadError (matching would fail);
    any other differing key only logs a warning.
    """
    root = Path(path)
    meta_path = root / METADATA_NAME
    if not meta_path.is_file():
        raise LoadError(f"{root}: not an index directory ({METADATA_NAME} missing)")
    try:
        metadata = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise LoadError(f"{meta_path}: invalid JSON: {exc}") from exc

    version = metadata.get("format_version")
    if version != INDEX_FORMAT_VERSION:
        raise LoadError(
            f"{root}: format version {version!r} unsupported (expected {INDEX_FORMAT_VERSION})"
        )
    build_params = metadata.get("build_params", {})
    stored_hash = metadata.get("build_params_hash")
    if stored_hash != params_hash(build_params):
        raise LoadError(f"{root}: build_params hash mismatch, metadata corrupted")

    if expect:
        hard_keys = {"coarse_descriptor_dim", "fine_descriptor_dim", "coarse_cell", "fine_cell"}
        for key, wanted in expect.items():
            have = build_params.get(key)
            if have == wanted:
                continue
            if key in hard_keys:
                raise LoadError(
                    f"{root}: index built with {key}={have!r}, requested {wanted!r}"
                )
            logger.warning(
                "%s: index built with %s=%r, current run requests %r", root, key, have, wanted
            )

    detection_map = {}
    det_path = root / DETECTIONS_NAME
    if det_path.is_file():
        # stored boxes already passed the class/score filter at build time
        # and are in the preprocessed frame; load them back verbatim.
        stored_classes = frozenset(build_params.get("vehicle_classes", sorted(VEHICLE_CLASSES)))
        detection_map = load_detections(det_path, scales=None, classes=stored_classes, min_score=0.0)

    entries = []
    for rec in metadata.get("entries", []):
        sid = rec["source_id"]
        pyr_path = root / PYRAMID_DIR / f"{sid}.pklf"
        try:
            pyramid = load_pyramid(pyr_path)
        except Exception as exc:  # rewrap with entry context
            raise LoadError(f"{root}: cannot load pyramid for entry {sid!r}: {exc}") from exc
        entries.append(
            GalleryEntry(
                source_id=sid,
                section_id=rec["section_id"],
                pyramid=pyramid,
                detections=detection_map.get(sid, DetectionSet(sid)),
                original_size=tuple(rec["original_size"]),
                processed_size=tuple(rec["processed_size"]),
                image_path=rec["image_path"],
            )
        )
    if not entries:
        raise LoadError(f"{root}: index has no entries")

    manifest_text = ""
    man_path = root / MANIFEST_NAME
    if man_path.is_file():
        manifest_text = man_path.read_text(encoding="utf-8")
    return GalleryIndex(entries, build_params, manifest_text, path=root)
