"""Scikit-learn style estimator facade over the localization pipeline.

``fit`` builds (or loads) the gallery index, ``predict`` returns section
ids for query images.  Parameters follow sklearn conventions: stored
verbatim in ``__init__``, validated at fit time, introspectable through
``get_params`` / ``set_params``.
"""

from __future__ import annotations

import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import RunConfig
from .errors import InvalidInputError
from .evaluation import annotations_from_manifest
from .features import extract
from .gallery import GalleryIndex, build_index, load_index
from .imaging import load_image
from .localizer import LocalizationResult, localize_pyramid
from .vehicle_filter import load_detections


class ParkingLotLocalizer(BaseEstimator):
    """Localize indoor parking-lot queries to gallery sections.

    Parameters mirror :class:`parkloc.config.RunConfig`.  ``vehicle_classes``
    of None means the built-in default set.
    """

    def __init__(
        self,
        backend: str = "hog",
        temperature: float = 0.1,
        threshold: float = 0.2,
        window: int = 5,
        use_vehicle_filter: bool = True,
        removal_mode: str = "either",
        min_score: float = 0.5,
        vehicle_classes: tuple | None = None,
        target_long_side: int = 640,
        jobs: int = 1,
    ) -> None:
        self.backend = backend
        self.temperature = temperature
        self.threshold = threshold
        self.window = window
        self.use_vehicle_filter = use_vehicle_filter
        self.removal_mode = removal_mode
        self.min_score = min_score
        self.vehicle_classes = vehicle_classes
        self.target_long_side = target_long_side
        self.jobs = jobs

    def _config(self) -> RunConfig:
        cfg = RunConfig(
            backend=self.backend,
            temperature=self.temperature,
            threshold=self.threshold,
            window=self.window,
            min_score=self.min_score,
            use_vehicle_filter=self.use_vehicle_filter,
            removal_mode=self.removal_mode,
            target_long_side=self.target_long_side,
            jobs=self.jobs,
        )
        if self.vehicle_classes is not None:
            cfg.vehicle_classes = tuple(sorted(self.vehicle_classes))
        cfg.validate()
        return cfg

    def fit(self, X, y=None, detections=None) -> "ParkingLotLocalizer":
        """Build or adopt the gallery index.

        X may be a manifest file path, an index directory path, an existing
        :class:`GalleryIndex`, or a list of image paths (then ``y`` gives one
        section label per image).  ``detections`` is an optional detections
        file for vehicle-box filtering of gallery images.
        """
        cfg = self._config()
        if isinstance(X, GalleryIndex):
            self.index_ = X
            return self
        if isinstance(X, (str, Path)):
            path = Path(X)
            if path.is_dir():
                self.index_ = load_index(path)
                return self
            self.index_ = self._build(path, detections, cfg)
            return self
        if isinstance(X, (list, tuple)):
            if y is None or len(y) != len(X):
                raise InvalidInputError(
                    "fitting from an image list needs one section label per image"
                )
            if len(X) == 0:
                raise InvalidInputError("cannot fit on an empty image list")
            with tempfile.TemporaryDirectory(prefix="parkloc-fit-") as tmp:
                manifest = Path(tmp) / "manifest.txt"
                lines = []
                for image_path, label in zip(X, y):
                    p = Path(image_path).resolve()
                    lines.append(f"{p.stem} {p} {label}")
                manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
                self.index_ = self._build(manifest, detections, cfg)
            return self
        raise InvalidInputError(f"cannot fit from {type(X).__name__}")

    def _build(self, manifest: Path, detections, cfg: RunConfig) -> GalleryIndex:
        return build_index(
            manifest,
            backend=cfg.feature_backend(),
            detections_path=detections,
            target_long_side=cfg.target_long_side,
            vehicle_classes=frozenset(cfg.vehicle_classes),
            min_score=cfg.min_score,
            jobs=cfg.jobs,
        )

    def _query_items(self, X, detections, cfg: RunConfig):
        """Resolve X into (query_id, Image) pairs plus per-query detections."""
        if isinstance(X, (str, Path)):
            annotations = annotations_from_manifest(X)
            items = [
                (a.query_id, load_image(a.image_path, cfg.target_long_side, source_id=a.query_id))
                for a in annotations
            ]
        elif isinstance(X, (list, tuple)):
            items = []
            for image_path in X:
                img = load_image(image_path, cfg.target_long_side)
                items.append((img.source_id, img))
        else:
            raise InvalidInputError(f"cannot predict from {type(X).__name__}")
        detection_map = {}
        if detections is not None:
            scales = {
                qid: (img.width / img.original_size[0], img.height / img.original_size[1])
                for qid, img in items
            }
            detection_map = load_detections(
                detections, scales, frozenset(cfg.vehicle_classes), cfg.min_score
            )
        out = []
        for qid, img in items:
            dets = detection_map.get(qid)
            if dets is not None:
                dets = dets.prune_outside(img.width, img.height)
            out.append((qid, img, dets))
        return out

    def localize(self, X, detections=None) -> list[LocalizationResult]:
        """Full localization results (counts, ratios, flags) for queries."""
        check_is_fitted(self)
        cfg = self._config()
        items = self._query_items(X, detections, cfg)

        def _one(item) -> LocalizationResult:
            qid, img, dets = item
            pyramid = extract(img, cfg.feature_backend())
            return localize_pyramid(
                qid, pyramid, dets, self.index_, cfg.match_params(),
                cfg.use_vehicle_filter, cfg.removal_mode, jobs=1,
            )

        if cfg.jobs > 1:
            with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
                return list(pool.map(_one, items))
        return [_one(item) for item in items]

    def predict(self, X, detections=None) -> np.ndarray:
        """Predicted section id per query, in input order."""
        results = self.localize(X, detections=detections)
        return np.array([r.predicted_section for r in results], dtype=object)

    def score(self, X, y=None, detections=None) -> float:
        """Multi-label accuracy: a prediction inside the label set is correct.

        With ``y`` None, X must be a labeled query manifest.  Otherwise ``y``
        holds one label or label collection per query.
        """
        if y is None:
            if not isinstance(X, (str, Path)):
                raise InvalidInputError("score without y needs a labeled query manifest")
            label_sets = [set(a.labels) for a in annotations_from_manifest(X)]
        else:
            label_sets = [
                {y_i} if isinstance(y_i, str) else set(y_i) for y_i in y
            ]
        predictions = self.predict(X, detections=detections)
        if len(label_sets) != len(predictions):
            raise InvalidInputError(
                f"got {len(label_sets)} label sets for {len(predictions)} queries"
            )
        if len(predictions) == 0:
            raise InvalidInputError("cannot score zero queries")
        hits = sum(p in ls for p, ls in zip(predictions, label_sets))
        return hits / len(predictions)
