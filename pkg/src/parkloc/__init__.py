"""parkloc: visual localization for indoor parking lots.

Dense coarse-to-fine feature matching between a query photo and a
gallery of section-labeled reference photos; the section whose
reference collects the most (vehicle-filtered) matches wins.
"""

from .config import RunConfig
from .errors import (
    BuildError,
    DecodeError,
    EvaluationError,
    FormatError,
    InvalidInputError,
    LoadError,
    ParklocError,
    ParseError,
)
from .estimator import ParkingLotLocalizer
from .evaluation import (
    EvalReport,
    QueryAnnotation,
    QueryRecord,
    accuracy,
    annotations_from_manifest,
    normalize_count_matrix,
    ratio_histogram,
    run_ablation,
)
from .features import (
    FeatureBackend,
    FeaturePyramid,
    extract,
    grid_descriptors,
    load_pyramid,
    save_pyramid,
)
from .gallery import GalleryEntry, GalleryIndex, build_index, load_index, parse_manifest
from .imaging import Image, bilinear_resize, image_from_array, load_image, to_grayscale
from .localizer import LocalizationResult, localize, localize_pyramid
from .matcher import (
    CoarseMatch,
    FineMatch,
    MatchParams,
    coarse_match,
    match_pair,
    match_pyramids,
    refine_matches,
)
from .synth import SceneSpec, generate, render_corpus
from .vehicle_filter import BoundingBox, DetectionSet, filter_matches, load_detections

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "BuildError",
    "CoarseMatch",
    "DecodeError",
    "DetectionSet",
    "EvalReport",
    "EvaluationError",
    "FeatureBackend",
    "FeaturePyramid",
    "FineMatch",
    "FormatError",
    "GalleryEntry",
    "GalleryIndex",
    "Image",
    "InvalidInputError",
    "LoadError",
    "LocalizationResult",
    "MatchParams",
    "ParkingLotLocalizer",
    "ParklocError",
    "ParseError",
    "QueryAnnotation",
    "QueryRecord",
    "RunConfig",
    "SceneSpec",
    "accuracy",
    "annotations_from_manifest",
    "bilinear_resize",
    "build_index",
    "coarse_match",
    "extract",
    "filter_matches",
    "generate",
    "grid_descriptors",
    "image_from_array",
    "load_detections",
    "load_image",
    "load_index",
    "load_pyramid",
    "localize",
    "localize_pyramid",
    "match_pair",
    "match_pyramids",
    "normalize_count_matrix",
    "parse_manifest",
    "ratio_histogram",
    "refine_matches",
    "render_corpus",
    "run_ablation",
    "save_pyramid",
    "to_grayscale",
    "__version__",
]
