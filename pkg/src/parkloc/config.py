"""Run configuration shared by the CLI commands.

A RunConfig collects every knob of the pipeline. It round-trips through
JSON, and its algorithm-relevant subset (echo_dict) is embedded into
every artifact a run writes, so any result file names the parameters
that produced it. Execution-only fields (jobs, verbose) are excluded
from the echo: runs that differ only in parallelism must produce
byte-identical artifacts.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ParseError
from .features import FeatureBackend
from .imaging import DEFAULT_TARGET_LONG_SIDE, MIN_SIDE
from .matcher import MatchParams
from .vehicle_filter import DEFAULT_MIN_SCORE, REMOVAL_MODES, VEHICLE_CLASSES

_ECHO_EXCLUDED = ("jobs", "verbose")


@dataclass
class RunConfig:
    backend: str = "hog"
    temperature: float = 0.1
    threshold: float = 0.2
    window: int = 5
    min_score: float = DEFAULT_MIN_SCORE
    vehicle_classes: tuple[str, ...] = tuple(sorted(VEHICLE_CLASSES))
    use_vehicle_filter: bool = True
    removal_mode: str = "either"
    target_long_side: int = DEFAULT_TARGET_LONG_SIDE
    jobs: int = 1
    verbose: bool = False

    def validate(self) -> None:
        self.match_params().validate()
        self.feature_backend()
        if not 0.0 <= self.min_score <= 1.0:
            raise ParseError(f"min_score must lie in [0, 1], got {self.min_score}")
        if self.removal_mode not in REMOVAL_MODES:
            raise ParseError(f"removal_mode must be one of {REMOVAL_MODES}")
        if self.target_long_side < MIN_SIDE:
            raise ParseError(f"target_long_side must be >= {MIN_SIDE}")
        if self.jobs < 1:
            raise ParseError(f"jobs must be >= 1, got {self.jobs}")

    def match_params(self) -> MatchParams:
        return MatchParams(self.temperature, self.threshold, self.window)

    def feature_backend(self) -> FeatureBackend:
        return FeatureBackend.from_spec(self.backend)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vehicle_classes"] = list(self.vehicle_classes)
        return d

    def echo_dict(self) -> dict:
        """The subset embedded into artifacts for provenance."""
        d = self.to_dict()
        for key in _ECHO_EXCLUDED:
            d.pop(key)
        return d

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n", encoding="utf-8"
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ParseError(f"{path}: config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ParseError(f"{path}: unknown config field(s): {', '.join(sorted(unknown))}")
        if "vehicle_classes" in data:
            data["vehicle_classes"] = tuple(data["vehicle_classes"])
        cfg = cls(**data)
        cfg.validate()
        return cfg
