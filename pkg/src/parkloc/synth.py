"""Seeded synthetic parking-lot corpus generator.

The lot is modeled as one long horizontal strip of adjoining sections.
Every image is a 320x240 window into that strip: gallery image k is the
window exactly covering section k; a query is a window near some section,
optionally shifted, rotated, and photometrically jittered. Ground-truth
labels fall out of window/section overlap, so a shifted query straddling
a boundary carries both section ids.

Section appearance follows the failure structure of real indoor lots:
 * wall and floor bands are uniform (textureless, so featureless);
 * every section repeats the same pillar, wall/floor boundary, and
   vehicle-body edges (self-similar structure that matchers suppress);
 * what identifies a section is a sparse set of small oriented-grating
   patches on its pillar and floor (signage, hatching, scuffs);
   wall_texture_strength scales how many there are and how strong;
 * vehicles are stamped from a small shared template bank, each template
   carrying its own grating pattern, deliberately reused across sections
   so identical-looking vehicles appear in different places.
   vehicle_churn moves or removes them between the gallery pass and the
   query pass.

All geometry snaps to the 8 px parking-slot pitch and patches sit on a
fixed half-slot lattice, so reparked vehicles and shifted windows stay
aligned with the descriptor grid instead of smearing across it. Detection
files record exact stamp rectangles in pixel-index coordinates (inclusive
endpoints); optional noise knobs jitter or drop boxes to emulate an
imperfect detector. Generation is fully driven by named substreams of one
seed: equal specs produce byte-identical corpora.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, ParseError
from .imaging import save_grayscale_png

SECTION_W = 320
IMG_H = 240
WALL_BOTTOM = 144   # rows [0, WALL_BOTTOM) are wall, the rest floor
PILLAR_W = 48
SLOT = 8            # parking-slot grid pitch in px
TILE = 8            # grating patch side
VEHICLE_Y = 184     # single parking row; bottoms touch the image edge

_VEHICLE_CLASS_CYCLE = ("car", "truck", "bus", "motorcycle")

# grating bar normals stay off the exact horizontal/vertical axes so patch
# cells never blend into the pillar/boundary/vehicle edge population
_OBLIQUE_BINS = (1, 2, 3, 5, 6, 7)


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of one synthetic corpus. All randomness derives from
    seed; the other knobs shape difficulty."""

    seed: int = 0
    n_sections: int = 8
    wall_texture_strength: float = 0.75
    vehicles_per_section: tuple[int, int] = (1, 3)
    vehicle_churn: float = 0.0
    photometric_jitter: tuple[float, float] = (0.0, 0.0)  # (brightness, contrast)
    geometric_jitter: tuple[float, float] = (0.0, 0.0)    # (max |shift| px, max |angle| deg)
    vehicle_templates: int = 4
    queries_per_section: int = 1
    detection_box_jitter: float = 0.0
    detection_miss_rate: float = 0.0

    def validate(self) -> None:
        if self.n_sections < 1:
            raise InvalidInputError(f"n_sections must be >= 1, got {self.n_sections}")
        if not 0.0 <= self.wall_texture_strength <= 1.0:
            raise InvalidInputError("wall_texture_strength must lie in [0, 1]")
        lo, hi = self.vehicles_per_section
        if lo < 0 or hi < lo:
            raise InvalidInputError(f"bad vehicles_per_section range ({lo}, {hi})")
        if not 0.0 <= self.vehicle_churn <= 1.0:
            raise InvalidInputError("vehicle_churn must lie in [0, 1]")
        if min(self.photometric_jitter) < 0 or min(self.geometric_jitter) < 0:
            raise InvalidInputError("jitter amplitudes cannot be negative")
        if self.vehicle_templates < 1:
            raise InvalidInputError("vehicle_templates must be >= 1")
        if self.queries_per_section < 1:
            raise InvalidInputError("queries_per_section must be >= 1")
        if self.detection_box_jitter < 0 or not 0.0 <= self.detection_miss_rate <= 1.0:
            raise InvalidInputError("bad detection noise knobs")

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "n_sections": self.n_sections,
            "wall_texture_strength": self.wall_texture_strength,
            "vehicles_per_section": list(self.vehicles_per_section),
            "vehicle_churn": self.vehicle_churn,
            "photometric_jitter": list(self.photometric_jitter),
            "geometric_jitter": list(self.geometric_jitter),
            "vehicle_templates": self.vehicle_templates,
            "queries_per_section": self.queries_per_section,
            "detection_box_jitter": self.detection_box_jitter,
            "detection_miss_rate": self.detection_miss_rate,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "SceneSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ParseError(f"unknown scene spec field(s): {', '.join(sorted(unknown))}")
        kwargs = dict(data)
        for key in ("vehicles_per_section", "photometric_jitter", "geometric_jitter"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        spec = cls(**kwargs)
        spec.validate()
        return spec

    @classmethod
    def from_file(cls, path: str | Path) -> "SceneSpec":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ParseError(f"{path}: scene spec must be a JSON object")
        return cls.from_json_dict(data)


@dataclass(frozen=True)
class Vehicle:
    template: int
    x: int  # strip coords, multiples of SLOT
    y: int
    width: int
    height: int


@dataclass
class RenderedImage:
    image_id: str
    pixels: np.ndarray  # final float [0, 1] grayscale, as written
    labels: tuple[str, ...]
    boxes: list[tuple[float, float, float, float]]  # exact, pre detection noise
    box_classes: list[str]
    window_x0: int
    angle_deg: float


@dataclass
class Corpus:
    spec: SceneSpec
    gallery: list[RenderedImage]
    queries: list[RenderedImage]
    gallery_vehicles: list[Vehicle]
    query_vehicles: list[Vehicle]
    gallery_world: np.ndarray
    query_world: np.ndarray


@dataclass(frozen=True)
class CorpusPaths:
    root: Path
    gallery_manifest: Path
    query_manifest: Path
    gallery_detections: Path
    query_detections: Path


def section_id(k: int) -> str:
    return f"s{k:03d}"


def _rng(spec: SceneSpec, *stream: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, *stream])


def _grating_tile(theta: float, lam: float, phase: float, amp: float) -> np.ndarray:
    """One TILE x TILE oriented bar grating with a smooth square taper.

    theta is the bar direction; the intensity gradient runs across the
    bars. tanh squashing flattens bar cores so gradient energy sits on the
    flanks, and the taper keeps support clear of the tile border.
    """
    yy, xx = np.mgrid[0:TILE, 0:TILE].astype(np.float64)
    c = (TILE - 1) / 2.0
    u = math.cos(theta) * (xx - c) + math.sin(theta) * (yy - c)
    v = -math.sin(theta) * (xx - c) + math.cos(theta) * (yy - c)
    bars = np.tanh(2.2 * np.cos(2.0 * np.pi * v / lam + phase)) / math.tanh(2.2)
    env = np.clip((3.6 - np.abs(u)) / 1.6, 0.0, 1.0)
    env *= np.clip((3.6 - np.abs(v)) / 1.6, 0.0, 1.0)
    return amp * bars * env


def _stamp_tile(canvas: np.ndarray, x: int, y: int, rng: np.random.Generator,
                amp_lo: float, amp_hi: float) -> None:
    """Add one randomly parameterized oblique grating at (x, y)."""
    b = int(_OBLIQUE_BINS[int(rng.integers(0, len(_OBLIQUE_BINS)))])
    grad_angle = (b + float(rng.random())) * (math.pi / 8.0)
    lam = float(rng.uniform(2.8, 4.2))
    phase = float(rng.uniform(0.0, 2.0 * math.pi))
    amp = float(rng.uniform(amp_lo, amp_hi))
    if rng.random() < 0.5:
        amp = -amp
    canvas[y:y + TILE, x:x + TILE] += _grating_tile(
        grad_angle - math.pi / 2.0, lam, phase, amp
    )


def _patch_slots(x0: int) -> list[tuple[int, int]]:
    """Half-slot lattice positions for one section's distinctive patches.

    Pillar interior columns and the upper floor band; both chosen so no
    16 px descriptor window around a patch also sees a pillar edge, the
    wall/floor boundary, or the vehicle row (which churns).
    """
    pillar = [(x0 + dx, y) for dx in (12, 20, 28) for y in range(4, 125, TILE)]
    floor = [(x0 + dx, y) for dx in range(68, 293, TILE) for y in (156, 164)]
    return pillar + floor


def _render_background(spec: SceneSpec) -> np.ndarray:
    total_w = spec.n_sections * SECTION_W
    world = np.empty((IMG_H, total_w))
    world[:WALL_BOTTOM] = 0.52
    world[WALL_BOTTOM:] = 0.60

    n_patches = int(round(14 * spec.wall_texture_strength))
    contrast = 0.4 + 0.6 * spec.wall_texture_strength
    for s in range(spec.n_sections):
        x0 = s * SECTION_W
        # pillar: identical in every section, on purpose
        world[:WALL_BOTTOM, x0:x0 + PILLAR_W] = 0.40

        slots = _patch_slots(x0)
        rng = _rng(spec, 20, s)
        if n_patches == 0:
            continue
        picked = rng.choice(len(slots), size=min(n_patches, len(slots)), replace=False)
        for idx in picked:
            px, py = slots[int(idx)]
            _stamp_tile(world, px, py, rng, 0.22 * contrast, 0.34 * contrast)

    return np.clip(world, 0.02, 0.98)


def _vehicle_templates(spec: SceneSpec) -> list[np.ndarray]:
    bank = []
    for tid in range(spec.vehicle_templates):
        rng = _rng(spec, 70, tid)
        w = 96 + 16 * int(rng.integers(0, 3))   # 96, 112, or 128
        h = 56
        body = 0.26 + 0.08 * float(rng.random())
        arr = np.full((h, w), body)
        arr[12:21, 8:w - 8] = body - 0.06       # window band
        arr[h - 10:h - 2, 12:32] = 0.10         # wheels
        arr[h - 10:h - 2, w - 32:w - 12] = 0.10
        arr[:2, :] = 0.14
        arr[-2:, :] = 0.14
        arr[:, :2] = 0.14
        arr[:, -2:] = 0.14
        # livery: template-specific gratings on the same half-slot lattice
        slots = [(x, y) for x in range(4, w - 11, TILE) for y in range(4, 37, TILE)]
        n = min(len(slots), max(8, int(round(0.4 * len(slots)))))
        picked = rng.choice(len(slots), size=n, replace=False)
        for idx in picked:
            px, py = slots[int(idx)]
            _stamp_tile(arr, px, py, rng, 0.14, 0.20)
        bank.append(np.clip(arr, 0.02, 0.98))
    return bank


def _fits(x: int, width: int, placed: list[Vehicle]) -> bool:
    return all(
        x + width + SLOT <= p.x or p.x + p.width + SLOT <= x for p in placed
    )


def _gallery_vehicles(spec: SceneSpec, bank: list[np.ndarray]) -> list[Vehicle]:
    lo, hi = spec.vehicles_per_section
    out: list[Vehicle] = []
    for s in range(spec.n_sections):
        rng = _rng(spec, 50, s)
        count = int(rng.integers(lo, hi + 1))
        placed: list[Vehicle] = []
        for _ in range(count):
            tid = int(rng.integers(0, len(bank)))
            th, tw = bank[tid].shape
            x_lo = s * SECTION_W + 16
            x_hi = (s + 1) * SECTION_W - 16 - tw
            if x_hi < x_lo:
                continue
            for _attempt in range(20):
                x = int(rng.integers(x_lo // SLOT, x_hi // SLOT + 1)) * SLOT
                if _fits(x, tw, placed):
                    placed.append(Vehicle(tid, x, VEHICLE_Y, tw, th))
                    break
        out.extend(placed)
    return out


def _churn_vehicles(spec: SceneSpec, vehicles: list[Vehicle]) -> list[Vehicle]:
    """Between passes a vehicle may leave or repark anywhere in the strip
    (keeping its template, which is what creates the look-alike trap)."""
    rng = _rng(spec, 60)
    total_w = spec.n_sections * SECTION_W
    kept: list[Vehicle] = []
    movers: list[Vehicle] = []
    for v in vehicles:
        if rng.random() >= spec.vehicle_churn:
            kept.append(v)
        elif rng.random() < 0.5:
            movers.append(v)
    out = list(kept)
    for v in movers:
        x_hi = total_w - 16 - v.width
        for _attempt in range(20):
            x = int(rng.integers(2, x_hi // SLOT + 1)) * SLOT
            if _fits(x, v.width, out):
                out.append(replace(v, x=x))
                break
    return out


def _render_world(background: np.ndarray, vehicles: list[Vehicle], bank: list[np.ndarray]) -> np.ndarray:
    world = background.copy()
    for v in vehicles:
        world[v.y:v.y + v.height, v.x:v.x + v.width] = bank[v.template]
    return world


def _sample_window(world: np.ndarray, x0: int, angle_deg: float) -> np.ndarray:
    """Extract a SECTION_W x IMG_H view; rotation resamples bilinearly
    straight from the strip so borders show real neighboring content."""
    if angle_deg == 0.0:
        return world[:, x0:x0 + SECTION_W].copy()
    h, w = IMG_H, SECTION_W
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    rel_x, rel_y = xx - cx, yy - cy
    src_x = x0 + cx + cos_t * rel_x - sin_t * rel_y
    src_y = cy + sin_t * rel_x + cos_t * rel_y
    src_x = np.clip(src_x, 0.0, world.shape[1] - 1.0)
    src_y = np.clip(src_y, 0.0, world.shape[0] - 1.0)
    x_lo = np.floor(src_x).astype(np.int64)
    y_lo = np.floor(src_y).astype(np.int64)
    x_hi = np.minimum(x_lo + 1, world.shape[1] - 1)
    y_hi = np.minimum(y_lo + 1, world.shape[0] - 1)
    fx, fy = src_x - x_lo, src_y - y_lo
    top = world[y_lo, x_lo] * (1 - fx) + world[y_lo, x_hi] * fx
    bot = world[y_hi, x_lo] * (1 - fx) + world[y_hi, x_hi] * fx
    return top * (1 - fy) + bot * fy


def _window_boxes(
    vehicles: list[Vehicle], x0: int, angle_deg: float
) -> tuple[list[tuple[float, float, float, float]], list[str]]:
    """Vehicle boxes visible in a window, in pixel-index coordinates with
    inclusive endpoints. Rotated stamps get their (1 px padded) AABB."""
    boxes, classes = [], []
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cy, cx = (IMG_H - 1) / 2.0, (SECTION_W - 1) / 2.0
    for v in vehicles:
        rx0, ry0 = float(v.x), float(v.y)
        rx1, ry1 = float(v.x + v.width - 1), float(v.y + v.height - 1)
        if angle_deg == 0.0:
            bx0, bx1 = rx0 - x0, rx1 - x0
            by0, by1 = ry0, ry1
        else:
            # forward map strip -> window is the inverse rotation
            corners = []
            for px, py in ((rx0, ry0), (rx0, ry1), (rx1, ry0), (rx1, ry1)):
                dx, dy = px - x0 - cx, py - cy
                corners.append((cx + cos_t * dx + sin_t * dy, cy - sin_t * dx + cos_t * dy))
            xs = [c[0] for c in corners]
            ys = [c[1] for c in corners]
            bx0, bx1 = math.floor(min(xs)) - 1, math.ceil(max(xs)) + 1
            by0, by1 = math.floor(min(ys)) - 1, math.ceil(max(ys)) + 1
        bx0, by0 = max(bx0, 0.0), max(by0, 0.0)
        bx1, by1 = min(bx1, SECTION_W - 1.0), min(by1, IMG_H - 1.0)
        if bx1 <= bx0 or by1 <= by0:
            continue
        boxes.append((float(bx0), float(by0), float(bx1), float(by1)))
        classes.append(_VEHICLE_CLASS_CYCLE[v.template % len(_VEHICLE_CLASS_CYCLE)])
    return boxes, classes


def _labels_for_window(x0: int, n_sections: int) -> tuple[str, ...]:
    fracs = []
    for k in range(n_sections):
        lo = max(x0, k * SECTION_W)
        hi = min(x0 + SECTION_W, (k + 1) * SECTION_W)
        fracs.append(max(0, hi - lo) / SECTION_W)
    primary = int(np.argmax(fracs))
    labels = [section_id(primary)]
    others = sorted(
        ((f, k) for k, f in enumerate(fracs) if k != primary), key=lambda t: (-t[0], t[1])
    )
    if others and others[0][0] >= 0.25:
        labels.append(section_id(others[0][1]))
    return tuple(labels)


def render_corpus(spec: SceneSpec) -> Corpus:
    """Render every image and its ground truth in memory."""
    spec.validate()
    bank = _vehicle_templates(spec)
    background = _render_background(spec)
    gallery_vehicles = _gallery_vehicles(spec, bank)
    query_vehicles = _churn_vehicles(spec, gallery_vehicles)
    gallery_world = _render_world(background, gallery_vehicles, bank)
    query_world = _render_world(background, query_vehicles, bank)
    total_w = spec.n_sections * SECTION_W

    gallery = []
    for s in range(spec.n_sections):
        x0 = s * SECTION_W
        boxes, classes = _window_boxes(gallery_vehicles, x0, 0.0)
        gallery.append(
            RenderedImage(
                image_id=f"g{s:03d}",
                pixels=gallery_world[:, x0:x0 + SECTION_W].copy(),
                labels=(section_id(s),),
                boxes=boxes,
                box_classes=classes,
                window_x0=x0,
                angle_deg=0.0,
            )
        )

    queries = []
    max_shift, max_angle = spec.geometric_jitter
    b_amp, c_amp = spec.photometric_jitter
    shift_slots = int(max_shift) // SLOT
    qidx = 0
    for s in range(spec.n_sections):
        for q in range(spec.queries_per_section):
            rng = _rng(spec, 80, s, q)
            # shifts stay on the slot pitch so windows stay grid-aligned
            dx = SLOT * int(rng.integers(-shift_slots, shift_slots + 1)) if shift_slots else 0
            angle = float(rng.uniform(-max_angle, max_angle))
            brightness = float(rng.uniform(-b_amp, b_amp))
            contrast = 1.0 + float(rng.uniform(-c_amp, c_amp))
            x0 = min(max(s * SECTION_W + dx, 0), total_w - SECTION_W)
            pixels = _sample_window(query_world, x0, angle)
            if brightness != 0.0 or contrast != 1.0:
                pixels = np.clip((pixels - 0.5) * contrast + 0.5 + brightness, 0.0, 1.0)
            boxes, classes = _window_boxes(query_vehicles, x0, angle)
            queries.append(
                RenderedImage(
                    image_id=f"q{qidx:03d}",
                    pixels=pixels,
                    labels=_labels_for_window(x0, spec.n_sections),
                    boxes=boxes,
                    box_classes=classes,
                    window_x0=x0,
                    angle_deg=angle,
                )
            )
            qidx += 1

    return Corpus(
        spec=spec,
        gallery=gallery,
        queries=queries,
        gallery_vehicles=gallery_vehicles,
        query_vehicles=query_vehicles,
        gallery_world=gallery_world,
        query_world=query_world,
    )


def _detection_lines(
    images: list[RenderedImage], rng: np.random.Generator, spec: SceneSpec
) -> list[str]:
    lines = ["# source_id class score x_min y_min x_max y_max"]
    jit = spec.detection_box_jitter
    for img in images:
        for (bx0, by0, bx1, by1), cls in zip(img.boxes, img.box_classes):
            if spec.detection_miss_rate > 0 and rng.random() < spec.detection_miss_rate:
                continue
            if jit > 0:
                jx0 = bx0 + float(rng.uniform(-jit, jit))
                jy0 = by0 + float(rng.uniform(-jit, jit))
                jx1 = bx1 + float(rng.uniform(-jit, jit))
                jy1 = by1 + float(rng.uniform(-jit, jit))
                if jx0 < jx1 and jy0 < jy1:
                    bx0, by0, bx1, by1 = jx0, jy0, jx1, jy1
            lines.append(f"{img.image_id} {cls} 1.0 {bx0!r} {by0!r} {bx1!r} {by1!r}")
    return lines


def generate(spec: SceneSpec, out_dir: str | Path) -> CorpusPaths:
    """Render a corpus and write it out.

    Layout under out_dir: gallery/*.png, queries/*.png, gallery and query
    manifests, matching detection files, and scene_spec.json echoing the
    spec. Calling twice with an equal spec writes identical bytes.
    """
    corpus = render_corpus(spec)
    out = Path(out_dir)
    (out / "gallery").mkdir(parents=True, exist_ok=True)
    (out / "queries").mkdir(parents=True, exist_ok=True)

    gal_lines, qry_lines = [], []
    for img in corpus.gallery:
        rel = f"gallery/{img.image_id}.png"
        save_grayscale_png(img.pixels, out / rel)
        gal_lines.append(f"{img.image_id} {rel} {img.labels[0]}")
    for img in corpus.queries:
        rel = f"queries/{img.image_id}.png"
        save_grayscale_png(img.pixels, out / rel)
        qry_lines.append(f"{img.image_id} {rel} " + " ".join(img.labels))

    paths = CorpusPaths(
        root=out,
        gallery_manifest=out / "gallery_manifest.txt",
        query_manifest=out / "query_manifest.txt",
        gallery_detections=out / "gallery_detections.txt",
        query_detections=out / "query_detections.txt",
    )
    paths.gallery_manifest.write_text("\n".join(gal_lines) + "\n", encoding="utf-8")
    paths.query_manifest.write_text("\n".join(qry_lines) + "\n", encoding="utf-8")

    det_rng = _rng(spec, 90)
    paths.gallery_detections.write_text(
        "\n".join(_detection_lines(corpus.gallery, det_rng, spec)) + "\n", encoding="utf-8"
    )
    paths.query_detections.write_text(
        "\n".join(_detection_lines(corpus.queries, det_rng, spec)) + "\n", encoding="utf-8"
    )
    (out / "scene_spec.json").write_text(
        json.dumps(spec.to_json_dict(), sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    return paths
