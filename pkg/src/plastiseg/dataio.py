"""Image/mask corpus loading, manifests, deterministic splits, and a procedural
toy-corpus synthesizer.

Corpora are organized into three real-data cohorts plus a synthetic cohort:
cohort1 = curated particle images with hand masks, cohort2 = particle-free
scene images, cohort3 = diverse evaluation images. At desk scale the toy
synthesizer stands in for the real cohorts: it draws fiber and film shapes
over configurable backgrounds and returns the exact rasterization of those
shapes as ground truth.

On-disk conventions: PNG rasters; masks are single-channel PNG with
0 = background, 255 = particle; one JSON manifest per dataset.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import BadRatios, DimensionMismatch, IoFailure, NonImageFile, SchemaMismatch

SCHEMA_VERSION = 1
MIN_IMAGE_SIDE = 32
MASK_THRESHOLD = 128  # >= on 8-bit grayscale -> foreground


class Cohort(str, Enum):
    COHORT1 = "cohort1"
    COHORT2 = "cohort2"
    COHORT3 = "cohort3"
    SYNTHETIC = "synthetic"


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"
    UNSPLIT = "unsplit"


class ShapeKind(str, Enum):
    FIBER = "fiber"
    FILM = "film"


class Background(str, Enum):
    TEXTURE_NOISE = "texture_noise"
    GRADIENT = "gradient"
    DEBRIS = "debris"


@dataclass
class ImageSample:
    id: str
    pixels: np.ndarray  # HxWx3 uint8
    cohort: Cohort = Cohort.COHORT1
    source_path: str = ""

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def validate(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise NonImageFile(f"{self.id}: expected HxWx3 raster")
        if self.height < MIN_IMAGE_SIDE or self.width < MIN_IMAGE_SIDE:
            raise NonImageFile(
                f"{self.id}: {self.height}x{self.width} below minimum "
                f"{MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}")


@dataclass
class BinaryMask:
    id: str
    pixels: np.ndarray  # HxW uint8 in {0,1}
    paired_image_id: str | None = None

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def validate(self):
        values = np.unique(self.pixels)
        if not np.all(np.isin(values, (0, 1))):
            raise SchemaMismatch(f"mask {self.id}: values outside {{0,1}}")


@dataclass
class ManifestEntry:
    image: str  # path relative to the manifest file
    mask: str | None
    cohort: Cohort
    split: Split = Split.UNSPLIT

    @property
    def image_id(self) -> str:
        return Path(self.image).stem


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    seed: int = 0
    schema_version: int = SCHEMA_VERSION
    root: Path | None = None  # set when read from / written to disk

    def by_split(self, split: Split) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "seed": self.seed,
            "entries": [
                {
                    "image": e.image,
                    "mask": e.mask,
                    "cohort": e.cohort.value,
                    "split": e.split.value,
                }
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, data: dict, root: Path | None = None) -> "DatasetManifest":
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SchemaMismatch(
                f"manifest schema_version {version!r}, supported {SCHEMA_VERSION}")
        entries = [
            ManifestEntry(
                image=item["image"],
                mask=item.get("mask"),
                cohort=Cohort(item["cohort"]),
                split=Split(item.get("split", "unsplit")),
            )
            for item in data.get("entries", [])
        ]
        ids = [e.image for e in entries]
        if len(ids) != len(set(ids)):
            raise SchemaMismatch("duplicate image entries in manifest")
        return cls(entries=entries, seed=int(data.get("seed", 0)), root=root)


# ---------------------------------------------------------------------------
# PNG round-trips


def load_image_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise NonImageFile(f"{path}: {exc}") from exc


def load_mask_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            gray = np.asarray(im.convert("L"))
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise NonImageFile(f"{path}: {exc}") from exc
    return (gray >= MASK_THRESHOLD).astype(np.uint8)


def save_image_png(pixels: np.ndarray, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="RGB").save(path)


def save_mask_png(mask01: np.ndarray, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    out = (np.asarray(mask01, dtype=np.uint8) * 255)
    Image.fromarray(out, mode="L").save(path)


def load_pair(image_path, mask_path, cohort: Cohort = Cohort.COHORT1):
    """Load an (image, mask) pair; binarize the mask at the 128 threshold."""
    pixels = load_image_png(image_path)
    mask01 = load_mask_png(mask_path)
    if mask01.shape != pixels.shape[:2]:
        raise DimensionMismatch(
            f"mask {mask01.shape} != image {pixels.shape[:2]} "
            f"({image_path}, {mask_path})")
    image_id = Path(image_path).stem
    sample = ImageSample(id=image_id, pixels=pixels, cohort=cohort,
                         source_path=str(image_path))
    sample.validate()
    mask = BinaryMask(id=Path(mask_path).stem, pixels=mask01,
                      paired_image_id=image_id)
    return sample, mask


# ---------------------------------------------------------------------------
# Manifests


def write_manifest(manifest: DatasetManifest, path):
    """Whole-file atomic write (temp file + rename).

    Entry paths are kept relative to the manifest file: writing a manifest
    that was rooted elsewhere rebases them so the references stay valid.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if manifest.root is not None and Path(manifest.root).resolve() != path.parent.resolve():
        root = Path(manifest.root).resolve()
        target = path.parent.resolve()
        manifest = DatasetManifest(
            entries=[replace(
                e,
                image=os.path.relpath(root / e.image, target),
                mask=None if e.mask is None else os.path.relpath(root / e.mask, target),
            ) for e in manifest.entries],
            seed=manifest.seed,
            schema_version=manifest.schema_version,
            root=path.parent,
        )
    payload = json.dumps(manifest.to_dict(), indent=2)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise IoFailure(f"writing {path}: {exc}") from exc
    manifest.root = path.parent


def read_manifest(path, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise IoFailure(f"reading {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"{path}: not valid JSON: {exc}") from exc
    manifest = DatasetManifest.from_dict(data, root=path.parent)
    if check_files:
        for e in manifest.entries:
            for rel in (e.image, e.mask):
                if rel is not None and not (path.parent / rel).exists():
                    raise IoFailure(f"manifest references missing file {rel}")
    return manifest


def load_entry(manifest: DatasetManifest, entry: ManifestEntry):
    """Resolve one manifest entry to an (ImageSample, BinaryMask|None) pair."""
    if manifest.root is None:
        raise IoFailure("manifest has no root directory; read it from disk first")
    image_path = manifest.root / entry.image
    pixels = load_image_png(image_path)
    sample = ImageSample(id=entry.image_id, pixels=pixels, cohort=entry.cohort,
                         source_path=str(image_path))
    sample.validate()
    mask = None
    if entry.mask is not None:
        mask01 = load_mask_png(manifest.root / entry.mask)
        if mask01.shape != pixels.shape[:2]:
            raise DimensionMismatch(
                f"{entry.mask}: mask {mask01.shape} != image {pixels.shape[:2]}")
        mask = BinaryMask(id=Path(entry.mask).stem, pixels=mask01,
                          paired_image_id=entry.image_id)
    return sample, mask


def load_split_pairs(manifest: DatasetManifest, split: Split | None = None):
    """Load all (image, mask?) pairs, optionally restricted to one split."""
    entries = manifest.entries if split is None else manifest.by_split(split)
    return [load_entry(manifest, e) for e in entries]


def split_dataset(manifest: DatasetManifest, ratios, seed: int) -> DatasetManifest:
    """Assign train/val/test splits deterministically.

    Counts are floor(n*ratio) per split with all remainders going to TRAIN.
    The assignment depends only on the sorted entry ids and the seed, so
    re-running is idempotent and input order is irrelevant.
    """
    train_r, val_r, test_r = ratios
    if min(train_r, val_r, test_r) <= 0 or abs(train_r + val_r + test_r - 1.0) > 1e-9:
        raise BadRatios(f"ratios {ratios} must be positive and sum to 1")
    n = len(manifest.entries)
    if n < 3:
        raise ValueError("need at least 3 entries to split")

    order = sorted(range(n), key=lambda i: manifest.entries[i].image)
    rng = np.random.default_rng(seed)
    order = [order[i] for i in rng.permutation(n)]

    n_val = int(math.floor(n * val_r))
    n_test = int(math.floor(n * test_r))
    n_train = n - n_val - n_test  # floor(n*train_r) + remainders

    assignment = {}
    for pos, idx in enumerate(order):
        if pos < n_train:
            assignment[idx] = Split.TRAIN
        elif pos < n_train + n_val:
            assignment[idx] = Split.VAL
        else:
            assignment[idx] = Split.TEST
    entries = [replace(e, split=assignment[i]) for i, e in enumerate(manifest.entries)]
    return DatasetManifest(entries=entries, seed=seed,
                           schema_version=manifest.schema_version,
                           root=manifest.root)


# ---------------------------------------------------------------------------
# Toy corpus synthesis


@dataclass
class FiberShape:
    """Open polyline stroke with constant width."""
    points: list[tuple[float, float]]  # (row, col) vertices
    width: float  # 1..4 px

    def covers(self, r: float, c: float) -> bool:
        radius = self.width / 2.0
        for (r0, c0), (r1, c1) in zip(self.points, self.points[1:]):
            if _point_segment_dist(r, c, r0, c0, r1, c1) <= radius:
                return True
        return False

    def rasterize(self, height: int, width: int) -> np.ndarray:
        rr, cc = np.mgrid[0:height, 0:width]
        hit = np.zeros((height, width), dtype=bool)
        radius = self.width / 2.0
        for (r0, c0), (r1, c1) in zip(self.points, self.points[1:]):
            hit |= _segment_dist_grid(rr, cc, r0, c0, r1, c1) <= radius
        return hit


@dataclass
class FilmShape:
    """Irregular blob: radius modulated by a short cosine series."""
    center: tuple[float, float]  # (row, col)
    base_radius: float
    amplitudes: list[float]  # per harmonic k = 2, 3, ...
    phases: list[float]

    def _radius_at(self, angle: float) -> float:
        r = 1.0
        for k, (a, p) in enumerate(zip(self.amplitudes, self.phases), start=2):
            r += a * math.cos(k * angle + p)
        return self.base_radius * r

    def covers(self, r: float, c: float) -> bool:
        dy, dx = r - self.center[0], c - self.center[1]
        return math.hypot(dy, dx) <= self._radius_at(math.atan2(dy, dx))

    def rasterize(self, height: int, width: int) -> np.ndarray:
        rr, cc = np.mgrid[0:height, 0:width]
        dy = rr - self.center[0]
        dx = cc - self.center[1]
        angle = np.arctan2(dy, dx)
        limit = np.ones_like(angle)
        for k, (a, p) in enumerate(zip(self.amplitudes, self.phases), start=2):
            limit += a * np.cos(k * angle + p)
        return np.hypot(dy, dx) <= self.base_radius * limit


def _point_segment_dist(r, c, r0, c0, r1, c1) -> float:
    vr, vc = r1 - r0, c1 - c0
    wr, wc = r - r0, c - c0
    seg_len2 = vr * vr + vc * vc
    if seg_len2 == 0:
        return math.hypot(wr, wc)
    t = max(0.0, min(1.0, (wr * vr + wc * vc) / seg_len2))
    return math.hypot(wr - t * vr, wc - t * vc)


def _segment_dist_grid(rr, cc, r0, c0, r1, c1) -> np.ndarray:
    vr, vc = r1 - r0, c1 - c0
    wr = rr - r0
    wc = cc - c0
    seg_len2 = vr * vr + vc * vc
    if seg_len2 == 0:
        return np.hypot(wr, wc)
    t = np.clip((wr * vr + wc * vc) / seg_len2, 0.0, 1.0)
    return np.hypot(wr - t * vr, wc - t * vc)


# Saturated particle palette vs earthier distractor palette; debris shares the
# yellow/olive corner so the two distributions overlap but stay separable.
PLASTIC_BASE_COLORS = (
    (45, 80, 200), (200, 55, 70), (70, 180, 190), (150, 65, 185), (225, 185, 60),
)
DEBRIS_BASE_COLORS = (
    (135, 105, 60), (110, 95, 55), (95, 85, 65), (160, 130, 85), (180, 160, 70),
)


@dataclass
class ToyCorpusSpec:
    n_images: int
    image_size: int = 64
    shape_mix: dict = field(default_factory=lambda: {ShapeKind.FIBER: 0.5,
                                                     ShapeKind.FILM: 0.5})
    background: Background = Background.TEXTURE_NOISE
    seed: int = 0
    shapes_per_image: tuple[int, int] = (1, 3)  # inclusive range; (0,0) = none
    cohort: Cohort = Cohort.COHORT1

    def validate(self):
        if self.n_images < 1:
            raise ValueError("n_images must be >= 1")
        if self.image_size < MIN_IMAGE_SIDE:
            raise ValueError(f"image_size must be >= {MIN_IMAGE_SIDE}")
        fractions = [self.shape_mix.get(k, 0.0) for k in ShapeKind]
        if min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
            raise ValueError(f"shape_mix fractions {fractions} must be "
                             "non-negative and sum to 1")
        lo, hi = self.shapes_per_image
        if lo < 0 or hi < lo:
            raise ValueError("shapes_per_image must be 0 <= min <= max")


def _paint_background(rng: np.random.Generator, size: int,
                      background: Background) -> np.ndarray:
    n = size
    if background == Background.TEXTURE_NOISE:
        base = rng.uniform(190, 215)
        tint = rng.uniform(-4, 4, size=3)
        noise = ndimage.uniform_filter(rng.normal(0, 12, size=(n, n)), size=3)
        img = base + noise[:, :, None] + tint[None, None, :]
        return np.clip(img, 0, 255).astype(np.uint8)

    # gradient base shared by GRADIENT and DEBRIS
    c0 = np.array([rng.uniform(70, 110), rng.uniform(90, 135), rng.uniform(85, 125)])
    c1 = c0 + rng.uniform(40, 85, size=3)
    angle = rng.uniform(0, 2 * math.pi)
    rr, cc = np.mgrid[0:n, 0:n]
    proj = rr * math.sin(angle) + cc * math.cos(angle)
    t = (proj - proj.min()) / max(proj.max() - proj.min(), 1e-9)
    img = c0[None, None, :] + t[:, :, None] * (c1 - c0)[None, None, :]
    img = img + rng.normal(0, 3, size=(n, n, 1))

    if background == Background.DEBRIS:
        n_blobs = int(rng.integers(3, 8))
        for _ in range(n_blobs):
            blob = FilmShape(
                center=(rng.uniform(0, n), rng.uniform(0, n)),
                base_radius=rng.uniform(n / 22, n / 9),
                amplitudes=list(rng.uniform(0, 0.35, size=3)),
                phases=list(rng.uniform(0, 2 * math.pi, size=3)),
            )
            color = np.array(DEBRIS_BASE_COLORS[rng.integers(len(DEBRIS_BASE_COLORS))],
                             dtype=float)
            color += rng.uniform(-20, 20, size=3)
            inside = blob.rasterize(n, n)
            alpha = rng.uniform(0.65, 0.95)
            img[inside] = (1 - alpha) * img[inside] + alpha * color
        n_specks = int(rng.integers(10, 30))
        rows = rng.integers(0, n, size=n_specks)
        cols = rng.integers(0, n, size=n_specks)
        img[rows, cols] = img[rows, cols] * 0.5
    return np.clip(img, 0, 255).astype(np.uint8)


def _sample_shape(rng: np.random.Generator, size: int, kind: ShapeKind):
    n = size
    if kind == ShapeKind.FIBER:
        r, c = rng.uniform(0.15 * n, 0.85 * n, size=2)
        angle = rng.uniform(0, 2 * math.pi)
        points = [(r, c)]
        for _ in range(int(rng.integers(2, 6))):
            angle += rng.uniform(-0.7, 0.7)
            step = rng.uniform(n / 8, n / 4)
            r += step * math.sin(angle)
            c += step * math.cos(angle)
            points.append((r, c))
        width = float(rng.integers(1, 5))
        return FiberShape(points=points, width=width)
    return FilmShape(
        center=(rng.uniform(0.2 * n, 0.8 * n), rng.uniform(0.2 * n, 0.8 * n)),
        base_radius=rng.uniform(n / 12, n / 6),
        amplitudes=list(rng.uniform(0, 0.3, size=3)),
        phases=list(rng.uniform(0, 2 * math.pi, size=3)),
    )


def synth_toy_sample(spec: ToyCorpusSpec, index: int):
    """One procedural sample; returns (ImageSample, BinaryMask, shapes).

    Deterministic in (spec.seed, index). The mask is the exact union of the
    returned shapes' rasterizations.
    """
    rng = np.random.default_rng([spec.seed, index])
    n = spec.image_size
    img = _paint_background(rng, n, spec.background).astype(float)

    lo, hi = spec.shapes_per_image
    n_shapes = int(rng.integers(lo, hi + 1)) if hi > lo else lo
    fiber_frac = spec.shape_mix.get(ShapeKind.FIBER, 0.0)
    shapes = []
    mask = np.zeros((n, n), dtype=bool)
    for _ in range(n_shapes):
        kind = ShapeKind.FIBER if rng.random() < fiber_frac else ShapeKind.FILM
        shape = _sample_shape(rng, n, kind)
        inside = shape.rasterize(n, n)
        color = np.array(PLASTIC_BASE_COLORS[rng.integers(len(PLASTIC_BASE_COLORS))],
                         dtype=float)
        color += rng.uniform(-25, 25, size=3)
        alpha = rng.uniform(0.8, 0.95)
        jitter = rng.normal(0, 6, size=(n, n, 1))
        img[inside] = (1 - alpha) * img[inside] + alpha * (color + jitter[inside])
        mask |= inside
        shapes.append(shape)

    image_id = f"{spec.cohort.value}_{index:04d}"
    sample = ImageSample(id=image_id,
                         pixels=np.clip(img, 0, 255).astype(np.uint8),
                         cohort=spec.cohort)
    bmask = BinaryMask(id=f"{image_id}_mask", pixels=mask.astype(np.uint8),
                       paired_image_id=image_id)
    return sample, bmask, shapes


def synth_toy_corpus(spec: ToyCorpusSpec):
    """Generate the full toy corpus; fully determined by spec.seed."""
    spec.validate()
    images, masks = [], []
    for i in range(spec.n_images):
        sample, mask, _ = synth_toy_sample(spec, i)
        images.append(sample)
        masks.append(mask)
    return images, masks


def write_corpus(images, masks, out_dir, seed: int = 0,
                 with_masks: bool = True) -> DatasetManifest:
    """Write images/, masks/ PNG trees plus manifest.json; returns the manifest."""
    out_dir = Path(out_dir)
    entries = []
    for sample, mask in zip(images, masks):
        rel_image = f"images/{sample.id}.png"
        save_image_png(sample.pixels, out_dir / rel_image)
        rel_mask = None
        if with_masks and mask is not None:
            rel_mask = f"masks/{mask.id}.png"
            save_mask_png(mask.pixels, out_dir / rel_mask)
        entries.append(ManifestEntry(image=rel_image, mask=rel_mask,
                                     cohort=sample.cohort))
    manifest = DatasetManifest(entries=entries, seed=seed, root=out_dir)
    write_manifest(manifest, out_dir / "manifest.json")
    return manifest
