"""Binary-mask geometry and the mask-guided compositing operator.

Transforms are rigid: rotate about the mask center (nearest-neighbor, so the
output stays strictly binary), then shift by whole pixels. Pixels leaving the
frame are clipped; newly exposed pixels fill with 0 (background). Theta is in
degrees; positive theta rotates the content clockwise in the usual row-down
raster orientation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .dataio import BinaryMask, ImageSample
from .errors import DegenerateMask, DimensionMismatch


@dataclass
class MaskTransform:
    dx: int = 0  # horizontal shift, pixels
    dy: int = 0  # vertical shift, pixels
    theta: float = 0.0  # degrees, normalized to [0, 360)

    def __post_init__(self):
        self.theta = float(self.theta) % 360.0

    def to_dict(self) -> dict:
        return {"dx": int(self.dx), "dy": int(self.dy), "theta": self.theta}

    @classmethod
    def from_dict(cls, d: dict) -> "MaskTransform":
        return cls(dx=int(d["dx"]), dy=int(d["dy"]), theta=float(d["theta"]))


@dataclass
class TransformSampler:
    max_shift_fraction: float = 0.25
    min_foreground_pixels: int = 16
    max_attempts: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.max_shift_fraction <= 1:
            raise ValueError("max_shift_fraction must be in (0, 1]")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


def _exact_trig(theta: float) -> tuple[float, float]:
    # exact values at quarter turns so those land as pure index permutations
    t = theta % 360.0
    if t == 0.0:
        return 1.0, 0.0
    if t == 90.0:
        return 0.0, 1.0
    if t == 180.0:
        return -1.0, 0.0
    if t == 270.0:
        return 0.0, -1.0
    rad = math.radians(t)
    return math.cos(rad), math.sin(rad)


def apply_transform(mask: BinaryMask, t: MaskTransform) -> BinaryMask:
    """Rotate about the mask center, then shift; output binary, same shape."""
    pixels = mask.pixels
    h, w = pixels.shape
    if abs(t.dx) > w or abs(t.dy) > h:
        raise ValueError(f"shift ({t.dx},{t.dy}) exceeds mask size {w}x{h}")
    cos_t, sin_t = _exact_trig(t.theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0

    rr, cc = np.mgrid[0:h, 0:w]
    # undo shift, then inverse-rotate into source coordinates
    yr = (rr - t.dy) - cy
    xr = (cc - t.dx) - cx
    src_c = cos_t * xr + sin_t * yr + cx
    src_r = -sin_t * xr + cos_t * yr + cy
    src_ri = np.rint(src_r).astype(np.int64)
    src_ci = np.rint(src_c).astype(np.int64)

    valid = (src_ri >= 0) & (src_ri < h) & (src_ci >= 0) & (src_ci < w)
    out = np.zeros((h, w), dtype=np.uint8)
    out[valid] = pixels[src_ri[valid], src_ci[valid]]
    return BinaryMask(id=mask.id, pixels=out, paired_image_id=mask.paired_image_id)


def sample_transform(sampler: TransformSampler, mask: BinaryMask,
                     rng: np.random.Generator | None = None):
    """Draw random transforms until the result keeps enough foreground.

    Shifts are uniform over +-max_shift_fraction of each dimension, rotation
    uniform over [0, 360). With the sampler's own seed the draw sequence is
    reproducible; callers running many draws pass their own rng stream.
    """
    if int(mask.pixels.sum()) < 1:
        raise DegenerateMask("guiding mask has no foreground")
    if rng is None:
        rng = np.random.default_rng(sampler.seed)
    h, w = mask.pixels.shape
    max_dx = int(sampler.max_shift_fraction * w)
    max_dy = int(sampler.max_shift_fraction * h)
    for _ in range(sampler.max_attempts):
        t = MaskTransform(
            dx=int(rng.integers(-max_dx, max_dx + 1)),
            dy=int(rng.integers(-max_dy, max_dy + 1)),
            theta=float(rng.uniform(0.0, 360.0)),
        )
        transformed = apply_transform(mask, t)
        if int(transformed.pixels.sum()) >= sampler.min_foreground_pixels:
            return t, transformed
    raise DegenerateMask(
        f"no transform of mask {mask.id} kept >= "
        f"{sampler.min_foreground_pixels} foreground pixels "
        f"in {sampler.max_attempts} attempts")


def composite_pixels(generated: np.ndarray, original: np.ndarray,
                     mask01: np.ndarray) -> np.ndarray:
    """Per-pixel selection: generated where mask=1, original elsewhere.

    Bit-exact on any dtype; no blending. This is the masked-region-only
    output rule the whole pipeline is built around.
    """
    if generated.shape != original.shape:
        raise DimensionMismatch(
            f"generated {generated.shape} != original {original.shape}")
    if mask01.shape != original.shape[:2]:
        raise DimensionMismatch(
            f"mask {mask01.shape} != image {original.shape[:2]}")
    selector = mask01.astype(bool)
    if original.ndim == 3:
        selector = selector[:, :, None]
    return np.where(selector, generated, original)


def composite(generated: ImageSample, original: ImageSample,
              mask: BinaryMask) -> ImageSample:
    out = composite_pixels(generated.pixels, original.pixels, mask.pixels)
    return ImageSample(id=original.id, pixels=out, cohort=original.cohort,
                       source_path=original.source_path)


EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


def foreground_stats(mask: BinaryMask) -> dict:
    """Pixel count, area fraction, and 8-connected component count."""
    pixels = mask.pixels
    count = int(np.count_nonzero(pixels))
    _, n_components = ndimage.label(pixels, structure=EIGHT_CONNECTED)
    return {
        "pixel_count": count,
        "fraction": count / pixels.size,
        "component_count": int(n_components),
    }
