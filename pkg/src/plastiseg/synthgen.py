"""Synthetic corpus generation: inpaint particles into clean scene images.

Each clean image gets a guiding mask drawn uniformly (with replacement) from
the cohort1 mask pool, randomly transformed, and inpainted by a trained
generator. The transformed mask IS the ground-truth label of the emitted
sample, and pixels outside it are bit-identical to the clean source. Every
sample carries a provenance record sufficient to rebuild its mask exactly.
"""
from __future__ import annotations

import json
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nnio
from .dataio import (BinaryMask, Cohort, DatasetManifest, ImageSample,
                     ManifestEntry, load_entry, save_image_png, save_mask_png,
                     write_manifest)
from .errors import DegenerateMask
from .inpaint_gan import generator_composited_forward, load_checkpoint
from .maskops import TransformSampler, sample_transform

GUIDE_RETRIES = 20  # distinct guiding masks to try before giving up on an image


@dataclass
class SynthJob:
    checkpoint: str
    clean_manifest: DatasetManifest
    guiding_masks: list[BinaryMask]
    output_dir: str
    per_image_count: int = 1
    sampler: TransformSampler = field(default_factory=TransformSampler)
    seed: int = 0

    def __post_init__(self):
        if not self.guiding_masks:
            raise ValueError("guiding_masks must be non-empty")
        if self.per_image_count < 1:
            raise ValueError("per_image_count must be >= 1")


def fit_guiding_mask(guiding: BinaryMask, height: int, width: int) -> BinaryMask:
    """Nearest-neighbor resize of a guiding mask to the target dimensions."""
    if guiding.pixels.shape == (height, width):
        return guiding
    return BinaryMask(id=guiding.id,
                      pixels=nnio.resize_mask(guiding.pixels, height, width))


def generate_sample(gen, clean: ImageSample, guiding: BinaryMask,
                    sampler: TransformSampler,
                    rng: np.random.Generator | None = None):
    """Inpaint one clean image; returns (image, mask, transform).

    The returned mask is the label by construction: only pixels it marks
    differ from the clean source.
    """
    fitted = fit_guiding_mask(guiding, clean.height, clean.width)
    transform, mask = sample_transform(sampler, fitted, rng=rng)
    image = generator_composited_forward(gen, clean, mask)
    mask.paired_image_id = clean.id
    return image, mask, transform


def generate_corpus(job: SynthJob) -> DatasetManifest:
    """Emit per_image_count samples per clean image into job.output_dir.

    Layout: images/*.png, masks/*.png, manifest.json, provenance.jsonl.
    Output appears atomically: everything is staged in a temp directory and
    renamed into place, so an aborted run leaves nothing behind.
    """
    gen, _, _ = load_checkpoint(job.checkpoint)
    clean_entries = job.clean_manifest.entries
    if not clean_entries:
        raise ValueError("clean manifest has no entries")

    out_dir = Path(job.output_dir)
    if out_dir.exists():
        raise FileExistsError(f"output dir {out_dir} already exists")
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(dir=out_dir.parent, prefix=".synth-"))
    try:
        entries = []
        with (stage / "provenance.jsonl").open("w") as prov:
            for index, entry in enumerate(clean_entries):
                clean, _ = load_entry(job.clean_manifest, entry)
                rng = np.random.default_rng([job.seed, index])
                for k in range(job.per_image_count):
                    image, mask, transform, guide_id = _generate_with_retries(
                        gen, clean, job, rng)
                    sample_id = f"synthetic_{index:04d}_{k}"
                    rel_image = f"images/{sample_id}.png"
                    rel_mask = f"masks/{sample_id}_mask.png"
                    save_image_png(image.pixels, stage / rel_image)
                    save_mask_png(mask.pixels, stage / rel_mask)
                    entries.append(ManifestEntry(image=rel_image, mask=rel_mask,
                                                 cohort=Cohort.SYNTHETIC))
                    prov.write(json.dumps({
                        "sample_id": sample_id,
                        "clean_id": clean.id,
                        "guiding_mask_id": guide_id,
                        "transform": transform.to_dict(),
                    }) + "\n")
        manifest = DatasetManifest(entries=entries, seed=job.seed, root=stage)
        write_manifest(manifest, stage / "manifest.json")
        stage.rename(out_dir)
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    manifest.root = out_dir
    return manifest


def _generate_with_retries(gen, clean, job, rng):
    """Degenerate transforms fall back to another guiding mask, a few times."""
    last_error = None
    for _ in range(GUIDE_RETRIES):
        guiding = job.guiding_masks[int(rng.integers(len(job.guiding_masks)))]
        try:
            image, mask, transform = generate_sample(
                gen, clean, guiding, job.sampler, rng=rng)
            return image, mask, transform, guiding.id
        except DegenerateMask as exc:
            last_error = exc
    raise DegenerateMask(
        f"all guiding masks degenerate for clean image {clean.id}: {last_error}")
