"""Shared fixtures: tiny on-disk cohorts and cheap trained checkpoints.

Everything here runs at 32x32 with a handful of images so the whole suite
stays fast; the acceptance tests build their own larger corpora.
"""
import numpy as np
import pytest

from plastiseg.dataio import (Background, Cohort, ShapeKind, ToyCorpusSpec,
                              read_manifest, split_dataset, synth_toy_corpus,
                              write_corpus, write_manifest)
from plastiseg.inpaint_gan import GanTrainConfig, train_gan
from plastiseg.segmodel import SegTrainConfig, train_segmentation
from plastiseg.dataio import Split, load_split_pairs


def make_spec(cohort, n, background, shapes=(1, 3), seed=None, size=32):
    offsets = {Cohort.COHORT1: 0, Cohort.COHORT2: 1, Cohort.COHORT3: 2}
    return ToyCorpusSpec(
        n_images=n, image_size=size,
        shape_mix={ShapeKind.FIBER: 0.5, ShapeKind.FILM: 0.5},
        background=background,
        seed=seed if seed is not None else 100 + offsets.get(cohort, 9),
        shapes_per_image=shapes, cohort=cohort,
    )


@pytest.fixture(scope="session")
def toy_cohorts(tmp_path_factory):
    """cohort1 (split 80/10/10), cohort2 (clean, no masks), cohort3."""
    root = tmp_path_factory.mktemp("cohorts")
    out = {}

    spec1 = make_spec(Cohort.COHORT1, 16, Background.TEXTURE_NOISE)
    images, masks = synth_toy_corpus(spec1)
    m1 = write_corpus(images, masks, root / "cohort1", seed=spec1.seed)
    m1_split = split_dataset(m1, (0.8, 0.1, 0.1), seed=11)
    write_manifest(m1_split, root / "cohort1" / "manifest.json")
    out["cohort1"] = read_manifest(root / "cohort1" / "manifest.json")

    spec2 = make_spec(Cohort.COHORT2, 8, Background.DEBRIS, shapes=(0, 0))
    images, masks = synth_toy_corpus(spec2)
    write_corpus(images, masks, root / "cohort2", seed=spec2.seed,
                 with_masks=False)
    out["cohort2"] = read_manifest(root / "cohort2" / "manifest.json")

    spec3 = make_spec(Cohort.COHORT3, 6, Background.DEBRIS)
    images, masks = synth_toy_corpus(spec3)
    write_corpus(images, masks, root / "cohort3", seed=spec3.seed)
    out["cohort3"] = read_manifest(root / "cohort3" / "manifest.json")

    out["root"] = root
    return out


@pytest.fixture(scope="session")
def cohort1_pairs(toy_cohorts):
    return load_split_pairs(toy_cohorts["cohort1"], Split.TRAIN)


@pytest.fixture(scope="session")
def cohort1_val_pairs(toy_cohorts):
    return load_split_pairs(toy_cohorts["cohort1"], Split.VAL)


@pytest.fixture(scope="session")
def gan_checkpoint(tmp_path_factory, cohort1_pairs):
    ckpt_dir = tmp_path_factory.mktemp("gan")
    cfg = GanTrainConfig(epochs=2, batch_size=8, image_size=32,
                         base_channels=16, seed=5,
                         checkpoint_dir=str(ckpt_dir))
    result = train_gan(cohort1_pairs, cfg)
    return result


@pytest.fixture(scope="session")
def seg_model(tmp_path_factory, cohort1_pairs, cohort1_val_pairs):
    ckpt_dir = tmp_path_factory.mktemp("seg")
    cfg = SegTrainConfig(epochs=3, batch_size=8, image_size=32, seed=5,
                         checkpoint_dir=str(ckpt_dir))
    return train_segmentation(cohort1_pairs, cohort1_val_pairs, cfg)


@pytest.fixture(scope="session")
def seg_checkpoint_path(seg_model):
    from pathlib import Path

    return Path(seg_model.config.checkpoint_dir) / "seg_best.pt"


@pytest.fixture(scope="session")
def synth_corpus(tmp_path_factory, gan_checkpoint, toy_cohorts):
    from plastiseg.maskops import TransformSampler
    from plastiseg.synthgen import SynthJob, generate_corpus

    out = tmp_path_factory.mktemp("synth") / "corpus"
    pairs = load_split_pairs(toy_cohorts["cohort1"], Split.TRAIN)
    guiding = [m for _, m in pairs if m is not None and m.pixels.sum() >= 16]
    job = SynthJob(checkpoint=str(gan_checkpoint.path),
                   clean_manifest=toy_cohorts["cohort2"],
                   guiding_masks=guiding, output_dir=str(out),
                   sampler=TransformSampler(seed=1), seed=2)
    return generate_corpus(job)


@pytest.fixture()
def rng():
    return np.random.default_rng(7)
