"""Start a real backend for the frontend e2e tests.

Builds a micro corpus, trains a one-epoch segmentation model, prepares the
two study pools, writes a sample upload image, then serves HTTP until
killed. The e2e suite polls /api/health for readiness.
"""
import argparse
from pathlib import Path

import uvicorn

from plastiseg.dataio import (Background, Cohort, ShapeKind, Split,
                              ToyCorpusSpec, load_split_pairs, read_manifest,
                              save_image_png, split_dataset, synth_toy_corpus,
                              write_corpus, write_manifest)
from plastiseg.segmodel import SegTrainConfig, train_segmentation
from plastiseg.service import ServiceConfig, create_app


def build_corpus(workdir: Path, name, cohort, n, background, shapes, seed):
    spec = ToyCorpusSpec(n_images=n, image_size=32,
                         shape_mix={ShapeKind.FIBER: 0.5, ShapeKind.FILM: 0.5},
                         background=background, seed=seed,
                         shapes_per_image=shapes, cohort=cohort)
    images, masks = synth_toy_corpus(spec)
    return write_corpus(images, masks, workdir / name, seed=seed)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--port", type=int, required=True)
    parser.add_argument("--workdir", type=Path, required=True)
    args = parser.parse_args()
    workdir = args.workdir
    workdir.mkdir(parents=True, exist_ok=True)

    train_manifest = build_corpus(workdir, "train", Cohort.COHORT1, 12,
                                  Background.TEXTURE_NOISE, (1, 3), 1)
    train_manifest = split_dataset(train_manifest, (0.8, 0.1, 0.1), seed=2)
    write_manifest(train_manifest, workdir / "train" / "manifest.json")
    train_manifest = read_manifest(workdir / "train" / "manifest.json")

    build_corpus(workdir, "pool_real", Cohort.COHORT3, 24,
                 Background.DEBRIS, (1, 3), 3)
    build_corpus(workdir, "pool_generated", Cohort.SYNTHETIC, 24,
                 Background.DEBRIS, (1, 2), 4)

    cfg = SegTrainConfig(epochs=1, batch_size=8, image_size=32, seed=5,
                         checkpoint_dir=str(workdir / "seg"))
    train_segmentation(load_split_pairs(train_manifest, Split.TRAIN),
                       load_split_pairs(train_manifest, Split.VAL), cfg)

    sample, _ = load_split_pairs(train_manifest, Split.TEST)[0]
    save_image_png(sample.pixels, workdir / "sample.png")

    app = create_app(ServiceConfig(
        checkpoint=str(workdir / "seg" / "seg_best.pt"),
        session_dir=str(workdir / "sessions"),
        study_real_manifest=str(workdir / "pool_real" / "manifest.json"),
        study_gen_manifest=str(workdir / "pool_generated" / "manifest.json"),
        webui_dir=str(Path(__file__).resolve().parents[1] / "dist"),
    ))
    uvicorn.run(app, host="127.0.0.1", port=args.port, log_level="warning")


if __name__ == "__main__":
    main()
