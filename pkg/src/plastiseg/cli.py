"""Pipeline orchestration: one binary, one declarative JSON config.

Every stage writes under a run directory named by the hash of the resolved
config, so two runs of the same config land in the same tree and a stage
refuses to overwrite its own previous output. The resolved config (plus a
timestamp) is written next to each stage's outputs for provenance. Paths in
the config may use the "{run}" placeholder, which expands to the run root;
the built-in defaults chain the stages together that way.
"""
from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import click

from . import __version__, report
from .dataio import (Background, Cohort, DatasetManifest, ShapeKind, Split,
                     ToyCorpusSpec, load_split_pairs, read_manifest,
                     split_dataset, synth_toy_corpus, write_corpus,
                     write_manifest)
from .errors import DomainError
from .inpaint_gan import GanTrainConfig, train_gan
from .maskops import TransformSampler
from .metrics import evaluate
from .readerstudy import (SessionStore, Truth, next_trial, pool_from_manifest,
                          score_session)
from .segmodel import (ExperimentSpec, SegTrainConfig, load_seg_checkpoint,
                       run_experiment, train_segmentation)
from .synthgen import SynthJob, generate_corpus

DEFAULTS = {
    "seed": 7,
    "toy_corpus": {
        "cohort1": {"n_images": 48, "image_size": 64,
                    "background": "texture_noise",
                    "shape_mix": {"fiber": 0.5, "film": 0.5},
                    "shapes_per_image": [1, 3], "with_masks": True},
        "cohort2": {"n_images": 40, "image_size": 64, "background": "debris",
                    "shape_mix": {"fiber": 0.5, "film": 0.5},
                    "shapes_per_image": [0, 0], "with_masks": False},
        "cohort3": {"n_images": 24, "image_size": 64, "background": "debris",
                    "shape_mix": {"fiber": 0.5, "film": 0.5},
                    "shapes_per_image": [1, 3], "with_masks": True},
    },
    "split": {"manifest": "{run}/data/cohort1/manifest.json",
              "ratios": [0.8, 0.1, 0.1]},
    "gan": {"manifest": "{run}/split/manifest.json", "epochs": 8,
            "batch_size": 8, "learning_rate_g": 2e-4, "learning_rate_d": 2e-4,
            "recon_weight": 10.0, "image_size": 64, "base_channels": 32},
    "synth": {"checkpoint": "{run}/gan/checkpoints/gan_latest.pt",
              "clean_manifest": "{run}/data/cohort2/manifest.json",
              "guiding_manifest": "{run}/split/manifest.json",
              "per_image_count": 1,
              "sampler": {"max_shift_fraction": 0.25,
                          "min_foreground_pixels": 16, "max_attempts": 10}},
    "seg": {"manifests": ["{run}/split/manifest.json"], "epochs": 10,
            "batch_size": 8, "learning_rate": 1e-3, "image_size": 64,
            "loss": "bce_dice", "backbone": "small_unet", "augment": True},
    "experiment": {
        "arm1_manifests": ["{run}/split/manifest.json"],
        "arm2_manifests": ["{run}/split/manifest.json",
                           "{run}/synth/corpus/manifest.json"],
        "eval_sets": {
            "cohort1_test": {"manifest": "{run}/split/manifest.json",
                             "split": "test"},
            "cohort3": {"manifest": "{run}/data/cohort3/manifest.json",
                        "split": None},
        },
        "seeds": [1, 2, 3, 4, 5],
    },
    "eval": {"checkpoint": "{run}/seg/checkpoints/seg_best.pt",
             "manifest": "{run}/split/manifest.json", "split": "test",
             "threshold": 0.5},
    "study": {"real_manifest": "{run}/data/cohort3/manifest.json",
              "gen_manifest": "{run}/synth/corpus/manifest.json",
              "n_per_class": 20, "correct": None},
    "serve": {"checkpoint": "{run}/seg/checkpoints/seg_best.pt",
              "host": "127.0.0.1", "port": 8000, "threshold": 0.5,
              "max_body_mb": 20, "session_dir": "{run}/sessions",
              "study_real_manifest": None, "study_gen_manifest": None,
              "webui_dir": None},
}

COHORT_SEED_OFFSET = {"cohort1": 0, "cohort2": 1, "cohort3": 2}


def _deep_merge(base: dict, override: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _resolve_config(config_path, seed):
    cfg = copy.deepcopy(DEFAULTS)
    if config_path:
        cfg = _deep_merge(cfg, json.loads(Path(config_path).read_text()))
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def _config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _run_root(out_dir, cfg) -> Path:
    root = Path(out_dir) / f"run-{_config_hash(cfg)}"
    root.mkdir(parents=True, exist_ok=True)
    return root


def _rp(value, run_root: Path):
    """Expand the {run} placeholder in a config path."""
    if value is None:
        return None
    return str(value).format(run=run_root)


def _begin_stage(run_root: Path, stage: str, cfg: dict) -> Path:
    stage_dir = run_root / stage
    if stage_dir.exists():
        raise click.ClickException(
            f"{stage_dir} already exists; same config hash means same "
            "outputs — delete the stage directory or change the config")
    stage_dir.mkdir(parents=True)
    (stage_dir / "resolved_config.json").write_text(json.dumps({
        "stage": stage,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "version": __version__,
        "config": cfg,
    }, indent=2))
    return stage_dir


def _fail_domain(exc: DomainError):
    click.echo(f"error {exc.code}: {exc.detail}", err=True)
    sys.exit(1)


def _common_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(exists=True),
                      default=None, help="JSON config overlaying defaults")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="override the base seed")(fn)
    fn = click.option("--out", "out_dir", default="runs", show_default=True,
                      help="directory that holds run roots")(fn)
    return fn


@click.group()
@click.version_option(__version__)
def main():
    """Microplastic segmentation pipeline."""


@main.command("toy-corpus")
@_common_options
def toy_corpus_cmd(config_path, seed, out_dir):
    """Generate the three toy cohorts (images, masks, manifests)."""
    cfg = _resolve_config(config_path, seed)
    run = _run_root(out_dir, cfg)
    try:
        stage = _begin_stage(run, "data", cfg)
        for name, c in cfg["toy_corpus"].items():
            spec = ToyCorpusSpec(
                n_images=c["n_images"],
                image_size=c["image_size"],
                shape_mix={ShapeKind(k): v for k, v in c["shape_mix"].items()},
                background=Background(c["background"]),
                seed=c.get("seed", cfg["seed"] + COHORT_SEED_OFFSET.get(name, 0)),
                shapes_per_image=tuple(c["shapes_per_image"]),
                cohort=Cohort(name),
            )
            images, masks = synth_toy_corpus(spec)
            write_corpus(images, masks, stage / name, seed=spec.seed,
                         with_masks=c.get("with_masks", True))
            click.echo(f"{name}: {len(images)} images -> {stage / name}")
    except DomainError as exc:
        _fail_domain(exc)


@main.command("split")
@_common_options
@click.option("--ratios", nargs=3, type=float, default=None,
              help="train val test fractions")
def split_cmd(config_path, seed, out_dir, ratios):
    """Assign train/val/test splits to a manifest."""
    cfg = _resolve_config(config_path, seed)
    run = _run_root(out_dir, cfg)
    section = cfg["split"]
    ratios = tuple(ratios) if ratios else tuple(section["ratios"])
    try:
        manifest = read_manifest(_rp(section["manifest"], run))
        result = split_dataset(manifest, ratios, section.get("seed", cfg["seed"]))
        stage = _begin_stage(run, "split", cfg)
        write_manifest(result, stage / "manifest.json")
        counts = {s.value: len(result.by_split(s)) for s in Split}
        click.echo(f"split {len(result.entries)} entries: {counts}")
    except DomainError as exc:
        _fail_domain(exc)


def _pairs_for_training(manifest: DatasetManifest):
    if any(e.split != Split.UNSPLIT for e in manifest.entries):
        return load_split_pairs(manifest, Split.TRAIN)
    return load_split_pairs(manifest)


@main.command("train-gan")
@_common_options
def train_gan_cmd(config_path, seed, out_dir):
    """Train the inpainting GAN on cohort1-style (image, mask) pairs."""
    cfg = _resolve_config(config_path, seed)
    run = _run_root(out_dir, cfg)
    section = cfg["gan"]
    try:
        manifest = read_manifest(_rp(section["manifest"], run))
        pairs = _pairs_for_training(manifest)
        stage = _begin_stage(run, "gan", cfg)
        gan_cfg = GanTrainConfig(
            epochs=section["epochs"], batch_size=section["batch_size"],
            learning_rate_g=section["learning_rate_g"],
            learning_rate_d=section["learning_rate_d"],
            recon_weight=section["recon_weight"],
            image_size=section["image_size"],
            base_channels=section["base_channels"],
            seed=section.get("seed", cfg["seed"]),
            checkpoint_dir=str(stage / "checkpoints"),
        )
        ckpt = train_gan(pairs, gan_cfg)
        report.write_training_curves(ckpt.history, stage / "curves.png",
                                     title="inpainting GAN")
        click.echo(f"trained {ckpt.epoch} epochs on {len(pairs)} pairs -> "
                   f"{ckpt.path}")
    except DomainError as exc:
        _fail_domain(exc)


@main.command("generate")
@_common_options
def generate_cmd(config_path, seed, out_dir):
    """Inpaint particles into the clean cohort to emit a synthetic corpus."""
    cfg = _resolve_config(config_path, seed)
    run = _run_root(out_dir, cfg)
    section = cfg["synth"]
    try:
        clean = read_manifest(_rp(section["clean_manifest"], run))
        guiding_manifest = read_manifest(_rp(section["guiding_manifest"], run))
        has_splits = any(e.split != Split.UNSPLIT
                         for e in guiding_manifest.entries)
        pairs = load_split_pairs(guiding_manifest,
                                 Split.TRAIN if has_splits else None)
        guiding = [m for _, m in pairs if m is not None]
        stage = _begin_stage(run, "synth", cfg)
        job = SynthJob(
            checkpoint=_rp(section["checkpoint"], run),
            clean_manifest=clean,
            guiding_masks=guiding,
            output_dir=str(stage / "corpus"),
            per_image_count=section["per_image_count"],
            sampler=TransformSampler(**section["sampler"]),
            seed=section.get("seed", cfg["seed"]),
        )
        manifest = generate_corpus(job)
        click.echo(f"generated {len(manifest.entries)} synthetic pairs -> "
                   f"{stage / 'corpus'}")
    except DomainError as exc:
        _fail_domain(exc)


def _seg_config(section: dict, base_seed: int, checkpoint_dir: str) -> SegTrainConfig:
    return SegTrainConfig(
        backbone=section["backbone"], epochs=section["epochs"],
        batch_size=section["batch_size"],
        learning_rate=section["learning_rate"],
        image_size=section["image_size"], loss=section["loss"],
        augment=section.get("augment", True),
        seed=section.get("seed", base_seed), checkpoint_dir=checkpoint_dir,
    )


@main.command("train-seg")
@_common_options
def train_seg_cmd(config_path, seed, out_dir):
    """Train one segmentation model on the configured manifests."""
    cfg = _resolve_config(config_path, seed)
    run = _run_root(out_dir, cfg)
    section = cfg["seg"]
    try:
        manifests = [read_manifest(_rp(p, run)) for p in section["manifests"]]
        train_pairs, val_pairs = [], []
        for m in manifests:
            train_pairs.extend(_pairs_for_training(m))
            val_pairs.extend(load_split_pairs(m, Split.VAL))
        stage = _begin_stage(run, "seg", cfg)
        seg_cfg = _seg_config(section, cfg["seed"], str(stage / "checkpoints"))
        model = train_segmentation(train_pairs, val_pairs, seg_cfg)
        report.write_training_curves(model.history, stage / "curves.png",
                                     title="segmentation")
        click.echo(f"best val dice {model.best_val_dice:.4f} at epoch "
                   f"{model.best_epoch} -> {stage / 'checkpoints/seg_best.pt'}")
    except DomainError as exc:
        _fail_domain(exc)


@main.command("experiment")
@_common_options
def experiment_cmd(config_path, seed, out_dir):
    """Run the two-arm comparison (baseline vs synthetic-augmented)."""
    cfg = _resolve_config(config_path, seed)
    run = _run_root(out_dir, cfg)
    section = cfg["experiment"]
    try:
        arm1 = [read_manifest(_rp(p, run)) for p in section["arm1_manifests"]]
        arm2 = [read_manifest(_rp(p, run)) for p in section["arm2_manifests"]]
        eval_sets = {}
        for name, e in section["eval_sets"].items():
            manifest = read_manifest(_rp(e["manifest"], run))
            split = Split(e["split"]) if e.get("split") else None
            eval_sets[name] = (manifest, split)
        stage = _begin_stage(run, "experiment", cfg)
        spec = ExperimentSpec(
            arm1_manifests=arm1, arm2_manifests=arm2, eval_sets=eval_sets,
            config=_seg_config(cfg["seg"], cfg["seed"],
                               str(stage / "checkpoints")),
            seeds=list(section["seeds"]),
        )
        result = run_experiment(spec)
        paths = report.write_experiment_outputs(result, stage)
        click.echo(result.to_text_table())
        click.echo(f"report -> {paths['json']}")
    except DomainError as exc:
        _fail_domain(exc)


@main.command("eval")
@_common_options
def eval_cmd(config_path, seed, out_dir):
    """Evaluate a trained segmentation checkpoint on a labeled manifest."""
    cfg = _resolve_config(config_path, seed)
    run = _run_root(out_dir, cfg)
    section = cfg["eval"]
    try:
        model = load_seg_checkpoint(_rp(section["checkpoint"], run))
        manifest = read_manifest(_rp(section["manifest"], run))
        split = Split(section["split"]) if section.get("split") else None
        pairs = load_split_pairs(manifest, split)
        stage = _begin_stage(run, "eval", cfg)
        result = evaluate(model, pairs, threshold=section["threshold"])
        paths = report.write_eval_outputs(result, stage)
        click.echo(result.to_text_table())
        click.echo(f"report -> {paths['json']}")
    except DomainError as exc:
        _fail_domain(exc)


@main.command("study-sim")
@_common_options
@click.option("--n-per-class", type=int, default=None)
@click.option("--correct", type=int, default=None,
              help="exact number of correct answers for the scripted reader")
def study_sim_cmd(config_path, seed, out_dir, n_per_class, correct):
    """Drive a blinded study session with a scripted responder."""
    cfg = _resolve_config(config_path, seed)
    run = _run_root(out_dir, cfg)
    section = cfg["study"]
    if n_per_class is None:
        n_per_class = section["n_per_class"]
    if correct is None:
        correct = section.get("correct")
    try:
        real_pool = pool_from_manifest(
            read_manifest(_rp(section["real_manifest"], run)))
        gen_pool = pool_from_manifest(
            read_manifest(_rp(section["gen_manifest"], run)))
        stage = _begin_stage(run, "study-sim", cfg)
        store = SessionStore(stage / "sessions")
        session = store.create(real_pool, gen_pool, n_per_class,
                               section.get("seed", cfg["seed"]))
        n_correct = correct if correct is not None else round(0.68 * session.n_trials)
        truth_by_index = {t.trial_index: t.truth for t in session.trials}
        answered = 0
        while True:
            payload = next_trial(session)
            if not hasattr(payload, "trial_index"):
                break
            truth = truth_by_index[payload.trial_index]
            if answered < n_correct:
                answer = truth
            else:
                answer = Truth.GENERATED if truth == Truth.REAL else Truth.REAL
            store.submit(session.session_id, payload.trial_index, answer)
            answered += 1
        result = score_session(session)
        report.write_study_outputs(result.to_dict(), stage)
        click.echo(f"session {session.session_id}: accuracy "
                   f"{result.accuracy:.3f} over {result.n_trials} trials")
    except DomainError as exc:
        _fail_domain(exc)


@main.command("serve")
@click.option("--checkpoint", type=str, required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--threshold", type=float, default=0.5, show_default=True)
@click.option("--max-body-mb", type=int, default=20, show_default=True)
@click.option("--session-dir", default="sessions", show_default=True)
@click.option("--study-real-manifest", default=None,
              help="manifest of real images for study sessions")
@click.option("--study-gen-manifest", default=None,
              help="manifest of generated images for study sessions")
@click.option("--webui-dir", default=None,
              help="static frontend directory to serve at /")
def serve_cmd(checkpoint, host, port, threshold, max_body_mb, session_dir,
              study_real_manifest, study_gen_manifest, webui_dir):
    """Serve upload-and-segment inference and the reader study over HTTP."""
    import uvicorn

    from .service import ServiceConfig, create_app

    config = ServiceConfig(
        checkpoint=checkpoint, host=host, port=port, threshold=threshold,
        max_body_mb=max_body_mb, session_dir=session_dir,
        study_real_manifest=study_real_manifest,
        study_gen_manifest=study_gen_manifest, webui_dir=webui_dir,
    )
    uvicorn.run(create_app(config), host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
