import json

from click.testing import CliRunner

from plastiseg.cli import main
from plastiseg.dataio import Split, read_manifest

MICRO_CONFIG = {
    "seed": 3,
    "toy_corpus": {
        "cohort1": {"n_images": 10, "image_size": 32,
                    "background": "texture_noise",
                    "shape_mix": {"fiber": 0.5, "film": 0.5},
                    "shapes_per_image": [1, 2], "with_masks": True},
        "cohort2": {"n_images": 4, "image_size": 32, "background": "debris",
                    "shape_mix": {"fiber": 0.5, "film": 0.5},
                    "shapes_per_image": [0, 0], "with_masks": False},
        "cohort3": {"n_images": 4, "image_size": 32, "background": "debris",
                    "shape_mix": {"fiber": 0.5, "film": 0.5},
                    "shapes_per_image": [1, 2], "with_masks": True},
    },
    "split": {"manifest": "{run}/data/cohort1/manifest.json",
              "ratios": [0.8, 0.1, 0.1]},
    "gan": {"manifest": "{run}/split/manifest.json", "epochs": 1,
            "batch_size": 4, "learning_rate_g": 2e-4, "learning_rate_d": 2e-4,
            "recon_weight": 10.0, "image_size": 32, "base_channels": 8},
    "synth": {"checkpoint": "{run}/gan/checkpoints/gan_latest.pt",
              "clean_manifest": "{run}/data/cohort2/manifest.json",
              "guiding_manifest": "{run}/split/manifest.json",
              "per_image_count": 1,
              "sampler": {"max_shift_fraction": 0.25,
                          "min_foreground_pixels": 8, "max_attempts": 10}},
    "seg": {"manifests": ["{run}/split/manifest.json"], "epochs": 1,
            "batch_size": 4, "learning_rate": 1e-3, "image_size": 32,
            "loss": "bce_dice", "backbone": "small_unet", "augment": False},
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
        "seeds": [1],
    },
    "eval": {"checkpoint": "{run}/seg/checkpoints/seg_best.pt",
             "manifest": "{run}/split/manifest.json", "split": "test",
             "threshold": 0.5},
    "study": {"real_manifest": "{run}/data/cohort3/manifest.json",
              "gen_manifest": "{run}/synth/corpus/manifest.json",
              "n_per_class": 2, "correct": 3},
}


def _invoke(runner, args):
    result = runner.invoke(main, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


def _run_root(out_dir):
    roots = list(out_dir.glob("run-*"))
    assert len(roots) == 1
    return roots[0]


def test_full_pipeline_smoke(tmp_path):
    """toy-corpus -> split -> train-gan -> generate -> experiment -> eval ...

    One chained micro-run of every stage; doubles as the CI smoke pipeline.
    """
    runner = CliRunner()
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(MICRO_CONFIG))
    out = tmp_path / "runs"
    base = ["--config", str(cfg_path), "--out", str(out)]

    _invoke(runner, ["toy-corpus", *base])
    run = _run_root(out)
    for cohort, expected in (("cohort1", 10), ("cohort2", 4), ("cohort3", 4)):
        manifest = read_manifest(run / "data" / cohort / "manifest.json")
        assert len(manifest.entries) == expected
    assert all(e.mask is None for e in
               read_manifest(run / "data" / "cohort2" / "manifest.json").entries)

    _invoke(runner, ["split", *base])
    split_manifest = read_manifest(run / "split" / "manifest.json")
    counts = {s: len(split_manifest.by_split(s)) for s in Split}
    assert counts[Split.TRAIN] == 8 and counts[Split.VAL] == 1
    assert counts[Split.TEST] == 1

    _invoke(runner, ["train-gan", *base])
    assert (run / "gan" / "checkpoints" / "gan_latest.pt").exists()
    assert (run / "gan" / "curves.png").exists()
    assert (run / "gan" / "resolved_config.json").exists()

    _invoke(runner, ["generate", *base])
    synth_manifest = read_manifest(run / "synth" / "corpus" / "manifest.json")
    assert len(synth_manifest.entries) == 4

    result = _invoke(runner, ["experiment", *base])
    assert "baseline" in result.output and "augmented" in result.output
    assert (run / "experiment" / "report.json").exists()
    assert (run / "experiment" / "report.csv").exists()
    assert (run / "experiment" / "table.txt").exists()
    assert (run / "experiment" / "figures" / "summary.png").exists()
    report = json.loads((run / "experiment" / "report.json").read_text())
    assert len(report["rows"]) == 2 * 2 * 1

    _invoke(runner, ["train-seg", *base])
    assert (run / "seg" / "checkpoints" / "seg_best.pt").exists()

    result = _invoke(runner, ["eval", *base])
    assert (run / "eval" / "report.json").exists()
    assert (run / "eval" / "figures" / "dice_hist.png").exists()

    result = _invoke(runner, ["study-sim", *base])
    assert "accuracy 0.750" in result.output  # 3 of 4 correct
    assert (run / "study-sim" / "report.json").exists()

    # provenance: every stage wrote its resolved config
    for stage in ("data", "split", "gan", "synth", "experiment", "seg",
                  "eval", "study-sim"):
        assert (run / stage / "resolved_config.json").exists()


def test_rerun_same_config_refused(tmp_path):
    runner = CliRunner()
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(MICRO_CONFIG))
    base = ["--config", str(cfg_path), "--out", str(tmp_path / "runs")]
    _invoke(runner, ["toy-corpus", *base])
    rerun = runner.invoke(main, ["toy-corpus", *base])
    assert rerun.exit_code == 1
    assert "already exists" in rerun.output


def test_split_bad_ratios_exit_code(tmp_path):
    runner = CliRunner()
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(MICRO_CONFIG))
    base = ["--config", str(cfg_path), "--out", str(tmp_path / "runs")]
    _invoke(runner, ["toy-corpus", *base])
    result = runner.invoke(main, ["split", *base, "--ratios", "0.5", "0.5", "0.5"])
    assert result.exit_code == 1
    assert "BAD_RATIOS" in result.output


def test_usage_error_exit_code():
    runner = CliRunner()
    result = runner.invoke(main, ["split", "--ratios", "not-a-number"])
    assert result.exit_code == 2


def test_seed_override_changes_run_root(tmp_path):
    runner = CliRunner()
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(MICRO_CONFIG))
    out = tmp_path / "runs"
    _invoke(runner, ["toy-corpus", "--config", str(cfg_path), "--out", str(out)])
    _invoke(runner, ["toy-corpus", "--config", str(cfg_path), "--out", str(out),
                     "--seed", "99"])
    assert len(list(out.glob("run-*"))) == 2
