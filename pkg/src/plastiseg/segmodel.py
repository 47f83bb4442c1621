"""Binary segmentation model and the two-arm augmentation experiment.

The default backbone is a small from-scratch U-Net (4 down / 4 up) behind a
backbone-agnostic contract: RGB raster in, per-pixel foreground probability
out. Arm 1 of the experiment trains on curated data only; arm 2 adds the
synthetic corpus; both share config, seeds, and evaluation.
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import nnio
from .dataio import (BinaryMask, DatasetManifest, ImageSample, Split,
                     load_split_pairs)
from .errors import (ArchMismatch, CorruptCheckpoint, EmptySplit, MissingMask,
                     NumericNonfinite)
from .metrics import DICE_CONVENTION, F1_CONVENTION, confusion, dice

CHECKPOINT_KIND = "segmodel"
ARCH_VERSION = "unet4"
_EPS = 1e-7


class Backbone(str, Enum):
    SMALL_UNET = "small_unet"
    LARGE_UNET = "large_unet"


class LossKind(str, Enum):
    BCE_DICE = "bce_dice"
    BCE = "bce"


@dataclass
class SegTrainConfig:
    backbone: Backbone = Backbone.SMALL_UNET
    epochs: int = 10
    batch_size: int = 8
    learning_rate: float = 1e-3
    image_size: int = 64
    loss: LossKind = LossKind.BCE_DICE
    augment: bool = True  # horizontal/vertical flips
    seed: int = 0
    checkpoint_dir: str = "checkpoints/seg"

    def __post_init__(self):
        self.backbone = Backbone(self.backbone)
        self.loss = LossKind(self.loss)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.image_size % 16 != 0:
            raise ValueError("image_size must be a multiple of 16")

    def arch_config(self) -> dict:
        return {
            "kind": CHECKPOINT_KIND,
            "arch": ARCH_VERSION,
            "backbone": self.backbone.value,
            "image_size": self.image_size,
        }


def _double_conv(cin, cout):
    # GroupNorm: batch-size independent and identical in train/eval mode,
    # which keeps inference deterministic and behaves on tiny datasets
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1),
        nn.GroupNorm(min(8, cout), cout),
        nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1),
        nn.GroupNorm(min(8, cout), cout),
        nn.ReLU(inplace=True),
    )


class UNet(nn.Module):
    """4-level U-Net emitting sigmoid probabilities, input padded to /16."""

    def __init__(self, base_channels: int = 16):
        super().__init__()
        b = base_channels
        chans = [b, 2 * b, 4 * b, 6 * b]
        self.encoders = nn.ModuleList()
        cin = 3
        for c in chans:
            self.encoders.append(_double_conv(cin, c))
            cin = c
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = _double_conv(chans[-1], 8 * b)
        self.ups = nn.ModuleList()
        self.decoders = nn.ModuleList()
        cin = 8 * b
        for c in reversed(chans):
            self.ups.append(nn.ConvTranspose2d(cin, c, 2, stride=2))
            self.decoders.append(_double_conv(2 * c, c))
            cin = c
        self.head = nn.Conv2d(chans[0], 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x, size = nnio.pad_to_multiple(x, 16)
        skips = []
        for enc in self.encoders:
            x = enc(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for up, dec, skip in zip(self.ups, self.decoders, reversed(skips)):
            x = up(x)
            x = dec(torch.cat([x, skip], dim=1))
        return nnio.crop_to(torch.sigmoid(self.head(x)), size)


def build_backbone(backbone: Backbone) -> nn.Module:
    if backbone == Backbone.LARGE_UNET:
        return UNet(base_channels=32)
    return UNet(base_channels=16)


class SegModel:
    """Trained model handle: forward pass plus training provenance."""

    def __init__(self, net: nn.Module, config: SegTrainConfig):
        self.net = net
        self.config = config
        self.config_hash = nnio.config_hash(config.arch_config())
        self.history: list[dict] = []
        self.batch_log: list[list[list[int]]] = []
        self.accessed_ids: set[str] = set()
        self.best_epoch = 0
        self.best_val_dice = 0.0

    def forward(self, batch: torch.Tensor) -> torch.Tensor:
        self.net.eval()
        with torch.no_grad():
            return self.net(batch)


def bce_loss(probs: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    p = probs.clamp(_EPS, 1.0 - _EPS)
    return -(target * p.log() + (1.0 - target) * (1.0 - p).log()).mean()


def soft_dice_loss(probs: torch.Tensor, target: torch.Tensor,
                   smooth: float = 1.0) -> torch.Tensor:
    num = 2.0 * (probs * target).sum() + smooth
    den = probs.sum() + target.sum() + smooth
    return 1.0 - num / den


def seg_loss(probs: torch.Tensor, target: torch.Tensor,
             kind: LossKind = LossKind.BCE_DICE) -> torch.Tensor:
    if kind == LossKind.BCE:
        return bce_loss(probs, target)
    return bce_loss(probs, target) + soft_dice_loss(probs, target)


def _prepare_pairs(pairs, image_size: int):
    images, masks, ids = [], [], []
    for sample, mask in pairs:
        if mask is None:
            raise MissingMask(f"training entry {sample.id} has no mask")
        pixels = sample.pixels
        mask01 = mask.pixels
        if pixels.shape[:2] != (image_size, image_size):
            pixels = nnio.resize_image(pixels, image_size)
            mask01 = nnio.resize_mask(mask01, image_size, image_size)
        images.append(nnio.image_to_tensor(pixels)[0])
        masks.append(nnio.mask_to_tensor(mask01)[0])
        ids.append(sample.id)
    return torch.stack(images), torch.stack(masks), ids


def _val_dice(model: SegModel, val_pairs, threshold: float = 0.5) -> float:
    scores = []
    for sample, mask in val_pairs:
        pred, _ = predict_mask(model, sample, threshold=threshold)
        scores.append(dice(confusion(pred.pixels, mask.pixels)))
    return float(np.mean(scores))


def train_segmentation(train_pairs, val_pairs, cfg: SegTrainConfig) -> SegModel:
    """Minimize the configured loss; keep the epoch with best validation dice.

    Batch order and flip augmentation are pure functions of cfg.seed. The
    per-epoch log {train_loss, val_dice} goes to checkpoint_dir as JSON
    lines; the returned model carries the ids of every sample it read.
    """
    if not train_pairs:
        raise EmptySplit("empty training set")
    if not val_pairs:
        raise EmptySplit("empty validation set")
    torch.manual_seed(cfg.seed)
    model = SegModel(build_backbone(cfg.backbone), cfg)
    opt = torch.optim.Adam(model.net.parameters(), lr=cfg.learning_rate)
    images, masks, ids = _prepare_pairs(train_pairs, cfg.image_size)
    model.accessed_ids.update(ids)
    model.accessed_ids.update(s.id for s, _ in val_pairs)
    n = len(ids)

    ckpt_dir = Path(cfg.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    best_state = copy.deepcopy(model.net.state_dict())

    with (ckpt_dir / "train_log.jsonl").open("w") as log:
        for epoch in range(1, cfg.epochs + 1):
            model.net.train()
            order = np.random.default_rng([cfg.seed, epoch, 0]).permutation(n)
            aug_rng = np.random.default_rng([cfg.seed, epoch, 1])
            batches = [order[i:i + cfg.batch_size].tolist()
                       for i in range(0, n, cfg.batch_size)]
            model.batch_log.append([[ids[j] for j in batch] for batch in batches])

            loss_sum = 0.0
            for batch in batches:
                img = images[batch]
                m = masks[batch]
                if cfg.augment:
                    flips = aug_rng.random((len(batch), 2)) < 0.5
                    img, m = _flip_batch(img, m, flips)
                probs = model.net(img)
                loss = seg_loss(probs, m, cfg.loss)
                if not torch.isfinite(loss):
                    raise NumericNonfinite(f"training loss at epoch {epoch}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                loss_sum += loss.item()

            val = _val_dice(model, val_pairs)
            record = {"epoch": epoch, "train_loss": loss_sum / len(batches),
                      "val_dice": val}
            model.history.append(record)
            log.write(json.dumps(record) + "\n")
            log.flush()
            if val >= model.best_val_dice or epoch == 1:
                model.best_val_dice = val
                model.best_epoch = epoch
                best_state = copy.deepcopy(model.net.state_dict())

    model.net.load_state_dict(best_state)
    save_seg_checkpoint(model, ckpt_dir / "seg_best.pt")
    return model


def _flip_batch(img, m, flips):
    img = img.clone()
    m = m.clone()
    for i, (h, v) in enumerate(flips):
        dims = []
        if h:
            dims.append(2)
        if v:
            dims.append(1)
        if dims:
            img[i] = torch.flip(img[i], dims=dims)
            m[i] = torch.flip(m[i], dims=dims)
    return img, m


def predict_mask(model: SegModel, image: ImageSample, threshold: float = 0.5):
    """Model-size inference, bilinear probability upsample, then >= threshold."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must be in (0, 1)")
    h, w = image.pixels.shape[:2]
    size = model.config.image_size
    pixels = image.pixels
    if (h, w) != (size, size):
        pixels = nnio.resize_image(pixels, size)
    probs = model.forward(nnio.image_to_tensor(pixels))
    if (h, w) != (size, size):
        probs = F.interpolate(probs, size=(h, w), mode="bilinear",
                              align_corners=False)
    prob_map = probs[0, 0].numpy()
    mask = BinaryMask(id=f"{image.id}_pred",
                      pixels=(prob_map >= threshold).astype(np.uint8),
                      paired_image_id=image.id)
    return mask, prob_map


def save_seg_checkpoint(model: SegModel, path):
    model.net.eval()
    probe = torch.rand(1, 3, 4, 4, generator=torch.Generator().manual_seed(2))
    with torch.no_grad():
        probe_out = model.net(probe)
    nnio.save_checkpoint_file({
        "kind": CHECKPOINT_KIND,
        "config": _config_dict(model.config),
        "config_hash": model.config_hash,
        "history": model.history,
        "best_epoch": model.best_epoch,
        "best_val_dice": model.best_val_dice,
        "state": model.net.state_dict(),
        "probe": {"input": probe, "output": probe_out},
    }, path)


def _config_dict(cfg: SegTrainConfig) -> dict:
    d = asdict(cfg)
    d["backbone"] = cfg.backbone.value
    d["loss"] = cfg.loss.value
    return d


def load_seg_checkpoint(path, expected_image_size: int | None = None) -> SegModel:
    payload = nnio.load_checkpoint_file(path, CHECKPOINT_KIND)
    try:
        cfg = SegTrainConfig(**payload["config"])
        state = payload["state"]
        probe = payload["probe"]
        stored_hash = payload["config_hash"]
    except (KeyError, TypeError) as exc:
        raise CorruptCheckpoint(f"{path}: missing field {exc}") from exc
    if expected_image_size is not None and cfg.image_size != expected_image_size:
        raise ArchMismatch(
            f"checkpoint image_size {cfg.image_size} != expected {expected_image_size}")
    if stored_hash != nnio.config_hash(cfg.arch_config()):
        raise ArchMismatch(f"{path}: config hash does not match stored config")
    model = SegModel(build_backbone(cfg.backbone), cfg)
    try:
        model.net.load_state_dict(state)
    except RuntimeError as exc:
        raise CorruptCheckpoint(f"{path}: {exc}") from exc
    nnio.verify_probe(model.net, probe["input"], probe["output"], "segmentation")
    model.history = payload.get("history", [])
    model.best_epoch = payload.get("best_epoch", 0)
    model.best_val_dice = payload.get("best_val_dice", 0.0)
    return model


# ---------------------------------------------------------------------------
# Two-arm experiment


@dataclass
class ExperimentSpec:
    arm1_manifests: list[DatasetManifest]
    arm2_manifests: list[DatasetManifest]
    eval_sets: dict  # name -> (DatasetManifest, Split|None)
    config: SegTrainConfig = field(default_factory=SegTrainConfig)
    seeds: list[int] = field(default_factory=lambda: [0])
    arm_names: tuple[str, str] = ("baseline", "augmented")


@dataclass
class ExperimentReport:
    arms: list[str]
    eval_names: list[str]
    seeds: list[int]
    rows: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    audit: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "conventions": {"dice": DICE_CONVENTION, "f1": F1_CONVENTION},
            "arms": self.arms,
            "eval_sets": self.eval_names,
            "seeds": self.seeds,
            "summary": self.summary,
            "rows": self.rows,
            "audit": self.audit,
        }

    def to_json(self, indent=2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def to_text_table(self) -> str:
        """Aligned comparison: one row per arm, F1/Dice columns per eval set."""
        header = f"{'arm':<12}"
        for name in self.eval_names:
            header += f" {name + ' F1':>16} {name + ' Dice':>16}"
        lines = [f"# dice={DICE_CONVENTION} f1={F1_CONVENTION}, "
                 f"mean over seeds {self.seeds}", header]
        for arm in self.arms:
            line = f"{arm:<12}"
            for name in self.eval_names:
                cell = self.summary[arm][name]
                line += f" {cell['f1_micro']:>16.4f} {cell['dice_mean']:>16.4f}"
            lines.append(line)
        return "\n".join(lines)


def _training_pairs(manifests: list[DatasetManifest]):
    """TRAIN entries of split manifests; whole corpus of unsplit ones."""
    pairs = []
    for manifest in manifests:
        if any(e.split != Split.UNSPLIT for e in manifest.entries):
            pairs.extend(load_split_pairs(manifest, Split.TRAIN))
        else:
            pairs.extend(load_split_pairs(manifest))
    return pairs


def _val_pairs(manifests: list[DatasetManifest]):
    pairs = []
    for manifest in manifests:
        pairs.extend(load_split_pairs(manifest, Split.VAL))
    return pairs


def run_experiment(spec: ExperimentSpec) -> ExperimentReport:
    """Train both arms per seed, evaluate on every eval set, aggregate."""
    from .metrics import evaluate

    arm_pairs = {
        spec.arm_names[0]: _training_pairs(spec.arm1_manifests),
        spec.arm_names[1]: _training_pairs(spec.arm2_manifests),
    }
    val_pairs = _val_pairs(spec.arm1_manifests)
    eval_pairs = {name: load_split_pairs(manifest, split)
                  for name, (manifest, split) in spec.eval_sets.items()}

    synthetic_ids = set()
    for manifest in spec.arm2_manifests:
        synthetic_ids.update(e.image_id for e in manifest.entries
                             if e.cohort.value == "synthetic")

    report = ExperimentReport(arms=list(spec.arm_names),
                              eval_names=list(eval_pairs),
                              seeds=list(spec.seeds))
    arm1_accessed = set()
    for seed in spec.seeds:
        for arm in spec.arm_names:
            cfg = replace(spec.config, seed=seed,
                          checkpoint_dir=str(Path(spec.config.checkpoint_dir)
                                             / arm / f"seed{seed}"))
            model = train_segmentation(arm_pairs[arm], val_pairs, cfg)
            if arm == spec.arm_names[0]:
                arm1_accessed |= model.accessed_ids
            for name, pairs in eval_pairs.items():
                result = evaluate(model, pairs)
                report.rows.append({
                    "seed": seed, "arm": arm, "eval_set": name,
                    "f1_micro": result.f1_micro,
                    "dice_mean": result.dataset_dice_mean,
                    "precision_micro": result.precision_micro,
                    "recall_micro": result.recall_micro,
                })

    for arm in spec.arm_names:
        report.summary[arm] = {}
        for name in eval_pairs:
            cells = [r for r in report.rows
                     if r["arm"] == arm and r["eval_set"] == name]
            report.summary[arm][name] = {
                "f1_micro": float(np.mean([r["f1_micro"] for r in cells])),
                "dice_mean": float(np.mean([r["dice_mean"] for r in cells])),
            }
    report.audit = {
        "arm1_accessed_synthetic": sorted(arm1_accessed & synthetic_ids),
        "arm_isolation_ok": not (arm1_accessed & synthetic_ids),
    }
    return report
