"""Mask-guided inpainting GAN.

The generator receives the image with the guiding mask concatenated as a
fourth channel and emits a full RGB raster through a sigmoid. What the
discriminator judges (and what callers receive) is never the raw output:
masked pixels come from the generator, everything else is copied from the
source image. That masked-region-only composition is enforced on every
training batch and audited bit-exactly after de-normalization.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import nnio
from .dataio import BinaryMask, ImageSample
from .errors import ArchMismatch, CorruptCheckpoint, DimensionMismatch, NumericNonfinite
from .maskops import composite

CHECKPOINT_KIND = "inpaint_gan"
ARCH_VERSION = "enc3-res2-dec3"
_EPS = 1e-7


@dataclass
class GanTrainConfig:
    epochs: int = 10
    batch_size: int = 8
    learning_rate_g: float = 2e-4
    learning_rate_d: float = 2e-4
    recon_weight: float = 10.0
    image_size: int = 64
    base_channels: int = 32
    seed: int = 0
    checkpoint_dir: str = "checkpoints/gan"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate_g <= 0 or self.learning_rate_d <= 0:
            raise ValueError("learning rates must be positive")
        if self.recon_weight < 0:
            raise ValueError("recon_weight must be >= 0")

    def arch_config(self) -> dict:
        return {
            "kind": CHECKPOINT_KIND,
            "arch": ARCH_VERSION,
            "image_size": self.image_size,
            "base_channels": self.base_channels,
        }


@dataclass
class GanCheckpoint:
    path: Path
    epoch: int
    config_hash: str
    history: list[dict] = field(default_factory=list)
    batch_log: list[list[list[str]]] = field(default_factory=list)


class _ResBlock(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(ch, ch, 3, padding=1),
            nn.InstanceNorm2d(ch, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(ch, ch, 3, padding=1),
            nn.InstanceNorm2d(ch, affine=True),
        )

    def forward(self, x):
        return torch.relu(x + self.body(x))


class InpaintGenerator(nn.Module):
    """Compact encoder/decoder; input RGB + mask channel, output RGB in [0,1].

    Inputs of any size are zero-padded to a multiple of 16 and cropped back,
    so output dimensions always equal input dimensions.
    """

    def __init__(self, base_channels: int = 32):
        super().__init__()
        b = base_channels

        def down(cin, cout):
            return nn.Sequential(
                nn.Conv2d(cin, cout, 4, stride=2, padding=1),
                nn.InstanceNorm2d(cout, affine=True),
                nn.LeakyReLU(0.2, inplace=True),
            )

        def up(cin, cout):
            return nn.Sequential(
                nn.ConvTranspose2d(cin, cout, 4, stride=2, padding=1),
                nn.InstanceNorm2d(cout, affine=True),
                nn.ReLU(inplace=True),
            )

        self.stem = nn.Sequential(nn.Conv2d(4, b, 3, padding=1),
                                  nn.LeakyReLU(0.2, inplace=True))
        self.encoder = nn.Sequential(down(b, 2 * b), down(2 * b, 4 * b),
                                     down(4 * b, 4 * b))
        self.bottleneck = nn.Sequential(_ResBlock(4 * b), _ResBlock(4 * b))
        self.decoder = nn.Sequential(up(4 * b, 4 * b), up(4 * b, 2 * b),
                                     up(2 * b, b))
        self.head = nn.Conv2d(b, 3, 3, padding=1)

    def forward(self, image: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = torch.cat([image, mask], dim=1)
        x, size = nnio.pad_to_multiple(x, 16)
        x = self.stem(x)
        x = self.encoder(x)
        x = self.bottleneck(x)
        x = self.decoder(x)
        x = torch.sigmoid(self.head(x))
        return nnio.crop_to(x, size)


class PatchDiscriminator(nn.Module):
    """Patch-level realness scores in (0,1); same patch grid for same-shaped input."""

    def __init__(self, base_channels: int = 32):
        super().__init__()
        b = base_channels
        self.body = nn.Sequential(
            nn.Conv2d(3, b, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(b, 2 * b, 4, stride=2, padding=1),
            nn.InstanceNorm2d(2 * b, affine=True),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(2 * b, 4 * b, 4, stride=2, padding=1),
            nn.InstanceNorm2d(4 * b, affine=True),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(4 * b, 1, 3, padding=1),
        )

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        x, _ = nnio.pad_to_multiple(image, 16)
        return torch.sigmoid(self.body(x))


def _bce(prob: torch.Tensor, target: float) -> torch.Tensor:
    p = prob.clamp(_EPS, 1.0 - _EPS)
    if target == 1.0:
        return -torch.log(p).mean()
    return -torch.log1p(-p).mean()


def masked_l1(raw: torch.Tensor, target: torch.Tensor,
              mask: torch.Tensor) -> torch.Tensor:
    """Sum of masked absolute differences normalized by foreground pixel count.

    An all-zero mask contributes exactly 0 (empty-set convention).
    """
    diff = ((raw - target).abs() * mask).sum()
    return diff / torch.clamp(mask.sum(), min=1.0)


def gan_losses(d_real: torch.Tensor, d_fake: torch.Tensor,
               raw_gen: torch.Tensor, target: torch.Tensor,
               mask: torch.Tensor, recon_weight: float = 10.0) -> dict:
    """Discriminator BCE plus generator BCE + weighted masked reconstruction."""
    loss_d = _bce(d_real, 1.0) + _bce(d_fake, 0.0)
    loss_g = _bce(d_fake, 1.0) + recon_weight * masked_l1(raw_gen, target, mask)
    if not (torch.isfinite(loss_d) and torch.isfinite(loss_g)):
        raise NumericNonfinite(
            f"loss_d={loss_d.item()} loss_g={loss_g.item()}")
    return {"loss_g": loss_g, "loss_d": loss_d}


def _prepare_pairs(pairs, image_size: int):
    """Resize to training resolution; returns float tensors plus sample ids."""
    images, masks, ids = [], [], []
    for sample, mask in pairs:
        pixels = sample.pixels
        mask01 = mask.pixels
        if pixels.shape[:2] != (image_size, image_size):
            pixels = nnio.resize_image(pixels, image_size)
            mask01 = nnio.resize_mask(mask01, image_size, image_size)
        images.append(nnio.image_to_tensor(pixels)[0])
        masks.append(nnio.mask_to_tensor(mask01)[0])
        ids.append(sample.id)
    return torch.stack(images), torch.stack(masks), ids


def _composition_violations(fake: torch.Tensor, real: torch.Tensor,
                            mask: torch.Tensor) -> int:
    """Count unmasked pixels that differ after de-normalization (must be 0)."""
    fake_u8 = nnio.denormalize_batch(fake)
    real_u8 = nnio.denormalize_batch(real)
    outside = (mask[:, 0].numpy() == 0)
    return int(np.count_nonzero(fake_u8[outside] != real_u8[outside]))


def _save_gan_checkpoint(gen, disc, cfg, epoch, history, batch_log, path):
    gen.eval()
    disc.eval()
    probe_image = torch.rand(1, 3, 4, 4, generator=torch.Generator().manual_seed(0))
    probe_mask = (torch.rand(1, 1, 4, 4,
                             generator=torch.Generator().manual_seed(1)) > 0.5).float()
    with torch.no_grad():
        probe_gen_out = gen(probe_image, probe_mask)
        probe_disc_out = disc(probe_image)
    nnio.save_checkpoint_file({
        "kind": CHECKPOINT_KIND,
        "config": asdict(cfg),
        "config_hash": nnio.config_hash(cfg.arch_config()),
        "epoch": epoch,
        "history": history,
        "batch_log": batch_log,
        "generator_state": gen.state_dict(),
        "discriminator_state": disc.state_dict(),
        "probe": {
            "image": probe_image,
            "mask": probe_mask,
            "generator_out": probe_gen_out,
            "discriminator_out": probe_disc_out,
        },
    }, path)


def train_gan(pairs, cfg: GanTrainConfig) -> GanCheckpoint:
    """Alternate discriminator/generator steps over composited fakes.

    Writes one checkpoint per epoch plus a JSON-lines training log under
    cfg.checkpoint_dir. Batch order is a pure function of cfg.seed. On a
    non-finite loss the run aborts and the last written checkpoint stays.
    """
    if len(pairs) < 2:
        raise ValueError("need at least 2 (image, mask) pairs")
    torch.manual_seed(cfg.seed)
    gen = InpaintGenerator(cfg.base_channels)
    disc = PatchDiscriminator(cfg.base_channels)
    opt_g = torch.optim.Adam(gen.parameters(), lr=cfg.learning_rate_g,
                             betas=(0.5, 0.999))
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.learning_rate_d,
                             betas=(0.5, 0.999))
    images, masks, ids = _prepare_pairs(pairs, cfg.image_size)
    n = len(ids)

    ckpt_dir = Path(cfg.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_path = ckpt_dir / "train_log.jsonl"
    history: list[dict] = []
    batch_log: list[list[list[str]]] = []

    def ckpt_path(epoch):
        return ckpt_dir / f"gan_epoch_{epoch:04d}.pt"

    _save_gan_checkpoint(gen, disc, cfg, 0, history, batch_log, ckpt_path(0))
    last_good = GanCheckpoint(path=ckpt_path(0), epoch=0,
                              config_hash=nnio.config_hash(cfg.arch_config()),
                              history=history, batch_log=batch_log)

    with log_path.open("w") as log:
        for epoch in range(1, cfg.epochs + 1):
            gen.train()
            disc.train()
            order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
            epoch_batches = [order[i:i + cfg.batch_size].tolist()
                             for i in range(0, n, cfg.batch_size)]
            batch_log.append([[ids[j] for j in batch] for batch in epoch_batches])

            sums = {"loss_g": 0.0, "loss_d": 0.0, "d_accuracy": 0.0}
            violations = 0
            for batch in epoch_batches:
                img = images[batch]
                m = masks[batch]
                raw = gen(img, m)
                fake = img * (1.0 - m) + raw * m

                opt_d.zero_grad()
                d_real = disc(img)
                d_fake = disc(fake.detach())
                loss_d = _bce(d_real, 1.0) + _bce(d_fake, 0.0)
                if not torch.isfinite(loss_d):
                    raise NumericNonfinite(f"loss_d at epoch {epoch}")
                loss_d.backward()
                opt_d.step()

                opt_g.zero_grad()
                d_fake_g = disc(fake)
                loss_g = _bce(d_fake_g, 1.0) + cfg.recon_weight * masked_l1(raw, img, m)
                if not torch.isfinite(loss_g):
                    raise NumericNonfinite(f"loss_g at epoch {epoch}")
                loss_g.backward()
                opt_g.step()

                violations += _composition_violations(fake, img, m)
                acc_real = (d_real > 0.5).float().mean().item()
                acc_fake = (d_fake <= 0.5).float().mean().item()
                sums["loss_g"] += loss_g.item()
                sums["loss_d"] += loss_d.item()
                sums["d_accuracy"] += 0.5 * (acc_real + acc_fake)

            n_batches = len(epoch_batches)
            record = {
                "epoch": epoch,
                "loss_g": sums["loss_g"] / n_batches,
                "loss_d": sums["loss_d"] / n_batches,
                "d_accuracy": sums["d_accuracy"] / n_batches,
                "audited_batches": n_batches,
                "composition_violations": violations,
            }
            history.append(record)
            log.write(json.dumps(record) + "\n")
            log.flush()
            _save_gan_checkpoint(gen, disc, cfg, epoch, history, batch_log,
                                 ckpt_path(epoch))
            last_good = GanCheckpoint(path=ckpt_path(epoch), epoch=epoch,
                                      config_hash=last_good.config_hash,
                                      history=history, batch_log=batch_log)
    # stable name for downstream stages
    _save_gan_checkpoint(gen, disc, cfg, last_good.epoch, history, batch_log,
                         ckpt_dir / "gan_latest.pt")
    return last_good


def load_checkpoint(path, expected_image_size: int | None = None):
    """Restore (generator, discriminator, metadata); replays the stored probe."""
    payload = nnio.load_checkpoint_file(path, CHECKPOINT_KIND)
    try:
        cfg = GanTrainConfig(**payload["config"])
        stored_hash = payload["config_hash"]
        gen_state = payload["generator_state"]
        disc_state = payload["discriminator_state"]
        probe = payload["probe"]
    except (KeyError, TypeError) as exc:
        raise CorruptCheckpoint(f"{path}: missing field {exc}") from exc
    if expected_image_size is not None and cfg.image_size != expected_image_size:
        raise ArchMismatch(
            f"checkpoint image_size {cfg.image_size} != expected {expected_image_size}")
    if stored_hash != nnio.config_hash(cfg.arch_config()):
        raise ArchMismatch(f"{path}: config hash does not match stored config")
    gen = InpaintGenerator(cfg.base_channels)
    disc = PatchDiscriminator(cfg.base_channels)
    try:
        gen.load_state_dict(gen_state)
        disc.load_state_dict(disc_state)
    except RuntimeError as exc:
        raise CorruptCheckpoint(f"{path}: {exc}") from exc
    nnio.verify_probe(gen, (probe["image"], probe["mask"]),
                      probe["generator_out"], "generator")
    nnio.verify_probe(disc, probe["image"], probe["discriminator_out"],
                      "discriminator")
    metadata = {"epoch": payload["epoch"], "config_hash": stored_hash,
                "history": payload["history"], "config": payload["config"]}
    return gen, disc, metadata


def generator_composited_forward(gen: nn.Module, image: ImageSample,
                                 mask: BinaryMask) -> ImageSample:
    """Run the generator and compose: masked pixels generated, rest copied.

    Unmasked pixels of the result are bit-identical to the input image.
    """
    if mask.pixels.shape != image.pixels.shape[:2]:
        raise DimensionMismatch(
            f"mask {mask.pixels.shape} != image {image.pixels.shape[:2]}")
    gen.eval()
    with torch.no_grad():
        raw = gen(nnio.image_to_tensor(image.pixels), nnio.mask_to_tensor(mask.pixels))
    generated = ImageSample(id=f"{image.id}_gen", pixels=nnio.tensor_to_image(raw),
                            cohort=image.cohort)
    return composite(generated, image, mask)
