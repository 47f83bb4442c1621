import math

import numpy as np
import pytest
import torch

from helpers import assert_grad_close, central_difference_grad
from plastiseg.dataio import BinaryMask, ImageSample
from plastiseg.errors import (ArchMismatch, CorruptCheckpoint,
                              DimensionMismatch, NumericNonfinite)
from plastiseg.inpaint_gan import (GanTrainConfig, InpaintGenerator,
                                   PatchDiscriminator, gan_losses,
                                   generator_composited_forward,
                                   load_checkpoint, masked_l1, train_gan)


def test_gan_losses_closed_form_at_half():
    d = torch.full((2, 1, 4, 4), 0.5)
    raw = torch.rand(2, 3, 8, 8)
    mask = torch.ones(2, 1, 8, 8)
    losses = gan_losses(d, d, raw, raw.clone(), mask, recon_weight=10.0)
    assert losses["loss_d"].item() == pytest.approx(2 * math.log(2), rel=1e-6)
    assert losses["loss_g"].item() == pytest.approx(math.log(2), rel=1e-6)


def test_gan_losses_empty_mask_drops_reconstruction():
    d = torch.full((1, 1, 2, 2), 0.3)
    raw = torch.rand(1, 3, 8, 8)
    target = torch.rand(1, 3, 8, 8)
    mask = torch.zeros(1, 1, 8, 8)
    losses = gan_losses(d, d, raw, target, mask, recon_weight=10.0)
    adversarial_only = gan_losses(d, d, raw, target, mask, recon_weight=0.0)
    assert losses["loss_g"].item() == pytest.approx(
        adversarial_only["loss_g"].item(), abs=1e-9)


def test_gan_losses_zero_weight_is_pure_adversarial():
    d_fake = torch.full((1, 1, 2, 2), 0.25)
    raw = torch.rand(1, 3, 8, 8)
    target = torch.zeros(1, 3, 8, 8)
    mask = torch.ones(1, 1, 8, 8)
    losses = gan_losses(d_fake, d_fake, raw, target, mask, recon_weight=0.0)
    assert losses["loss_g"].item() == pytest.approx(-math.log(0.25), rel=1e-6)


def test_gan_losses_nonfinite_raises():
    d = torch.full((1, 1, 2, 2), 0.5)
    raw = torch.full((1, 3, 4, 4), float("inf"))
    mask = torch.ones(1, 1, 4, 4)
    with pytest.raises(NumericNonfinite):
        gan_losses(d, d, raw, torch.zeros(1, 3, 4, 4), mask)


def test_masked_l1_gradient_matches_finite_differences():
    torch.manual_seed(0)
    target = torch.rand(4, 4, dtype=torch.float64)
    mask = (torch.rand(4, 4) > 0.4).double()
    x = (target + 0.2 + 0.3 * torch.rand(4, 4, dtype=torch.float64)).requires_grad_()

    loss = masked_l1(x, target, mask)
    loss.backward()
    numeric = central_difference_grad(
        lambda t: masked_l1(t, target, mask), x.detach().clone())
    assert_grad_close(x.grad, numeric, rel_tol=1e-3)


def test_generator_output_bounded_and_shaped():
    torch.manual_seed(1)
    gen = InpaintGenerator(base_channels=8)
    for h, w in ((32, 32), (37, 50), (4, 4)):
        out = gen(torch.rand(1, 3, h, w), (torch.rand(1, 1, h, w) > 0.5).float())
        assert out.shape == (1, 3, h, w)
        assert out.min().item() >= 0.0
        assert out.max().item() <= 1.0


def test_discriminator_shape_stable():
    torch.manual_seed(2)
    disc = PatchDiscriminator(base_channels=8)
    a = disc(torch.rand(2, 3, 32, 32))
    b = disc(torch.rand(2, 3, 32, 32))
    assert a.shape == b.shape
    assert 0.0 <= a.min().item() and a.max().item() <= 1.0


def _sample_pair(rng, size=32):
    image = ImageSample(id="img", pixels=rng.integers(0, 256, (size, size, 3),
                                                      dtype=np.uint8))
    mask = BinaryMask(id="mask",
                      pixels=(rng.random((size, size)) < 0.3).astype(np.uint8))
    return image, mask


def test_composited_forward_identity_outside_mask(rng):
    torch.manual_seed(3)
    gen = InpaintGenerator(base_channels=8)
    image, mask = _sample_pair(rng)
    out = generator_composited_forward(gen, image, mask)
    outside = mask.pixels == 0
    assert np.array_equal(out.pixels[outside], image.pixels[outside])


def test_composited_forward_mask_extremes(rng):
    torch.manual_seed(4)
    gen = InpaintGenerator(base_channels=8)
    image, _ = _sample_pair(rng)
    zeros = BinaryMask(id="z", pixels=np.zeros((32, 32), dtype=np.uint8))
    out = generator_composited_forward(gen, image, zeros)
    assert np.array_equal(out.pixels, image.pixels)

    ones = BinaryMask(id="o", pixels=np.ones((32, 32), dtype=np.uint8))
    out_full = generator_composited_forward(gen, image, ones)
    assert not np.array_equal(out_full.pixels, image.pixels)


def test_composited_forward_dimension_mismatch(rng):
    gen = InpaintGenerator(base_channels=8)
    image, _ = _sample_pair(rng)
    bad_mask = BinaryMask(id="b", pixels=np.zeros((16, 16), dtype=np.uint8))
    with pytest.raises(DimensionMismatch):
        generator_composited_forward(gen, image, bad_mask)


def test_train_gan_history_and_audit(gan_checkpoint):
    assert gan_checkpoint.epoch == 2
    assert len(gan_checkpoint.history) == 2
    for record in gan_checkpoint.history:
        assert math.isfinite(record["loss_g"])
        assert math.isfinite(record["loss_d"])
        assert 0.0 <= record["d_accuracy"] <= 1.0
        assert record["composition_violations"] == 0


def test_train_gan_zero_epochs(tmp_path, cohort1_pairs):
    cfg = GanTrainConfig(epochs=0, batch_size=4, image_size=32,
                         base_channels=8, seed=1, checkpoint_dir=str(tmp_path))
    result = train_gan(cohort1_pairs, cfg)
    assert result.epoch == 0
    assert result.history == []
    assert result.path.exists()


def test_train_gan_batch_order_deterministic(tmp_path, cohort1_pairs):
    logs = []
    for run in range(2):
        cfg = GanTrainConfig(epochs=1, batch_size=4, image_size=32,
                             base_channels=8, seed=9,
                             checkpoint_dir=str(tmp_path / f"run{run}"))
        logs.append(train_gan(cohort1_pairs, cfg).batch_log)
    assert logs[0] == logs[1]


def test_train_gan_needs_two_pairs(tmp_path, cohort1_pairs):
    with pytest.raises(ValueError):
        train_gan(cohort1_pairs[:1],
                  GanTrainConfig(epochs=1, checkpoint_dir=str(tmp_path)))


def test_checkpoint_roundtrip(gan_checkpoint, rng):
    gen, disc, meta = load_checkpoint(gan_checkpoint.path)
    assert meta["epoch"] == gan_checkpoint.epoch
    assert meta["config_hash"] == gan_checkpoint.config_hash

    torch.manual_seed(0)
    image = torch.rand(1, 3, 32, 32)
    mask = (torch.rand(1, 1, 32, 32) > 0.5).float()
    with torch.no_grad():
        a = gen(image, mask)
    gen2, _, _ = load_checkpoint(gan_checkpoint.path)
    with torch.no_grad():
        b = gen2(image, mask)
    assert (a - b).abs().max().item() <= 1e-5


def test_checkpoint_truncated(gan_checkpoint, tmp_path):
    data = gan_checkpoint.path.read_bytes()
    bad = tmp_path / "trunc.pt"
    bad.write_bytes(data[: len(data) // 2])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(bad)


def test_checkpoint_arch_mismatch(gan_checkpoint):
    with pytest.raises(ArchMismatch):
        load_checkpoint(gan_checkpoint.path, expected_image_size=128)
