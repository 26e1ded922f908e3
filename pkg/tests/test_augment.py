import pytest
import torch

from hashcondense.augment import (DEFAULT_POLICY, IDENTITY_POLICY, AugmentationParams, FormationConfig, apply_aug,
                                  assemble, assemble_batch, decode, decode_batch, sample_aug)
from hashcondense.models import ConfigError


def test_identity_policy():
    w = sample_aug(IDENTITY_POLICY, rng=torch.Generator().manual_seed(0))
    assert w.is_identity
    x = torch.randn(3, 3, 8, 8)
    assert torch.equal(apply_aug(x, w), x)


def test_sample_deterministic():
    a = sample_aug(DEFAULT_POLICY, rng=torch.Generator().manual_seed(4))
    b = sample_aug(DEFAULT_POLICY, rng=torch.Generator().manual_seed(4))
    assert a == b


def test_flip_outcomes_enumerate():
    seen = {sample_aug(("flip",), rng=torch.Generator().manual_seed(s)).flip for s in range(40)}
    assert seen == {0, 1}


def test_unknown_kind_and_empty_policy():
    with pytest.raises(ConfigError):
        sample_aug(("rotate",))
    with pytest.raises(ConfigError):
        sample_aug(())


def test_policy_records():
    w = sample_aug([{"kind": "brightness", "strength": 0.01}], rng=torch.Generator().manual_seed(1))
    assert abs(w.brightness) <= 0.01


def test_flip_involution():
    w = AugmentationParams(policy=("flip",), flip=1)
    x = torch.randn(2, 3, 8, 8)
    assert not torch.equal(apply_aug(x, w), x)
    assert torch.equal(apply_aug(apply_aug(x, w), w), x)


def test_brightness_shift_mean():
    w = AugmentationParams(policy=("brightness",), brightness=0.37)
    x = torch.randn(4, 3, 8, 8, dtype=torch.float64)
    assert abs(float(apply_aug(x, w).mean() - x.mean()) - 0.37) < 1e-6


def test_same_w_same_output_and_shape():
    x = torch.randn(2, 3, 16, 16)
    for s in range(10):
        w = sample_aug(DEFAULT_POLICY, rng=torch.Generator().manual_seed(s))
        out = apply_aug(x, w)
        assert out.shape == x.shape
        assert torch.equal(out, apply_aug(x, w))


def test_aug_differentiable():
    x = torch.randn(2, 3, 16, 16, requires_grad=True)
    w = AugmentationParams(policy=DEFAULT_POLICY, shift=(0.1, -0.1), flip=1, brightness=0.2, contrast=1.3,
                           cutout=(0.5, 0.5, 0.25))
    apply_aug(x, w).sum().backward()
    assert x.grad is not None and torch.count_nonzero(x.grad) > 0


def test_aug_rejects_non_square():
    with pytest.raises(ValueError):
        apply_aug(torch.zeros(1, 3, 8, 6), AugmentationParams())


# --- multi-formation -------------------------------------------------------

def test_formation_config():
    cfg = FormationConfig(2, 32)
    assert cfg.patch_count == 4 and cfg.patch_side == 16
    with pytest.raises(ValueError):
        FormationConfig(3, 32)
    with pytest.raises(ValueError):
        FormationConfig(0, 32)


def test_assemble_f1_identity():
    x = torch.randn(3, 32, 32)
    cfg = FormationConfig(1, 32)
    assert torch.equal(assemble([x], cfg), x)
    out = decode(x, cfg)
    assert len(out) == 1 and torch.equal(out[0], x)


def test_assemble_top_left_is_downscale():
    imgs = [torch.randn(3, 32, 32, dtype=torch.float64) for _ in range(4)]
    canvas = assemble(imgs, FormationConfig(2, 32))
    assert canvas.shape == (3, 32, 32)
    down = torch.nn.functional.interpolate(imgs[0][None], size=(16, 16), mode="bilinear", align_corners=True)[0]
    assert torch.allclose(canvas[:, :16, :16], down, atol=1e-12)
    down3 = torch.nn.functional.interpolate(imgs[3][None], size=(16, 16), mode="bilinear", align_corners=True)[0]
    assert torch.allclose(canvas[:, 16:, 16:], down3, atol=1e-12)


def test_constant_images_round_trip():
    cfg = FormationConfig(2, 32)
    imgs = [torch.full((3, 32, 32), float(v)) for v in (1, 2, 3, 4)]
    canvas = assemble(imgs, cfg)
    quads = [canvas[:, :16, :16], canvas[:, :16, 16:], canvas[:, 16:, :16], canvas[:, 16:, 16:]]
    assert [float(q.mean()) for q in quads] == [1.0, 2.0, 3.0, 4.0]
    out = decode(canvas, cfg)
    assert len(out) == 4
    for v, img in zip((1, 2, 3, 4), out):
        assert torch.equal(img, torch.full((3, 32, 32), float(v)))


def test_wrong_patch_count():
    with pytest.raises(ValueError):
        assemble([torch.zeros(3, 32, 32)] * 3, FormationConfig(2, 32))


def test_affine_patches_round_trip_exactly():
    # corner-aligned bilinear resizing reproduces affine images exactly
    cfg = FormationConfig(2, 32)
    yy, xx = torch.meshgrid(torch.arange(32.0, dtype=torch.float64), torch.arange(32.0, dtype=torch.float64), indexing="ij")
    imgs = torch.stack([(a * yy + b * xx + c).expand(3, 32, 32) for a, b, c in
                        [(0.1, 0.2, 1), (-0.3, 0.05, 0), (0.0, -0.1, 2), (0.2, 0.2, -1)]]).double()
    canvas = assemble_batch(imgs, cfg)
    again = decode_batch(canvas, cfg)
    assert torch.allclose(again, imgs, atol=1e-9)
    assert torch.allclose(again.mean(dim=(1, 2, 3)), imgs.mean(dim=(1, 2, 3)), atol=1e-9)
    assert torch.allclose(assemble_batch(again, cfg), canvas, atol=1e-9)


def test_random_canvas_round_trip_shape_and_mean_stability():
    cfg = FormationConfig(2, 32)
    canvas = torch.randn(1, 3, 32, 32, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    first = decode_batch(canvas, cfg)
    assert first.shape == (4, 3, 32, 32)
    second = decode_batch(assemble_batch(first, cfg), cfg)
    # bilinear resampling is not a projection for arbitrary content; patch means
    # drift by well under 1% of the pixel scale
    assert torch.allclose(second.mean(dim=(2, 3)), first.mean(dim=(2, 3)), atol=5e-3)


@pytest.mark.parametrize("f,side", [(1, 8), (2, 8), (4, 8), (3, 9)])
def test_shapes_and_counts(f, side):
    cfg = FormationConfig(f, side)
    canv = assemble_batch(torch.randn(2 * f * f, 1, side, side), cfg)
    assert canv.shape == (2, 1, side, side)
    assert decode_batch(canv, cfg).shape == (2 * f * f, 1, side, side)
    assert len(decode(canv[0], cfg)) == f * f


def test_assemble_decode_gradcheck():
    cfg = FormationConfig(2, 8)
    imgs = torch.randn(4, 1, 8, 8, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda x: decode_batch(assemble_batch(x, cfg), cfg), (imgs,), eps=1e-6,
                                    atol=1e-8, rtol=1e-4)
