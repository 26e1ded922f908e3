"""Shared-parameter differentiable augmentation and multi-formation packing.

An :class:`AugmentationParams` record holds one concrete draw of every
transform in the policy. Applying the same record to a real batch and a
synthetic batch gives both sides identical geometry and photometry, which is
what the matching loss needs. Offsets are stored as fractions of the image
side so one record can be applied at any resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .models import ConfigError

DEFAULT_STRENGTH = {
    "crop": 0.125,  # max shift as a fraction of the side (pad 4 at 32px)
    "flip": 0.5,  # flip probability
    "brightness": 0.5,  # additive shift in [-s, s] (normalized units)
    "contrast": 0.5,  # scale in [1-s, 1+s] about the per-image mean
    "cutout": 0.25,  # square side as a fraction of the image side
}
KNOWN_KINDS = set(DEFAULT_STRENGTH) | {"identity"}
DEFAULT_POLICY = ("crop", "flip", "brightness", "contrast", "cutout")
IDENTITY_POLICY = ("identity",)


@dataclass(frozen=True)
class AugmentationParams:
    policy: tuple = IDENTITY_POLICY
    shift: tuple = (0.0, 0.0)  # (dy, dx) as fractions of the side
    flip: int = 0
    brightness: float = 0.0
    contrast: float = 1.0
    cutout: tuple | None = None  # (center_y, center_x, size), fractions of the side

    @property
    def is_identity(self) -> bool:
        return self == AugmentationParams(policy=self.policy)


def parse_policy(policy) -> tuple[tuple, dict]:
    """Accept a sequence of kinds or of ``{"kind", "strength"}`` records."""
    kinds, strength = [], {}
    for item in policy:
        if isinstance(item, dict):
            kind = item["kind"]
            if item.get("strength") is not None:
                strength[kind] = float(item["strength"])
        else:
            kind = item
        if kind not in KNOWN_KINDS:
            raise ConfigError(f"unknown augmentation kind {kind!r}")
        kinds.append(kind)
    return tuple(kinds), strength


def sample_aug(policy=DEFAULT_POLICY, strength: dict | None = None,
               rng: torch.Generator | None = None) -> AugmentationParams:
    kinds, inline = parse_policy(policy)
    if not kinds:
        raise ConfigError("empty augmentation policy; use ('identity',) for no-ops")
    s = {**DEFAULT_STRENGTH, **inline, **(strength or {})}
    if rng is None:
        rng = torch.Generator().manual_seed(0)

    def u(lo, hi):
        return lo + (hi - lo) * float(torch.rand((), generator=rng, dtype=torch.float64))

    out = {}
    for kind in kinds:
        if kind == "crop":
            out["shift"] = (u(-s["crop"], s["crop"]), u(-s["crop"], s["crop"]))
        elif kind == "flip":
            out["flip"] = int(u(0, 1) < s["flip"])
        elif kind == "brightness":
            out["brightness"] = u(-s["brightness"], s["brightness"])
        elif kind == "contrast":
            out["contrast"] = u(1 - s["contrast"], 1 + s["contrast"])
        elif kind == "cutout":
            out["cutout"] = (u(0, 1), u(0, 1), s["cutout"])
    return AugmentationParams(policy=kinds, **out)


def _shift(x, dy, dx):
    if dy == 0 and dx == 0:
        return x
    p = max(abs(dy), abs(dx))
    padded = F.pad(x, (p, p, p, p))
    h, w = x.shape[-2:]
    return padded[..., p + dy:p + dy + h, p + dx:p + dx + w]


def apply_aug(batch: torch.Tensor, w: AugmentationParams) -> torch.Tensor:
    """Apply one concrete draw to every image of ``batch`` (shape ``(n, c, l, l)``)."""
    if batch.ndim != 4 or batch.shape[-1] != batch.shape[-2]:
        raise ValueError(f"expected a batch of square images, got shape {tuple(batch.shape)}")
    side = batch.shape[-1]
    x = batch
    for kind in w.policy:
        if kind == "crop":
            x = _shift(x, round(w.shift[0] * side), round(w.shift[1] * side))
        elif kind == "flip" and w.flip:
            x = x.flip(-1)
        elif kind == "brightness" and w.brightness != 0:
            x = x + w.brightness
        elif kind == "contrast" and w.contrast != 1:
            mean = x.mean(dim=(1, 2, 3), keepdim=True)
            x = (x - mean) * w.contrast + mean
        elif kind == "cutout" and w.cutout is not None:
            cy, cx, size = w.cutout
            half = max(1, round(size * side)) // 2
            y0, x0 = round(cy * side), round(cx * side)
            mask = torch.ones(side, side, dtype=x.dtype)
            mask[max(0, y0 - half):y0 + half, max(0, x0 - half):x0 + half] = 0
            x = x * mask
    return x


# --------------------------------------------------------------------------
# multi-formation

@dataclass(frozen=True)
class FormationConfig:
    factor: int = 1
    image_side: int = 32
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.factor < 1:
            raise ValueError(f"formation factor must be >= 1, got {self.factor}")
        if self.image_side % self.factor:
            raise ValueError(f"factor {self.factor} does not divide image side {self.image_side}")

    @property
    def patch_count(self) -> int:
        return self.factor * self.factor

    @property
    def patch_side(self) -> int:
        return self.image_side // self.factor


def _lerp_axis(x, side, dim):
    n = x.shape[dim]
    if n == side:
        return x
    if n == 1 or side == 1:
        return x.narrow(dim, 0, 1).expand(*[side if d == dim % x.ndim else s for d, s in enumerate(x.shape)])
    pos = torch.arange(side, dtype=torch.float64) * ((n - 1) / (side - 1))
    lo = pos.floor().long().clamp(max=n - 2)
    frac = (pos - lo).to(x.dtype)
    shape = [1] * x.ndim
    shape[dim] = side
    a = x.index_select(dim, lo)
    b = x.index_select(dim, lo + 1)
    # a + t * (b - a) leaves constant regions bit-exact
    return a + frac.view(shape) * (b - a)


def resize_bilinear(x: torch.Tensor, side: int) -> torch.Tensor:
    """Corner-aligned bilinear resize of ``(..., h, w)`` to ``(..., side, side)``."""
    return _lerp_axis(_lerp_axis(x, side, x.ndim - 2), side, x.ndim - 1)


def assemble_batch(images: torch.Tensor, cfg: FormationConfig) -> torch.Tensor:
    """Pack consecutive groups of ``f*f`` images into canvases.

    ``images`` has shape ``(n * f*f, c, l, l)``; returns ``(n, c, l, l)`` where
    group member ``k`` lands at grid cell ``(k // f, k % f)``.
    """
    f, side = cfg.factor, cfg.image_side
    if images.shape[-1] != side or images.shape[-2] != side:
        raise ValueError(f"images must be {side}x{side}, got {tuple(images.shape[-2:])}")
    if images.shape[0] % cfg.patch_count:
        raise ValueError(f"{images.shape[0]} images do not split into groups of {cfg.patch_count}")
    if f == 1:
        return images
    n, ch, p = images.shape[0] // cfg.patch_count, images.shape[1], cfg.patch_side
    small = resize_bilinear(images, p).reshape(n, f, f, ch, p, p)
    return small.permute(0, 3, 1, 4, 2, 5).reshape(n, ch, side, side)


def decode_batch(canvases: torch.Tensor, cfg: FormationConfig) -> torch.Tensor:
    """Inverse layout of :func:`assemble_batch`: ``(n, c, l, l)`` -> ``(n * f*f, c, l, l)``."""
    f, side = cfg.factor, cfg.image_side
    if canvases.shape[-1] != side or canvases.shape[-2] != side:
        raise ValueError(f"canvases must be {side}x{side}, got {tuple(canvases.shape[-2:])}")
    if f == 1:
        return canvases
    n, ch, p = canvases.shape[0], canvases.shape[1], cfg.patch_side
    patches = canvases.reshape(n, ch, f, p, f, p).permute(0, 2, 4, 1, 3, 5).reshape(n * f * f, ch, p, p)
    return resize_bilinear(patches, side)


def assemble(class_images, cfg: FormationConfig) -> torch.Tensor:
    """Downscale ``f*f`` same-class images and tile them row-major into one canvas."""
    if len(class_images) != cfg.patch_count:
        raise ValueError(f"assemble needs exactly {cfg.patch_count} images, got {len(class_images)}")
    stack = torch.stack(list(class_images)) if not torch.is_tensor(class_images) else class_images
    if stack.ndim == 3:
        stack = stack.unsqueeze(1)
    return assemble_batch(stack, cfg)[0]


def decode(synthetic_image: torch.Tensor, cfg: FormationConfig) -> list[torch.Tensor]:
    """Split a canvas into its ``f*f`` patches, each upscaled back to full size."""
    x = synthetic_image if synthetic_image.ndim == 4 else synthetic_image.unsqueeze(0)
    return list(decode_batch(x, cfg).unbind(0))
