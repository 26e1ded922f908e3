"""
Packing several images into one canvas
======================================

A synthetic canvas stores ``f*f`` downscaled images of the same class.
Training code never sees the canvas directly: it decodes it back into
``f*f`` full-size images first.
"""

import torch

from hashcondense.augment import FormationConfig, assemble, decode

# Four constant 32x32 images with values 1..4 survive the trip exactly,
# because bilinear resizing leaves constants unchanged.
cfg = FormationConfig(factor=2, image_side=32)
images = [torch.full((3, 32, 32), float(v)) for v in (1, 2, 3, 4)]
canvas = assemble(images, cfg)
print("canvas shape:", tuple(canvas.shape))
print("quadrant means:", [round(float(q.mean()), 6) for q in
                          (canvas[:, :16, :16], canvas[:, :16, 16:], canvas[:, 16:, :16], canvas[:, 16:, 16:])])
decoded = decode(canvas, cfg)
print("decoded", len(decoded), "images; exact:", all(torch.equal(a, b) for a, b in zip(decoded, images)))

# Natural images lose detail in the 2x downscale, so a decoded image is a
# smoothed version of the source.
torch.manual_seed(0)
rough = [torch.rand(3, 32, 32) for _ in range(4)]
back = decode(assemble(rough, cfg), cfg)
err = max(float((a - b).abs().mean()) for a, b in zip(back, rough))
print(f"mean abs error on random images: {err:.3f}")

# With f=3 a 12x12 canvas holds nine 4x4 patches.
print("f=3 decode count:", len(decode(torch.zeros(1, 12, 12), FormationConfig(3, 12))))
