"""
Perturbing a randomly initialized network
=========================================

Each condensation step looks at the data through a slightly different
network: every weight tensor ``W`` is replaced by ``W + alpha * (d * W) / ||d||``
with fresh Gaussian noise ``d``.
"""

import torch

from hashcondense.models import PerturbationConfig, extract_features, init_network, perturb

theta = init_network("tiny-conv", code_bits=16, seed=0, channels=3, image_side=16)
print("parameters:", theta.num_parameters())

x = torch.randn(8, 3, 16, 16)
base = extract_features(theta, x)
for alpha in (0.0, 0.1, 0.5, 1.0):
    moved = perturb(theta, PerturbationConfig(alpha=alpha, noise_seed=1))
    shift = max(float((a - b).norm() / b.norm()) for a, b in zip(moved.tensors(), theta.tensors()))
    feat = float((extract_features(moved, x) - base).norm() / base.norm())
    print(f"alpha={alpha:<4} largest relative weight change {shift:.4f}  feature change {feat:.4f}")

# The relative change of each tensor is bounded by alpha because ||d*W|| <= ||d|| * max|W|.
# Zero tensors (for example, freshly initialized norm biases) never move.
moved = perturb(theta, PerturbationConfig(alpha=0.5, noise_seed=2))
zero_bias = [n for n, t in theta.named_tensors() if not t.any()]
print("tensors that start at zero:", zero_bias)
print("still zero after perturbation:", all(not dict(moved.named_tensors())[n].any() for n in zero_bias))
