"""Functional ConvNet feature extractor, linear hash head, and weight perturbation.

Parameters live in plain ordered dicts of tensors so that a perturbed copy of
the network is just another dict; the forward pass is a pure function of
``(params, batch)``.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace

import torch
import torch.nn.functional as F


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ArchSpec:
    name: str
    width: int
    depth: int
    image_side: int
    channels: int = 3
    norm: str = "instance"

    @property
    def feature_dim(self) -> int:
        side = self.image_side >> self.depth
        return self.width * side * side

    def to_dict(self):
        return {"name": self.name, "width": self.width, "depth": self.depth, "image_side": self.image_side,
                "channels": self.channels, "norm": self.norm}


ARCHS = {
    # 3 x (conv3x3-128, instance norm, relu, avgpool2) on 32x32 inputs
    "convnet-3": ArchSpec("convnet-3", width=128, depth=3, image_side=32),
    "tiny-conv": ArchSpec("tiny-conv", width=32, depth=2, image_side=16),
    # under 1k parameters; used for finite-difference checks
    "micro-conv": ArchSpec("micro-conv", width=4, depth=2, image_side=8),
}


def get_arch(arch_id: str, channels: int = 3, image_side: int | None = None) -> ArchSpec:
    if arch_id not in ARCHS:
        raise ConfigError(f"unsupported architecture {arch_id!r}; known: {sorted(ARCHS)}")
    arch = replace(ARCHS[arch_id], channels=channels)
    if image_side is not None:
        arch = replace(arch, image_side=image_side)
    if arch.image_side % (1 << arch.depth):
        raise ConfigError(f"image side {arch.image_side} not divisible by 2^{arch.depth}")
    return arch


@dataclass
class HashNetParams:
    feature_params: "OrderedDict[str, torch.Tensor]"
    hash_params: "OrderedDict[str, torch.Tensor]"
    arch: ArchSpec
    code_bits: int
    meta: dict = field(default_factory=dict)

    def named_tensors(self):
        yield from (("feature." + k, v) for k, v in self.feature_params.items())
        yield from (("hash." + k, v) for k, v in self.hash_params.items())

    def tensors(self) -> list[torch.Tensor]:
        return [t for _, t in self.named_tensors()]

    def num_parameters(self) -> int:
        return sum(t.numel() for t in self.tensors())

    def map(self, fn) -> "HashNetParams":
        return HashNetParams(OrderedDict((k, fn(v)) for k, v in self.feature_params.items()),
                             OrderedDict((k, fn(v)) for k, v in self.hash_params.items()),
                             self.arch, self.code_bits, dict(self.meta))

    def clone(self) -> "HashNetParams":
        return self.map(lambda t: t.detach().clone())

    def to(self, dtype) -> "HashNetParams":
        return self.map(lambda t: t.detach().to(dtype))

    def requires_grad_(self) -> "HashNetParams":
        for t in self.tensors():
            t.requires_grad_(True)
        return self

    @classmethod
    def from_named(cls, named: dict, arch: ArchSpec, code_bits: int, meta=None):
        feat = OrderedDict((k[len("feature."):], v) for k, v in named.items() if k.startswith("feature."))
        head = OrderedDict((k[len("hash."):], v) for k, v in named.items() if k.startswith("hash."))
        return cls(feat, head, arch, code_bits, dict(meta or {}))


def init_network(arch_id: str | ArchSpec, code_bits: int, seed: int, channels: int = 3,
                 image_side: int | None = None) -> HashNetParams:
    """Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)), for conv/linear weights and biases."""
    arch = arch_id if isinstance(arch_id, ArchSpec) else get_arch(arch_id, channels, image_side)
    if code_bits < 1:
        raise ConfigError("code_bits must be positive")
    g = torch.Generator().manual_seed(int(seed))

    def uniform(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return (torch.rand(shape, generator=g) * 2 - 1) * bound

    feat = OrderedDict()
    in_ch = arch.channels
    for i in range(arch.depth):
        fan_in = in_ch * 9
        feat[f"conv{i}.weight"] = uniform((arch.width, in_ch, 3, 3), fan_in)
        feat[f"conv{i}.bias"] = uniform((arch.width,), fan_in)
        if arch.norm == "instance":
            feat[f"norm{i}.weight"] = torch.ones(arch.width)
            feat[f"norm{i}.bias"] = torch.zeros(arch.width)
        in_ch = arch.width
    head = OrderedDict()
    head["weight"] = uniform((arch.feature_dim, code_bits), arch.feature_dim)
    head["bias"] = uniform((code_bits,), arch.feature_dim)
    return HashNetParams(feat, head, arch, code_bits, {"seed": int(seed)})


def _check_batch(theta: HashNetParams, batch: torch.Tensor):
    a = theta.arch
    if batch.ndim != 4 or batch.shape[1] != a.channels or batch.shape[2] != a.image_side \
            or batch.shape[3] != a.image_side:
        raise ValueError(f"batch shape {tuple(batch.shape)} does not match "
                         f"(n, {a.channels}, {a.image_side}, {a.image_side}) for {a.name}")


def extract_features(theta: HashNetParams, batch: torch.Tensor) -> torch.Tensor:
    """Embeddings before the hash layer, flattened to ``(n, feature_dim)``.

    Instance normalization uses per-sample statistics only, so a row never
    depends on the other rows of the batch.
    """
    _check_batch(theta, batch)
    a, p = theta.arch, theta.feature_params
    if batch.shape[0] == 0:
        return batch.new_zeros((0, a.feature_dim))
    x = batch
    for i in range(a.depth):
        x = F.conv2d(x, p[f"conv{i}.weight"], p[f"conv{i}.bias"], padding=1)
        if a.norm == "instance":
            x = F.group_norm(x, a.width, p[f"norm{i}.weight"], p[f"norm{i}.bias"], eps=1e-5)
        x = F.relu(x)
        x = F.avg_pool2d(x, 2)
    return x.flatten(1)


def hash_head(theta: HashNetParams, features: torch.Tensor) -> torch.Tensor:
    return features @ theta.hash_params["weight"] + theta.hash_params["bias"]


def hash_forward(theta: HashNetParams, batch: torch.Tensor) -> torch.Tensor:
    """Continuous codes ``g(h(x))`` of shape ``(n, code_bits)``; no binarization."""
    return hash_head(theta, extract_features(theta, batch))


@dataclass(frozen=True)
class PerturbationConfig:
    alpha: float = 0.1
    noise_seed: int = 0
    granularity: str = "per-layer"

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if self.granularity != "per-layer":
            raise ConfigError(f"unsupported granularity {self.granularity!r}")


def perturbation_delta(w: torch.Tensor, d: torch.Tensor, alpha: float) -> torch.Tensor:
    """``alpha * (d * w) / ||d||_F`` with ``d`` the raw Gaussian draw for ``w``."""
    norm = torch.linalg.vector_norm(d)
    if norm == 0:
        return torch.zeros_like(w)
    return alpha * ((d * w) / norm)


def perturb_tensor(w: torch.Tensor, d: torch.Tensor, alpha: float) -> torch.Tensor:
    return w + perturbation_delta(w, d, alpha)


def perturb(theta_init: HashNetParams, cfg: PerturbationConfig,
            rng: torch.Generator | None = None) -> HashNetParams:
    """Parameter-scaled Gaussian perturbation of every tensor, normalized per tensor.

    Draws come from ``rng`` when given (so a training loop can advance one
    stream), otherwise from a fresh generator seeded with ``cfg.noise_seed``.
    ``theta_init`` is left untouched.
    """
    if rng is None:
        rng = torch.Generator().manual_seed(int(cfg.noise_seed))
    if cfg.alpha == 0:
        return theta_init.clone()

    def one(w):
        w = w.detach()
        d = torch.randn(w.shape, generator=rng, dtype=torch.float64).to(w.dtype)
        return perturb_tensor(w, d, cfg.alpha)

    out = theta_init.map(one)
    out.meta["perturbed_alpha"] = cfg.alpha
    return out
