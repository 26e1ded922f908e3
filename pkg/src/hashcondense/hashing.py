"""Center-based deep hashing: class codebooks, pluggable losses, and the trainer."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import torch
import torch.nn.functional as F

from .augment import DEFAULT_POLICY, FormationConfig, apply_aug, decode_batch, sample_aug
from .data import LabeledDataset, SyntheticSet, read_tensor_container, write_tensor_container
from .models import ArchSpec, ConfigError, HashNetParams, get_arch, hash_forward, init_network


class InfeasibleCodebookError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


def build_codebook(c: int, K: int, seed: int = 0, max_tries: int = 10_000) -> np.ndarray:
    """``c x K`` matrix of +-1 class targets with pairwise Hamming distance >= K/4.

    Uses rows of a Sylvester Hadamard matrix (pairwise distance exactly K/2)
    when K is a power of two and ``c <= K``; otherwise random rows are redrawn
    until the distance bound holds.
    """
    if c < 1 or K < 1:
        raise InfeasibleCodebookError("need at least one class and one bit")
    if K < 63 and c > 2 ** K:
        raise InfeasibleCodebookError(f"{c} classes cannot get distinct {K}-bit codes")
    rng = np.random.default_rng(seed)
    if K & (K - 1) == 0 and c <= K:
        H = scipy.linalg.hadamard(K)
        book = H[np.sort(rng.permutation(K)[:c])]
    else:
        for _ in range(max_tries):
            if K <= 16:
                ints = rng.choice(2 ** K, size=c, replace=False)
                book = ((ints[:, None] >> np.arange(K)) & 1) * 2 - 1
            else:
                book = rng.choice([-1, 1], size=(c, K))
            if min_pairwise_hamming(book) >= K / 4:
                break
        else:
            raise InfeasibleCodebookError(f"no codebook with min distance K/4 found for c={c}, K={K}")
    book = book.astype(np.int64)
    assert min_pairwise_hamming(book) >= K / 4
    return book


def min_pairwise_hamming(book: np.ndarray) -> float:
    if len(book) < 2:
        return math.inf
    K = book.shape[1]
    dist = (K - book @ book.T) / 2
    return float(dist[~np.eye(len(book), dtype=bool)].min())


@dataclass
class HashLossConfig:
    code_bits: int = 32
    quant_weight: float = 0.5
    epochs: int = 200
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 32
    seed: int = 0
    augment: bool = True
    loss: str = "center"
    codebook: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.quant_weight < 0:
            raise ConfigError("quant_weight must be non-negative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")

    def to_dict(self):
        return {k: getattr(self, k) for k in ("code_bits", "quant_weight", "epochs", "lr", "momentum",
                                               "weight_decay", "batch_size", "seed", "augment", "loss")}


def _targets(labels, codebook, dtype):
    labels = torch.as_tensor(labels, dtype=torch.long)
    book = torch.as_tensor(np.asarray(codebook), dtype=dtype)
    if len(labels) and (int(labels.min()) < 0 or int(labels.max()) >= len(book)):
        raise ValueError(f"label outside codebook range [0, {len(book)})")
    return book[labels]


def hash_loss(v: torch.Tensor, labels, codebook, quant_weight: float = 0.5) -> torch.Tensor:
    """``mean(1 - cos(v_i, t_{y_i})) + quant_weight * mean((|v| - 1)^2)``."""
    t = _targets(labels, codebook, v.dtype)
    if v.shape != t.shape:
        raise ValueError(f"codes {tuple(v.shape)} vs targets {tuple(t.shape)}")
    center = (1 - F.cosine_similarity(v, t, dim=1, eps=1e-12)).mean()
    return center + quant_weight * ((v.abs() - 1) ** 2).mean()


def _center_loss(v, labels, codebook, cfg):
    return hash_loss(v, labels, codebook, cfg.quant_weight)


def _center_no_quant(v, labels, codebook, cfg):
    return hash_loss(v, labels, codebook, 0.0)


def _csq_bce(v, labels, codebook, cfg):
    # per-bit logistic fit to the class center, central-similarity style
    t = _targets(labels, codebook, v.dtype)
    bce = F.binary_cross_entropy_with_logits(v, (t + 1) / 2)
    return bce + cfg.quant_weight * ((torch.tanh(v).abs() - 1) ** 2).mean()


LOSS_PLUGINS = {
    "center": _center_loss,
    "center-no-quant": _center_no_quant,
    "csq-bce": _csq_bce,
}


def register_loss(name: str, fn):
    """Add a hashing loss ``fn(v, labels, codebook, cfg) -> scalar``."""
    LOSS_PLUGINS[name] = fn


def get_loss(name: str):
    if name not in LOSS_PLUGINS:
        raise ConfigError(f"unknown hashing loss {name!r}; registered: {sorted(LOSS_PLUGINS)}")
    return LOSS_PLUGINS[name]


@dataclass
class TrainedHashModel:
    params: HashNetParams
    loss_curve: list
    codebook: np.ndarray
    trained_on: dict = field(default_factory=dict)

    def save(self, path):
        meta = {"arch": self.params.arch.to_dict(), "code_bits": self.params.code_bits,
                "loss_curve": self.loss_curve, "trained_on": self.trained_on,
                "codebook": np.asarray(self.codebook).tolist()}
        return write_tensor_container(path, "params", dict(self.params.named_tensors()), meta)

    @classmethod
    def load(cls, path):
        tensors, meta = read_tensor_container(path, "params")
        arch = ArchSpec(**meta["arch"])
        params = HashNetParams.from_named(tensors, arch, meta["code_bits"])
        return cls(params, meta["loss_curve"], np.asarray(meta["codebook"]), meta["trained_on"])


def training_tensors(train_set) -> tuple[torch.Tensor, torch.Tensor, int]:
    """Images, labels and class count; multi-formation canvases are decoded first."""
    if isinstance(train_set, SyntheticSet):
        f = train_set.formation_factor
        images = decode_batch(train_set.pixels.detach(), FormationConfig(f, train_set.image_side))
        labels = train_set.labels.repeat_interleave(f * f)
        return images.float(), labels.long(), train_set.num_classes
    if isinstance(train_set, LabeledDataset):
        return train_set.images, train_set.labels.long(), train_set.num_classes
    raise TypeError(f"cannot train on {type(train_set).__name__}")


def augment_each(x: torch.Tensor, rng: torch.Generator) -> torch.Tensor:
    """Independent draw of the default policy for every image."""
    return torch.cat([apply_aug(x[i:i + 1], sample_aug(DEFAULT_POLICY, None, rng)) for i in range(len(x))])


def train_hash(train_set, cfg: HashLossConfig, arch: str | ArchSpec = "convnet-3") -> TrainedHashModel:
    """Fit a hashing network to ``train_set`` with SGD and a cosine learning-rate schedule."""
    images, labels, c = training_tensors(train_set)
    arch = arch if isinstance(arch, ArchSpec) else get_arch(arch, images.shape[1], images.shape[-1])
    codebook = cfg.codebook if cfg.codebook is not None else build_codebook(c, cfg.code_bits, cfg.seed)
    loss_fn = get_loss(cfg.loss)
    params = init_network(arch, cfg.code_bits, cfg.seed).requires_grad_()
    provenance = dict(getattr(train_set, "provenance", {}) or {"dataset": getattr(train_set, "name", "?"),
                                                               "split": getattr(train_set, "split_tag", "?")})
    if cfg.epochs == 0:
        return TrainedHashModel(params.clone(), [], codebook, provenance)

    g = torch.Generator().manual_seed(cfg.seed + 1)
    n = len(labels)
    steps_per_epoch = max(1, math.ceil(n / cfg.batch_size))
    total = cfg.epochs * steps_per_epoch
    opt = torch.optim.SGD(params.tensors(), lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: 0.5 * (1 + math.cos(math.pi * s / total)))
    curve = []
    for epoch in range(cfg.epochs):
        perm = torch.randperm(n, generator=g)
        running = 0.0
        for s in range(steps_per_epoch):
            idx = perm[s * cfg.batch_size:(s + 1) * cfg.batch_size]
            x = images[idx]
            if cfg.augment:
                x = augment_each(x, g)
            loss = loss_fn(hash_forward(params, x), labels[idx], codebook, cfg)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite hashing loss at epoch {epoch}, step {s} (lr={cfg.lr})")
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            running += float(loss.detach()) * len(idx)
        curve.append(running / n)
    return TrainedHashModel(params.clone(), curve, codebook, provenance)


@torch.no_grad()
def encode(params: HashNetParams, images: torch.Tensor, batch: int = 500) -> torch.Tensor:
    """Continuous codes for a large image tensor, computed in chunks."""
    chunks = [hash_forward(params, images[i:i + batch]) for i in range(0, len(images), batch)]
    return torch.cat(chunks) if chunks else images.new_zeros((0, params.code_bits))
