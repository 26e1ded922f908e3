"""Feature-embedding distribution matching over learnable synthetic canvases.

Every iteration re-perturbs a freshly initialized ConvNet, draws one real
mini-batch per class, decodes the class's canvases into their multi-formation
images, applies one shared augmentation draw to both sides, and sums the
squared distance between mean embeddings over classes. The synthetic pixels
then take one SGD step. Switching off network and dataset augmentation
recovers plain distribution matching.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from .augment import DEFAULT_POLICY, FormationConfig, apply_aug, assemble_batch, decode_batch, parse_policy, \
    sample_aug
from .data import DataValidationError, LabeledDataset, SyntheticSet, sample_class_batch
from .models import HashNetParams, PerturbationConfig, extract_features, init_network, perturb


class CondensationError(RuntimeError):
    pass


@dataclass
class CondenseConfig:
    ipc: int = 10
    iterations: int = 200
    lr_syn: float = 1.0
    momentum: float = 0.5
    real_batch: int = 64
    syn_batch: int | None = None  # None: every canvas of the class
    alpha: float = 0.1
    formation_factor: int = 2
    aug_policy: tuple = DEFAULT_POLICY
    aug_strength: dict = field(default_factory=dict)
    enable_NA: bool = True
    enable_DA: bool = True
    outer_repeats: int = 1
    seed: int = 0
    arch: str = "convnet-3"
    code_bits: int = 32
    match_on: str = "decoded"  # "decoded" images or raw "canvas"
    dtype: str = "float32"

    def __post_init__(self):
        self.aug_policy = tuple(self.aug_policy)
        if self.iterations < 1 or self.outer_repeats < 1:
            raise DataValidationError("iterations and outer_repeats must be >= 1")
        if not self.lr_syn >= 0:
            raise DataValidationError("lr_syn must be non-negative")
        if self.ipc < 1 or self.real_batch < 1 or (self.syn_batch is not None and self.syn_batch < 1):
            raise DataValidationError("ipc and batch sizes must be >= 1")
        if self.alpha < 0:
            raise DataValidationError("alpha must be non-negative")
        if self.match_on not in ("decoded", "canvas"):
            raise DataValidationError(f"match_on must be 'decoded' or 'canvas', got {self.match_on!r}")
        parse_policy(self.aug_policy)

    @property
    def effective_alpha(self) -> float:
        return self.alpha if self.enable_NA else 0.0

    @property
    def effective_factor(self) -> int:
        return self.formation_factor if self.enable_DA else 1

    @property
    def perturbation(self) -> PerturbationConfig:
        return PerturbationConfig(alpha=self.effective_alpha, noise_seed=self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["aug_policy"] = list(self.aug_policy)
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class CondenseTrace:
    records: list = field(default_factory=list)

    def append(self, **rec):
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    @property
    def losses(self) -> list[float]:
        return [r["loss"] for r in self.records]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())


def matching_loss(theta_aug: HashNetParams, real_batches: dict, syn_batches: dict, w_per_class: dict,
                  extractor=extract_features) -> torch.Tensor:
    """Sum over classes of the squared distance between mean real and mean synthetic embeddings.

    Real batches are treated as constants; gradients reach only the synthetic tensors.
    """
    if set(real_batches) != set(syn_batches) or set(real_batches) - set(w_per_class):
        raise DataValidationError("real, synthetic and augmentation maps must cover the same classes")
    total = None
    for c in sorted(real_batches):
        w = w_per_class[c]
        with torch.no_grad():
            real_mean = extractor(theta_aug, apply_aug(real_batches[c], w)).mean(dim=0)
        syn_mean = extractor(theta_aug, apply_aug(syn_batches[c], w)).mean(dim=0)
        term = ((real_mean - syn_mean) ** 2).sum()
        total = term if total is None else total + term
    if total is None:
        raise DataValidationError("no classes to match")
    return total


def _seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def init_canvases(ds: LabeledDataset, ipc: int, formation: FormationConfig, rng: torch.Generator) -> torch.Tensor:
    """Real-image initialization: ``ipc`` canvases per class, each packed from ``f*f`` real images."""
    canvases = []
    need = ipc * formation.patch_count
    for c in range(ds.num_classes):
        pop = len(ds.class_index[c])
        if need <= pop:
            imgs = sample_class_batch(ds, c, need, rng)
        else:
            # small classes: reuse rows rather than fail
            idx = torch.as_tensor(ds.class_index[c])[torch.randint(pop, (need,), generator=rng)]
            imgs = ds.images[idx]
        canvases.append(assemble_batch(imgs, formation))
    return torch.cat(canvases).detach().clone()


def condense(ds: LabeledDataset, cfg: CondenseConfig, method: str | None = None, callback=None):
    """Optimize a synthetic set for ``ds``; returns ``(SyntheticSet, CondenseTrace)``.

    ``callback(iteration, elapsed_seconds, pixels)`` is invoked once before the
    first update (iteration 0) and after every update, with a detached view of
    the current pixels; its own run time is excluded from the recorded clock.
    """
    if ds.split_tag != "train":
        raise DataValidationError(f"condense expects the train split, got {ds.split_tag!r}")
    if cfg.ipc * ds.num_classes >= len(ds):
        raise DataValidationError("synthetic set would not be smaller than the real set")
    dtype = getattr(torch, cfg.dtype)
    formation = FormationConfig(cfg.effective_factor, ds.image_side)
    init_seed, sample_seed, noise_seed, aug_seed, net_seed = _seeds(cfg.seed, 5)
    sample_rng = torch.Generator().manual_seed(sample_seed)
    noise_rng = torch.Generator().manual_seed(noise_seed)
    aug_rng = torch.Generator().manual_seed(aug_seed)

    pixels = init_canvases(ds, cfg.ipc, formation, torch.Generator().manual_seed(init_seed)).to(dtype)
    pixels.requires_grad_(True)
    opt = torch.optim.SGD([pixels], lr=cfg.lr_syn, momentum=cfg.momentum)
    pert = cfg.perturbation

    trace = CondenseTrace()
    clock = 0.0
    it = 0
    if callback is not None:
        callback(0, 0.0, pixels.detach())
    for repeat, net in enumerate(_seeds(net_seed, cfg.outer_repeats)):
        theta_init = init_network(cfg.arch, cfg.code_bits, net, channels=ds.channels,
                                  image_side=ds.image_side).to(dtype)
        for _ in range(cfg.iterations):
            t0 = time.perf_counter()
            theta_aug = perturb(theta_init, pert, rng=noise_rng) if pert.alpha > 0 else theta_init
            real_b, syn_b, ws = {}, {}, {}
            for c in range(ds.num_classes):
                real_b[c] = sample_class_batch(ds, c, min(cfg.real_batch, len(ds.class_index[c])),
                                               sample_rng).to(dtype)
                canv = pixels[c * cfg.ipc:(c + 1) * cfg.ipc]
                if cfg.syn_batch is not None and cfg.syn_batch < cfg.ipc:
                    pick = torch.randperm(cfg.ipc, generator=sample_rng)[:cfg.syn_batch]
                    canv = canv[pick]
                syn_b[c] = decode_batch(canv, formation) if cfg.match_on == "decoded" else canv
                ws[c] = sample_aug(cfg.aug_policy, cfg.aug_strength, aug_rng)
            loss = matching_loss(theta_aug, real_b, syn_b, ws)
            if not torch.isfinite(loss):
                raise CondensationError(f"non-finite matching loss {loss.item()} at iteration {it} "
                                        f"(lr_syn={cfg.lr_syn}, alpha={pert.alpha})")
            opt.zero_grad()
            loss.backward()
            grad_norm = float(pixels.grad.norm())
            opt.step()
            clock += time.perf_counter() - t0
            trace.append(iteration=it, repeat=repeat, loss=float(loss.detach()), seconds=clock, grad_norm=grad_norm)
            it += 1
            if callback is not None:
                callback(it, clock, pixels.detach())

    provenance = {
        "method": method or ("iem" if (cfg.enable_NA or cfg.enable_DA) else "dm-plain"),
        "seed": cfg.seed,
        "iterations": it,
        "config_hash": cfg.config_hash(),
        "config": cfg.to_dict(),
        "alpha": pert.alpha,
        "formation_factor": formation.factor,
        "ratio": cfg.ipc * ds.num_classes / len(ds),
        "dataset": ds.name,
        "train_count": len(ds),
    }
    out = SyntheticSet.from_pixels(pixels.detach().float().clone(), cfg.ipc, formation_factor=formation.factor,
                                   norm_stats=ds.norm_stats, provenance=provenance)
    return out, trace


def condense_dm_baseline(ds: LabeledDataset, cfg: CondenseConfig, callback=None):
    """Plain distribution matching: no weight perturbation, single formation."""
    return condense(ds, replace(cfg, enable_NA=False, enable_DA=False), method="dm-plain", callback=callback)
