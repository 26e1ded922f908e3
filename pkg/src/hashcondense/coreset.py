"""Coreset baselines: uniform random selection and greedy herding."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch

from .data import DataValidationError, LabeledDataset, SyntheticSet
from .models import HashNetParams, extract_features


@dataclass
class CoresetResult:
    selected_indices: dict  # class id -> list of row indices into the train split
    method: str
    feature_source: dict = field(default_factory=dict)

    def __post_init__(self):
        sizes = {len(v) for v in self.selected_indices.values()}
        if len(sizes) > 1:
            raise DataValidationError("every class must select the same number of rows")
        for c, rows in self.selected_indices.items():
            if len(set(rows)) != len(rows):
                raise DataValidationError(f"duplicate rows selected for class {c}")

    @property
    def ipc(self) -> int:
        return len(next(iter(self.selected_indices.values())))

    def to_json(self) -> str:
        return json.dumps({"method": self.method, "feature_source": self.feature_source,
                           "selected_indices": {str(c): list(map(int, v))
                                                for c, v in sorted(self.selected_indices.items())}},
                          indent=2)

    @classmethod
    def from_json(cls, text: str) -> "CoresetResult":
        d = json.loads(text)
        return cls({int(c): v for c, v in d["selected_indices"].items()}, d["method"], d["feature_source"])

    def to_synthetic(self, ds: LabeledDataset, seed: int | None = None) -> SyntheticSet:
        """Materialize the selected real rows as a single-formation synthetic set."""
        rows = [r for c in sorted(self.selected_indices) for r in self.selected_indices[c]]
        for c in sorted(self.selected_indices):
            if any(ds.labels[r] != c for r in self.selected_indices[c]):
                raise DataValidationError(f"row selected for class {c} carries another label")
        prov = {"method": self.method, "seed": seed, "iterations": 0, "ratio": len(rows) / len(ds),
                "dataset": ds.name, "train_count": len(ds), "feature_source": self.feature_source}
        return SyntheticSet.from_pixels(ds.images[rows].clone(), self.ipc, formation_factor=1,
                                        norm_stats=ds.norm_stats, provenance=prov)


def _check_ipc(ds: LabeledDataset, ipc: int):
    smallest = min(ds.class_sizes())
    if not 1 <= ipc <= smallest:
        raise DataValidationError(f"ipc={ipc} must be in [1, {smallest}] (smallest class population)")


def select_random(ds: LabeledDataset, ipc: int, seed: int) -> CoresetResult:
    _check_ipc(ds, ipc)
    rng = np.random.default_rng(seed)
    picked = {c: [int(ds.class_index[c][i]) for i in rng.permutation(len(ds.class_index[c]))[:ipc]]
              for c in range(ds.num_classes)}
    return CoresetResult(picked, "random", {"seed": seed})


def herding_order(features: np.ndarray, k: int) -> list[int]:
    """Greedy positions whose running mean tracks the mean of ``features``.

    At step t the candidate minimizing ``||mu - (sum_selected + x) / t||`` is
    added; ties go to the lowest position.
    """
    feats = np.asarray(features, dtype=np.float64)
    mu = feats.mean(axis=0)
    chosen, acc = [], np.zeros_like(mu)
    available = np.ones(len(feats), dtype=bool)
    for t in range(1, k + 1):
        dist = np.linalg.norm(mu - (acc + feats) / t, axis=1)
        dist[~available] = np.inf
        # distances equal up to rounding count as ties; the lowest position wins
        best = int(np.flatnonzero(dist <= dist.min() * (1 + 1e-12) + 1e-15)[0])
        chosen.append(best)
        available[best] = False
        acc += feats[best]
    return chosen


def select_herding(ds: LabeledDataset, ipc: int, theta: HashNetParams, seed: int = 0,
                   batch: int = 500) -> CoresetResult:
    """Per-class herding in the embedding space of ``theta``."""
    _check_ipc(ds, ipc)
    picked = {}
    with torch.no_grad():
        for c in range(ds.num_classes):
            rows = ds.class_index[c]
            imgs = ds.images[rows]
            feats = torch.cat([extract_features(theta, imgs[i:i + batch]) for i in range(0, len(rows), batch)])
            picked[c] = [int(rows[i]) for i in herding_order(feats.double().numpy(), ipc)]
    return CoresetResult(picked, "herding", {"arch": theta.arch.name, "net_seed": theta.meta.get("seed"),
                                             "seed": seed})
