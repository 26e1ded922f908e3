"""Sign binarization, packed Hamming ranking and mAP."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np


class RetrievalError(ValueError):
    pass


@dataclass
class BinaryCodes:
    words: np.ndarray  # (n, ceil(K / 64)) uint64, bit b of a row lives in word b // 64
    code_bits: int
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.words = np.ascontiguousarray(self.words, dtype=np.uint64)
        if self.words.ndim != 2 or self.words.shape[1] != -(-self.code_bits // 64):
            raise RetrievalError(f"packed shape {self.words.shape} inconsistent with K={self.code_bits}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if len(self.labels) != len(self.words):
                raise RetrievalError("labels and codes disagree in count")

    def __len__(self):
        return self.words.shape[0]

    def bits(self) -> np.ndarray:
        """Unpacked ``(n, K)`` 0/1 matrix."""
        b = np.arange(self.code_bits)
        return ((self.words[:, b // 64] >> (b % 64).astype(np.uint64)) & np.uint64(1)).astype(np.uint8)

    def signs(self) -> np.ndarray:
        return self.bits().astype(np.int64) * 2 - 1

    def __getitem__(self, idx):
        idx = np.atleast_1d(np.arange(len(self))[idx])
        return BinaryCodes(self.words[idx], self.code_bits, None if self.labels is None else self.labels[idx])


def pack_bits(bits: np.ndarray) -> np.ndarray:
    bits = np.asarray(bits).astype(np.uint64)
    n, k = bits.shape
    words = np.zeros((n, -(-k // 64)), dtype=np.uint64)
    for b in range(k):
        words[:, b // 64] |= bits[:, b] << np.uint64(b % 64)
    return words


def binarize(v, labels=None) -> BinaryCodes:
    """Bit ``b`` is 1 iff ``v[:, b] >= 0``; exact zeros map to 1."""
    v = np.asarray(v.detach().cpu() if hasattr(v, "detach") else v)
    if v.ndim == 1:
        v = v[None]
    return BinaryCodes(pack_bits(v >= 0), v.shape[1], labels)


def hamming_distances(queries: BinaryCodes, db: BinaryCodes) -> np.ndarray:
    """``(len(queries), len(db))`` popcount distances."""
    if queries.code_bits != db.code_bits:
        raise RetrievalError(f"code length mismatch: {queries.code_bits} vs {db.code_bits}")
    x = queries.words[:, None, :] ^ db.words[None, :, :]
    return np.bitwise_count(x).sum(axis=-1, dtype=np.int64)


def hamming_rank(query: BinaryCodes, db: BinaryCodes) -> np.ndarray:
    """Database indices by ascending distance; ties keep ascending index order."""
    if len(query) != 1:
        raise RetrievalError("hamming_rank takes a single query row")
    return np.argsort(hamming_distances(query, db)[0], kind="stable")


@dataclass
class EvalReport:
    map_value: float
    code_bits: int
    query_count: int
    database_count: int
    top_k: int | None = None
    precision_at_k: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.map_value <= 1.0:
            raise RetrievalError(f"mAP {self.map_value} outside [0, 1]")

    def to_dict(self):
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["precision_at_k"] = {int(k): v for k, v in d.get("precision_at_k", {}).items()}
        return cls(**d)


def average_precision(relevance: np.ndarray) -> np.ndarray:
    """AP of each row of a ranked 0/1 relevance matrix; rows with no hits score 0."""
    rel = np.atleast_2d(relevance).astype(np.float64)
    hits = np.cumsum(rel, axis=1)
    ranks = np.arange(1, rel.shape[1] + 1)
    n_rel = rel.sum(axis=1)
    summed = (hits / ranks * rel).sum(axis=1)
    return np.divide(summed, n_rel, out=np.zeros_like(summed), where=n_rel > 0)


def mean_average_precision(queries: BinaryCodes, db: BinaryCodes, top_k: int | None = None,
                           precision_ks=(), chunk: int = 512, provenance: dict | None = None) -> EvalReport:
    """mAP over the Hamming ranking of ``db`` for each query, relevance = same label.

    ``top_k=None`` ranks the whole database.
    """
    if len(db) == 0:
        raise RetrievalError("empty database")
    if queries.labels is None or db.labels is None:
        raise RetrievalError("queries and database need labels")
    depth = len(db) if top_k is None else min(int(top_k), len(db))
    ks = [k for k in precision_ks if k <= len(db)]
    ap_sum, prec_sum = 0.0, np.zeros(len(ks))
    for start in range(0, len(queries), chunk):
        q = queries[start:start + chunk]
        order = np.argsort(hamming_distances(q, db), axis=1, kind="stable")
        rel = db.labels[order] == q.labels[:, None]
        ap_sum += float(average_precision(rel[:, :depth]).sum())
        for j, k in enumerate(ks):
            prec_sum[j] += rel[:, :k].mean(axis=1).sum()
    nq = len(queries)
    return EvalReport(
        map_value=ap_sum / nq if nq else 0.0,
        code_bits=queries.code_bits,
        query_count=nq,
        database_count=len(db),
        top_k=top_k,
        precision_at_k={k: float(prec_sum[j] / nq) for j, k in enumerate(ks)} if nq else {},
        provenance=dict(provenance or {}),
    )
