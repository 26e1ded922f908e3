"""Real datasets, class-partitioned sampling, and the synthetic-set archive format.

Images are stored normalized (per-channel z-score with statistics taken from
the train split). Two on-disk layouts are understood by :func:`load_dataset`:

* ``cifar10`` -- the native python batches in ``<root>/cifar-10-batches-py``.
* anything else -- an image folder ``<root>/<name>/<split>/<class>/*.png``
  where class directories are sorted by name to assign integer labels.
  ``database`` falls back to ``train`` and ``query`` to ``test`` when those
  directories are absent.

``digits`` is a built-in offline dataset (scikit-learn's 8x8 handwritten
digits, upsampled to 16x16) used by the desk-scale demos.
"""

from __future__ import annotations

import hashlib
import json
import os
import pickle
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

SPLITS = ("train", "database", "query")
ARCHIVE_SCHEMA_VERSION = 1
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}


class DataValidationError(ValueError):
    """Dataset contents or arguments violate a contract."""


class ArchiveCorruptionError(IOError):
    """Manifest and payload of an archive disagree."""


class ArchiveVersionError(IOError):
    """Archive written with an unsupported schema version."""


def data_root(root=None) -> Path:
    if root is not None:
        return Path(root)
    return Path(os.environ.get("DATA_ROOT", "data"))


@dataclass
class NormStats:
    mean: tuple[float, ...]
    std: tuple[float, ...]

    def normalize(self, raw: torch.Tensor) -> torch.Tensor:
        mean, std = self._shaped(raw)
        return (raw - mean) / std

    def denormalize(self, x: torch.Tensor) -> torch.Tensor:
        mean, std = self._shaped(x)
        return x * std + mean

    def _shaped(self, x):
        mean = torch.tensor(self.mean, dtype=x.dtype).view(1, -1, 1, 1)
        std = torch.tensor(self.std, dtype=x.dtype).view(1, -1, 1, 1)
        return mean, std

    @classmethod
    def from_images(cls, raw: torch.Tensor) -> "NormStats":
        x = raw.double()
        mean = x.mean(dim=(0, 2, 3))
        std = x.std(dim=(0, 2, 3)).clamp_min(1e-6)
        return cls(tuple(float(m) for m in mean), tuple(float(s) for s in std))

    def to_dict(self):
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["mean"]), tuple(d["std"]))


@dataclass
class LabeledDataset:
    images: torch.Tensor  # (n, channels, h, w), normalized float32
    labels: torch.Tensor  # (n,), int64
    num_classes: int
    split_tag: str
    norm_stats: NormStats
    name: str = "unnamed"
    class_index: dict[int, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DataValidationError(f"images must be 4-D, got shape {tuple(self.images.shape)}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise DataValidationError("images and labels disagree in count")
        if self.split_tag not in SPLITS:
            raise DataValidationError(f"unknown split {self.split_tag!r}")
        if self.num_classes < 1:
            raise DataValidationError("dataset has zero classes")
        if len(self.labels) and (int(self.labels.min()) < 0 or int(self.labels.max()) >= self.num_classes):
            raise DataValidationError(f"label outside [0, {self.num_classes})")
        if not self.class_index:
            labels = self.labels.numpy()
            self.class_index = {c: np.flatnonzero(labels == c).tolist() for c in range(self.num_classes)}

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def channels(self) -> int:
        return int(self.images.shape[1])

    @property
    def image_side(self) -> int:
        return int(self.images.shape[-1])

    def class_sizes(self) -> list[int]:
        return [len(self.class_index[c]) for c in range(self.num_classes)]

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(self.images.contiguous().numpy().tobytes())
        h.update(self.labels.numpy().astype("<i8").tobytes())
        return h.hexdigest()

    def subset_per_class(self, limit: int, split_tag: str | None = None, offset: int = 0) -> "LabeledDataset":
        """Keep rows ``offset .. offset+limit`` of every class, in original order."""
        rows = sorted(i for c in range(self.num_classes) for i in self.class_index[c][offset:offset + limit])
        return self.take(rows, split_tag)

    def take(self, rows, split_tag: str | None = None) -> "LabeledDataset":
        rows = torch.as_tensor(list(rows), dtype=torch.long)
        return LabeledDataset(self.images[rows].clone(), self.labels[rows].clone(), self.num_classes,
                              split_tag or self.split_tag, self.norm_stats, self.name)


def sample_class_batch(ds: LabeledDataset, class_id: int, batch: int, rng: torch.Generator) -> torch.Tensor:
    """Draw ``batch`` distinct images of one class."""
    if not 0 <= class_id < ds.num_classes:
        raise DataValidationError(f"class {class_id} outside [0, {ds.num_classes})")
    rows = ds.class_index[class_id]
    if batch > len(rows):
        raise DataValidationError(f"batch {batch} exceeds class {class_id} population {len(rows)}")
    if batch < 0:
        raise DataValidationError("negative batch")
    perm = torch.randperm(len(rows), generator=rng)[:batch]
    idx = torch.as_tensor(rows, dtype=torch.long)[perm]
    return ds.images[idx]


# --------------------------------------------------------------------------
# loading

def load_dataset(root, name: str, split: str, per_class_limit: int | None = None) -> LabeledDataset:
    """Load ``split`` of dataset ``name`` and normalize it with train-split statistics."""
    if split not in SPLITS:
        raise DataValidationError(f"unknown split {split!r}")
    root = data_root(root)
    if name == "digits":
        raw, labels, c, train_raw = _load_digits(split)
    elif name == "cifar10":
        raw, labels, c, train_raw = _load_cifar10(root, split)
    else:
        raw, labels, c, train_raw = _load_image_folder(root / name, split)
    if per_class_limit is not None:
        keep = np.sort(np.concatenate([np.flatnonzero(labels == k)[:per_class_limit] for k in range(c)]))
        raw, labels = raw[keep], labels[keep]
        if split in ("train", "database"):
            train_raw = raw
    stats = NormStats.from_images(torch.from_numpy(train_raw))
    images = stats.normalize(torch.from_numpy(raw)).float()
    return LabeledDataset(images, torch.from_numpy(labels.astype(np.int64)), c, split, stats, name)


def _load_cifar10(root: Path, split: str):
    base = root / "cifar-10-batches-py"
    if not base.is_dir():
        raise FileNotFoundError(f"CIFAR-10 batches not found at {base}; run scripts/fetch_cifar10.py")

    def read(files):
        xs, ys = [], []
        for fname in files:
            with open(base / fname, "rb") as fh:
                d = pickle.load(fh, encoding="bytes")
            xs.append(np.asarray(d[b"data"], dtype=np.uint8).reshape(-1, 3, 32, 32))
            ys.append(np.asarray(d[b"labels"], dtype=np.int64))
        return np.concatenate(xs).astype(np.float32) / 255.0, np.concatenate(ys)

    train_x, train_y = read([f"data_batch_{i}" for i in range(1, 6)])
    if split == "query":
        x, y = read(["test_batch"])
    else:
        x, y = train_x, train_y
    if y.size and (y.min() < 0 or y.max() >= 10):
        raise DataValidationError("CIFAR-10 label outside [0, 10)")
    return x, y, 10, train_x


def _load_digits(split: str):
    from sklearn.datasets import load_digits

    d = load_digits()
    x = torch.from_numpy(d.images.astype(np.float32) / 16.0).unsqueeze(1)
    x = torch.nn.functional.interpolate(x, size=(16, 16), mode="bilinear", align_corners=True).numpy()
    y = d.target.astype(np.int64)
    # fixed interleaved split: every 4th sample of a class is held out for queries
    order = np.zeros(len(y), dtype=np.int64)
    for c in range(10):
        rows = np.flatnonzero(y == c)
        order[rows] = np.arange(len(rows))
    train_mask = order % 4 != 3
    xs, ys = (x[train_mask], y[train_mask]) if split != "query" else (x[~train_mask], y[~train_mask])
    return xs, ys, 10, x[train_mask]


def _split_dir(base: Path, split: str) -> Path:
    fallback = {"database": "train", "query": "test"}
    for cand in (split, fallback.get(split)):
        if cand and (base / cand).is_dir():
            return base / cand
    raise FileNotFoundError(f"no directory for split {split!r} under {base}")


def _read_folder(split_dir: Path):
    from PIL import Image

    classes = sorted(p.name for p in split_dir.iterdir() if p.is_dir())
    if not classes:
        raise DataValidationError(f"zero classes found in {split_dir}")
    xs, ys = [], []
    for label, cname in enumerate(classes):
        for f in sorted((split_dir / cname).iterdir()):
            if f.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            with Image.open(f) as im:
                arr = np.asarray(im, dtype=np.float32) / 255.0
            arr = arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1)
            xs.append(arr)
            ys.append(label)
    if not xs:
        raise DataValidationError(f"no images found in {split_dir}")
    return np.stack(xs), np.asarray(ys, dtype=np.int64), len(classes)


def _load_image_folder(base: Path, split: str):
    if not base.exists():
        raise FileNotFoundError(f"dataset directory {base} does not exist")
    train_dir = _split_dir(base, "train")
    train_x, train_y, c = _read_folder(train_dir)
    split_dir = _split_dir(base, split)
    if split_dir == train_dir:
        return train_x, train_y, c, train_x
    x, y, c_split = _read_folder(split_dir)
    if c_split != c:
        raise DataValidationError(f"split {split!r} has {c_split} classes, train has {c}")
    return x, y, c, train_x


# --------------------------------------------------------------------------
# synthetic sets and the manifest+blob container

@dataclass
class SyntheticSet:
    pixels: torch.Tensor  # (c * ipc, channels, l, l), normalized space
    labels: torch.Tensor
    ipc: int
    formation_factor: int = 1
    norm_stats: NormStats | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.pixels.shape[0]
        if self.ipc < 1 or n % self.ipc:
            raise DataValidationError(f"{n} images is not a multiple of ipc={self.ipc}")
        expected = torch.arange(n // self.ipc).repeat_interleave(self.ipc)
        if not torch.equal(self.labels.long(), expected):
            raise DataValidationError("labels must be sorted by class with exactly ipc per class")
        if self.formation_factor < 1 or self.image_side % self.formation_factor:
            raise DataValidationError(
                f"formation factor {self.formation_factor} does not divide image side {self.image_side}")
        ratio = self.provenance.get("ratio")
        if ratio is not None and not ratio < 1:
            raise DataValidationError(f"synthetic set must be smaller than the real set (ratio {ratio})")

    def __len__(self):
        return self.pixels.shape[0]

    @property
    def num_classes(self) -> int:
        return self.pixels.shape[0] // self.ipc

    @property
    def channels(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def image_side(self) -> int:
        return int(self.pixels.shape[-1])

    @classmethod
    def from_pixels(cls, pixels, ipc, **kw):
        labels = torch.arange(pixels.shape[0] // ipc).repeat_interleave(ipc)
        return cls(pixels, labels, ipc, **kw)

    def exported(self) -> torch.Tensor:
        """Pixels clamped to the normalized image of [0, 1]."""
        if self.norm_stats is None:
            return self.pixels.clone()
        raw = self.norm_stats.denormalize(self.pixels.double()).clamp(0.0, 1.0)
        return self.norm_stats.normalize(raw).float()


def _write_container(path, manifest: dict, array: np.ndarray):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blob = np.ascontiguousarray(array, dtype="<f4").tobytes()
    (path / "payload.bin").write_bytes(blob)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def _read_container(path):
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("schema_version") != ARCHIVE_SCHEMA_VERSION:
        raise ArchiveVersionError(f"unsupported schema_version {manifest.get('schema_version')!r}")
    if manifest.get("dtype") != "float32" or manifest.get("byte_order") != "little":
        raise ArchiveCorruptionError("payload must be little-endian float32")
    blob = (path / "payload.bin").read_bytes()
    return manifest, blob


def save_synthetic(s: SyntheticSet, path):
    """Write ``s`` as ``manifest.json`` + ``payload.bin`` under directory ``path``."""
    manifest = {
        "schema": "synthetic",
        "schema_version": ARCHIVE_SCHEMA_VERSION,
        "c": s.num_classes,
        "ipc": s.ipc,
        "channels": s.channels,
        "image_side": s.image_side,
        "formation_factor": s.formation_factor,
        "norm_stats": s.norm_stats.to_dict() if s.norm_stats else None,
        "provenance": s.provenance,
        "byte_order": "little",
        "dtype": "float32",
    }
    return _write_container(path, manifest, s.pixels.detach().cpu().numpy())


def load_synthetic(path) -> SyntheticSet:
    manifest, blob = _read_container(path)
    if manifest.get("schema") != "synthetic":
        raise ArchiveCorruptionError(f"archive schema is {manifest.get('schema')!r}, expected 'synthetic'")
    shape = (manifest["c"] * manifest["ipc"], manifest["channels"], manifest["image_side"], manifest["image_side"])
    if len(blob) != int(np.prod(shape)) * 4:
        raise ArchiveCorruptionError(f"payload has {len(blob)} bytes, manifest implies {int(np.prod(shape)) * 4}")
    pixels = torch.from_numpy(np.frombuffer(blob, dtype="<f4").reshape(shape).astype(np.float32))
    stats = NormStats.from_dict(manifest["norm_stats"]) if manifest.get("norm_stats") else None
    return SyntheticSet.from_pixels(pixels, manifest["ipc"], formation_factor=manifest["formation_factor"],
                                    norm_stats=stats, provenance=manifest.get("provenance") or {})


def write_tensor_container(path, schema: str, tensors: dict[str, torch.Tensor], meta: dict):
    """Generic named-tensor container (used for parameter checkpoints)."""
    layout, offset, chunks = [], 0, []
    for name, t in tensors.items():
        arr = t.detach().cpu().numpy().astype("<f4").ravel()
        layout.append({"name": name, "shape": list(t.shape), "offset": offset, "count": int(arr.size)})
        offset += arr.size
        chunks.append(arr)
    manifest = {"schema": schema, "schema_version": ARCHIVE_SCHEMA_VERSION, "byte_order": "little",
                "dtype": "float32", "tensors": layout, "meta": meta}
    flat = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f4")
    return _write_container(path, manifest, flat)


def read_tensor_container(path, schema: str):
    manifest, blob = _read_container(path)
    if manifest.get("schema") != schema:
        raise ArchiveCorruptionError(f"archive schema is {manifest.get('schema')!r}, expected {schema!r}")
    total = sum(t["count"] for t in manifest["tensors"])
    if len(blob) != total * 4:
        raise ArchiveCorruptionError(f"payload has {len(blob)} bytes, manifest implies {total * 4}")
    flat = np.frombuffer(blob, dtype="<f4")
    out = {}
    for t in manifest["tensors"]:
        arr = flat[t["offset"]:t["offset"] + t["count"]].reshape(t["shape"]).astype(np.float32)
        out[t["name"]] = torch.from_numpy(arr)
    return out, manifest["meta"]


def write_toy_image_folder(root, name="toy", num_classes=3, per_class=10, side=8, channels=3,
                           seed=0, splits=("train", "test")):
    """Write a small class-separable PNG corpus in the image-folder layout."""
    from PIL import Image

    rng = np.random.default_rng(seed)
    base = Path(root) / name
    protos = rng.uniform(0.2, 0.8, size=(num_classes, channels, side, side))
    for split in splits:
        for c in range(num_classes):
            d = base / split / f"class_{c:02d}"
            d.mkdir(parents=True, exist_ok=True)
            for k in range(per_class):
                img = np.clip(protos[c] + rng.normal(0, 0.08, size=protos[c].shape), 0, 1)
                arr = (img * 255).round().astype(np.uint8).transpose(1, 2, 0)
                Image.fromarray(arr.squeeze(-1) if channels == 1 else arr).save(d / f"{k:04d}.png")
    return base
