"""Experiment specs and the condense / evaluate / ablate / timing / generalize runners.

Outputs follow ``{output_dir}/{dataset}/{method}/{ipc}ipc/{seed}/`` with an
``archive/`` (manifest + payload), ``trace.jsonl``, ``result.json`` and a
plain-text ``result.txt`` per run.
"""

from __future__ import annotations

import copy
import glob
import json
import logging
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .condensation import CondenseConfig, condense
from .coreset import CoresetResult, select_herding, select_random
from .data import LabeledDataset, SyntheticSet, load_dataset, load_synthetic, save_synthetic
from .hashing import HashLossConfig, encode, train_hash
from .models import ConfigError, init_network
from .retrieval import EvalReport, binarize, mean_average_precision

log = logging.getLogger(__name__)

METHODS = ("iem", "dm-plain", "random", "herding")
ABLATION_CELLS = ((False, False), (True, False), (False, True), (True, True))


@dataclass
class ExperimentSpec:
    dataset: str = "cifar10"
    data_root: str | None = None
    per_class_limit: int | None = None  # reduce the train split
    query_per_class: int | None = None  # reduce the query split
    database: str = "train"  # "train": whole train split; "rest": train rows beyond per_class_limit
    ipc: int = 10
    method: str = "iem"
    arch: str = "convnet-3"
    code_bits: list = field(default_factory=lambda: [32])
    seeds: list = field(default_factory=lambda: [0])
    eval_top_k: int | None = None
    precision_ks: list = field(default_factory=lambda: [100])
    output_dir: str | None = None
    condense: CondenseConfig = field(default_factory=CondenseConfig)
    hashing: HashLossConfig = field(default_factory=HashLossConfig)
    timing: dict = field(default_factory=lambda: {"methods": ["iem", "dm-plain"], "checkpoint_seconds": 60.0,
                                                  "budget_seconds": 300.0})
    loss_plugins: list = field(default_factory=lambda: ["center", "center-no-quant"])

    def __post_init__(self):
        if isinstance(self.condense, dict):
            self.condense = CondenseConfig(**self.condense)
        if isinstance(self.hashing, dict):
            self.hashing = HashLossConfig(**self.hashing)
        self.code_bits = list(self.code_bits) if isinstance(self.code_bits, (list, tuple)) else [self.code_bits]
        self.seeds = list(self.seeds)
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.database not in ("train", "rest"):
            raise ConfigError("database must be 'train' or 'rest'")
        if self.database == "rest" and self.per_class_limit is None:
            raise ConfigError("database='rest' needs per_class_limit")
        if self.ipc < 1:
            raise ConfigError("ipc must be >= 1")

    @property
    def out_root(self) -> Path:
        return Path(self.output_dir or os.environ.get("OUTPUT_ROOT", "outputs"))

    def run_dir(self, method: str, seed: int, tag: str = "") -> Path:
        return self.out_root / self.dataset / (method + tag) / f"{self.ipc}ipc" / str(seed)

    def to_dict(self) -> dict:
        d = {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self)}
        d["condense"] = self.condense.to_dict()
        d["hashing"] = self.hashing.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown spec keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path, overrides=()) -> "ExperimentSpec":
        d = json.loads(Path(path).read_text()) if path else {}
        return cls.from_dict(apply_overrides(d, overrides))


def apply_overrides(d: dict, overrides) -> dict:
    """Apply ``dotted.path=value`` strings; values parse as JSON when they can."""
    d = copy.deepcopy(d)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = d
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return d


# --------------------------------------------------------------------------
# data

_CACHE: dict = {}


def load_splits(spec: ExperimentSpec) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """(train, database, query) for ``spec``; cached per process."""
    key = (spec.dataset, spec.data_root, spec.per_class_limit, spec.query_per_class, spec.database)
    if key in _CACHE:
        return _CACHE[key]
    if spec.database == "rest":
        full = load_dataset(spec.data_root, spec.dataset, "train")
        train = full.subset_per_class(spec.per_class_limit, "train")
        database = full.subset_per_class(10 ** 9, "database", offset=spec.per_class_limit)
    else:
        train = load_dataset(spec.data_root, spec.dataset, "train", spec.per_class_limit)
        database = replace(train, split_tag="database", class_index={})
    query = load_dataset(spec.data_root, spec.dataset, "query")
    if spec.per_class_limit is not None or spec.database == "rest":
        # normalize queries with the same statistics as the train split
        query = replace(query, images=train.norm_stats.normalize(query.norm_stats.denormalize(query.images)),
                        norm_stats=train.norm_stats)
    if spec.query_per_class is not None:
        query = query.subset_per_class(spec.query_per_class, "query")
    _CACHE[key] = (train, database, query)
    return _CACHE[key]


def clear_cache():
    _CACHE.clear()


# --------------------------------------------------------------------------
# runs

def _write_result(run_dir: Path, result: dict, lines: list[str]):
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "result.json").write_text(json.dumps(result, indent=2, sort_keys=True, default=str))
    (run_dir / "result.txt").write_text("\n".join(lines) + "\n")


def condense_config_for(spec: ExperimentSpec, seed: int, method: str | None = None,
                        na: bool | None = None, da: bool | None = None) -> CondenseConfig:
    method = method or spec.method
    cfg = replace(spec.condense, ipc=spec.ipc, seed=seed, arch=spec.arch)
    if method == "dm-plain":
        cfg = replace(cfg, enable_NA=False, enable_DA=False)
    if na is not None:
        cfg = replace(cfg, enable_NA=na)
    if da is not None:
        cfg = replace(cfg, enable_DA=da)
    return cfg


def cmd_condense(spec: ExperimentSpec, seed: int | None = None, method: str | None = None,
                 na: bool | None = None, da: bool | None = None, tag: str = "") -> Path:
    """Condense the train split and write archive + trace; returns the run directory."""
    seed = spec.seeds[0] if seed is None else seed
    method = method or spec.method
    if method not in ("iem", "dm-plain"):
        raise ConfigError(f"condense runs iem or dm-plain, not {method!r}")
    train, _, _ = load_splits(spec)
    cfg = condense_config_for(spec, seed, method, na, da)
    syn, trace = condense(train, cfg, method=method)
    run_dir = spec.run_dir(method, seed, tag)
    exported = replace(syn, pixels=syn.exported())
    save_synthetic(exported, run_dir / "archive")
    trace.write(run_dir / "trace.jsonl")
    prov = syn.provenance
    result = {"command": "condense", "archive": str(run_dir / "archive"), "provenance": prov,
              "final_loss": trace.losses[-1], "initial_loss": trace.losses[0], "seconds": trace.records[-1]["seconds"]}
    _write_result(run_dir, result, [
        f"method      {prov['method']}",
        f"dataset     {prov['dataset']}  ({prov['train_count']} train images)",
        f"ipc         {cfg.ipc}  ratio {100 * prov['ratio']:.2f}%",
        f"NA/DA       alpha={prov['alpha']}  f={prov['formation_factor']}",
        f"iterations  {prov['iterations']}  loss {trace.losses[0]:.4f} -> {trace.losses[-1]:.4f}",
    ])
    log.info("condensed %s seed %d -> %s", method, seed, run_dir)
    return run_dir


def cmd_baseline(spec: ExperimentSpec, seed: int | None = None, method: str | None = None) -> Path:
    """Random or herding coreset, exported as JSON and as a single-formation archive."""
    seed = spec.seeds[0] if seed is None else seed
    method = method or spec.method
    train, _, _ = load_splits(spec)
    if method == "random":
        res = select_random(train, spec.ipc, seed)
    elif method == "herding":
        theta = init_network(spec.arch, spec.code_bits[0], seed, train.channels, train.image_side)
        res = select_herding(train, spec.ipc, theta, seed)
    else:
        raise ConfigError(f"baseline runs random or herding, not {method!r}")
    run_dir = spec.run_dir(method, seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "coreset.json").write_text(res.to_json())
    syn = res.to_synthetic(train, seed)
    save_synthetic(syn, run_dir / "archive")
    _write_result(run_dir, {"command": "baseline", "archive": str(run_dir / "archive"), "provenance": syn.provenance},
                  [f"method  {method}", f"ipc     {spec.ipc}  ratio {100 * syn.provenance['ratio']:.2f}%"])
    return run_dir


def _as_train_set(archive_or_set, spec):
    if isinstance(archive_or_set, (SyntheticSet, LabeledDataset)):
        return archive_or_set
    if archive_or_set == "whole":
        return load_splits(spec)[0]
    path = Path(archive_or_set)
    if (path / "archive").is_dir():
        path = path / "archive"
    if (path / "coreset.json").is_file() or path.suffix == ".json":
        cjson = path / "coreset.json" if path.is_dir() else path
        return CoresetResult.from_json(cjson.read_text()).to_synthetic(load_splits(spec)[0])
    return load_synthetic(path)


def evaluate_set(train_set, spec: ExperimentSpec, seed: int, code_bits: int, loss: str | None = None,
                 epochs: int | None = None) -> tuple[EvalReport, object]:
    _, database, query = load_splits(spec)
    hcfg = replace(spec.hashing, code_bits=code_bits, seed=seed)
    if loss is not None:
        hcfg = replace(hcfg, loss=loss)
    if epochs is not None:
        hcfg = replace(hcfg, epochs=epochs)
    model = train_hash(train_set, hcfg, spec.arch)
    db_codes = binarize(encode(model.params, database.images), database.labels.numpy())
    q_codes = binarize(encode(model.params, query.images), query.labels.numpy())
    prov = {"method": model.trained_on.get("method", "whole"), "seed": seed, "trained_on": model.trained_on,
            "hash_loss": hcfg.loss, "hashing": hcfg.to_dict(), "database_checksum": database.checksum()[:16],
            "query_checksum": query.checksum()[:16], "final_train_loss": model.loss_curve[-1] if model.loss_curve
            else None, "dataset": spec.dataset}
    report = mean_average_precision(q_codes, db_codes, spec.eval_top_k, spec.precision_ks, provenance=prov)
    return report, model


def cmd_evaluate(archive_or_coreset, spec: ExperimentSpec, seed: int | None = None, loss: str | None = None,
                 out_dir=None) -> list[EvalReport]:
    """Train a hashing model on the given set and report mAP at every requested code length."""
    seed = spec.seeds[0] if seed is None else seed
    train_set = _as_train_set(archive_or_coreset, spec)
    reports = []
    for K in spec.code_bits:
        report, _ = evaluate_set(train_set, spec, seed, K, loss)
        reports.append(report)
    if out_dir is None:
        if isinstance(archive_or_coreset, (str, Path)) and archive_or_coreset != "whole":
            p = Path(archive_or_coreset)
            out_dir = p.parent if p.name == "archive" or p.is_file() else p
        else:
            out_dir = spec.run_dir("whole" if archive_or_coreset == "whole" else "adhoc", seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    suffix = f"_{loss}" if loss else ""
    for r in reports:
        (out_dir / f"report_{r.code_bits}bits{suffix}.json").write_text(r.to_json())
    (out_dir / f"report{suffix}.txt").write_text(
        "\n".join(f"{r.code_bits:3d} bits  mAP {100 * r.map_value:6.2f}  ({r.query_count} queries, "
                  f"{r.database_count} db)" for r in reports) + "\n")
    return reports


def run_method(spec: ExperimentSpec, method: str, seed: int, na=None, da=None, tag="") -> list[EvalReport]:
    """Produce the training set for ``method`` and evaluate it."""
    if method in ("iem", "dm-plain"):
        run_dir = cmd_condense(spec, seed, method, na, da, tag)
    elif method in ("random", "herding"):
        run_dir = cmd_baseline(spec, seed, method)
    elif method == "whole":
        return cmd_evaluate("whole", spec, seed)
    else:
        raise ConfigError(f"unknown method {method!r}")
    return cmd_evaluate(run_dir / "archive", spec, seed)


def _mark(flag: bool) -> str:
    return "✓" if flag else "✗"


def cmd_ablate(spec: ExperimentSpec) -> dict:
    """2x2 grid over network (NA) and dataset (DA) augmentation, mean mAP per cell over seeds."""
    if spec.method != "iem":
        raise ConfigError("ablation runs on method 'iem'")
    K = spec.code_bits[0]
    sub = replace(spec, code_bits=[K])
    rows = []
    for na, da in ABLATION_CELLS:
        per_seed = {}
        for seed in spec.seeds:
            method = "iem" if (na or da) else "dm-plain"
            tag = "" if (na and da) or method == "dm-plain" else f"-na{int(na)}da{int(da)}"
            per_seed[seed] = run_method(sub, method, seed, na, da, tag)[0].map_value
        rows.append({"NA": na, "DA": da, "label": f"({_mark(na)},{_mark(da)})", "per_seed": per_seed,
                     "mean_map": float(np.mean(list(per_seed.values())))})
    table = {"command": "ablate", "code_bits": K, "ipc": spec.ipc, "dataset": spec.dataset, "rows": rows,
             "orderings": ablation_orderings(rows, spec.seeds)}
    out = spec.out_root / spec.dataset / "ablation" / f"{spec.ipc}ipc"
    _write_result(out, table, format_ablation(table).splitlines())
    return table


def ablation_orderings(rows, seeds) -> dict:
    """Per-seed truth of (NA+DA) >= (DA) > (none) and (NA) > (none)."""
    cell = {(r["NA"], r["DA"]): r["per_seed"] for r in rows}
    out = {}
    for s in seeds:
        none, na, da, both = (cell[k][s] for k in ABLATION_CELLS)
        out[s] = {"both>=da>none": bool(both >= da > none), "na>none": bool(na > none)}
    return out


def format_ablation(table) -> str:
    lines = [f"{'Dataset':<14}{'NA':>4}{'DA':>4}{'mAP':>9}"]
    for r in table["rows"]:
        name = f"{table['dataset']} ({table['ipc']} ipc)"
        lines.append(f"{name:<14}{_mark(r['NA']):>4}{_mark(r['DA']):>4}{100 * r['mean_map']:9.2f}")
    return "\n".join(lines)


def cmd_timing(spec: ExperimentSpec, seed: int | None = None) -> dict:
    """mAP at matched wall-clock checkpoints of condensation, one series per method."""
    methods = list(spec.timing.get("methods", ["iem", "dm-plain"]))
    if len(methods) < 2:
        raise ConfigError("timing needs at least two methods")
    spacing = float(spec.timing.get("checkpoint_seconds", 60.0))
    budget = float(spec.timing.get("budget_seconds", 5 * spacing))
    if spacing <= 0 or budget < spacing:
        raise ConfigError("need 0 < checkpoint_seconds <= budget_seconds")
    seed = spec.seeds[0] if seed is None else seed
    train, _, _ = load_splits(spec)
    K = spec.code_bits[0]
    series = {}
    for method in methods:
        cfg = replace(condense_config_for(spec, seed, method), iterations=10 ** 9)
        snaps = []
        targets = [spacing * k for k in range(1, int(budget // spacing) + 1)]

        def on_step(it, clock, pixels):
            if it == 0 or (targets and clock >= targets[0]):
                if it:
                    targets.pop(0)
                snaps.append((clock, it, pixels.clone()))
            if not targets:
                raise _StopCondense

        try:
            condense(train, cfg, method=method, callback=on_step)
        except _StopCondense:
            pass
        points = []
        for clock, it, pixels in snaps:
            s = SyntheticSet.from_pixels(pixels.float(), cfg.ipc, formation_factor=cfg.effective_factor,
                                         norm_stats=train.norm_stats, provenance={"method": method, "iterations": it})
            rep, _ = evaluate_set(replace(s, pixels=s.exported()), spec, seed, K)
            points.append({"seconds": clock, "iteration": it, "map": rep.map_value})
        series[method] = points
    result = {"command": "timing", "seed": seed, "checkpoint_seconds": spacing, "budget_seconds": budget,
              "code_bits": K, "series": series}
    out = spec.out_root / spec.dataset / "timing" / f"{spec.ipc}ipc" / str(seed)
    lines = [f"{'method':<10}{'t (s)':>9}{'iter':>7}{'mAP':>8}"]
    for m, pts in series.items():
        lines += [f"{m:<10}{p['seconds']:9.1f}{p['iteration']:7d}{100 * p['map']:8.2f}" for p in pts]
    _write_result(out, result, lines)
    return result


class _StopCondense(Exception):
    pass


def cmd_generalize(spec: ExperimentSpec, archive, loss_plugins=None, seed: int | None = None) -> dict:
    """Evaluate one condensed set under several hashing losses."""
    plugins = list(spec.loss_plugins if loss_plugins is None else loss_plugins)
    if not plugins:
        raise ConfigError("generalize needs at least one hashing-loss plugin")
    from .hashing import get_loss
    for p in plugins:
        get_loss(p)
    seed = spec.seeds[0] if seed is None else seed
    train_set = _as_train_set(archive, spec)
    K = spec.code_bits[0]
    reports = {p: evaluate_set(train_set, spec, seed, K, loss=p)[0] for p in plugins}
    result = {"command": "generalize", "code_bits": K, "seed": seed,
              "reports": {p: r.to_dict() for p, r in reports.items()}}
    out = spec.out_root / spec.dataset / "generalize" / f"{spec.ipc}ipc" / str(seed)
    _write_result(out, result, [f"{p:<18}{100 * r.map_value:8.2f}" for p, r in reports.items()])
    return result


def cmd_report(root=None, plots: bool = False) -> str:
    """Collect ``report_*bits.json`` files below ``root`` into a method-by-setting summary table."""
    root = Path(root or os.environ.get("OUTPUT_ROOT", "outputs"))
    cells: dict = {}
    for path in glob.glob(str(root / "*" / "*" / "*ipc" / "*" / "report_*bits.json")):
        p = Path(path)
        seed_dir = p.parent
        method, ipc, dataset = seed_dir.parent.parent.name, seed_dir.parent.name, seed_dir.parent.parent.parent.name
        r = EvalReport.from_dict(json.loads(p.read_text()))
        cells.setdefault((dataset, ipc, r.code_bits), {}).setdefault(method, []).append(r.map_value)
    methods = sorted({m for v in cells.values() for m in v})
    lines = [f"{'dataset':<10}{'ipc':>7}{'bits':>6}" + "".join(f"{m:>14}" for m in methods)]
    for (dataset, ipc, bits) in sorted(cells):
        row = cells[(dataset, ipc, bits)]
        lines.append(f"{dataset:<10}{ipc:>7}{bits:>6}" + "".join(
            f"{100 * np.mean(row[m]):14.2f}" if m in row else f"{'-':>14}" for m in methods))
    text = "\n".join(lines)
    root.mkdir(parents=True, exist_ok=True)
    (root / "table.txt").write_text(text + "\n")
    (root / "table.json").write_text(json.dumps(
        [{"dataset": d, "ipc": i, "bits": b, "map": {m: float(np.mean(v)) for m, v in cells[(d, i, b)].items()}}
         for (d, i, b) in sorted(cells)], indent=2))
    if plots:
        _plot_timing(root)
    return text


def _plot_timing(root: Path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for path in glob.glob(str(root / "*" / "timing" / "*" / "*" / "result.json")):
        res = json.loads(Path(path).read_text())
        fig, ax = plt.subplots(figsize=(4, 3))
        for m, pts in res["series"].items():
            ax.plot([p["seconds"] for p in pts], [100 * p["map"] for p in pts], marker="o", label=m)
        ax.set_xlabel("condensation time (s)")
        ax.set_ylabel(f"mAP@{res['code_bits']} bits")
        ax.legend()
        fig.tight_layout()
        fig.savefig(Path(path).with_name("timing.png"), dpi=120)
        plt.close(fig)
