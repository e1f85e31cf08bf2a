"""Experiment grids: meta-train, downstream-train and evaluate every cell.

A cell is (meta source, architecture, target language, n_strings, seed).
Everything a cell needs is derived from the config and its master seed, so
any row of ``results.csv`` can be recomputed in isolation from its manifest.

Config JSON (all keys optional except ``targets``)::

    {
      "master_seed": 0,
      "meta_sources": ["none", "anbncn", "zoo:-5", "zoo:5"],
      "archs": [{"cell": "lstm"}, {"cell": "gru"}],
      "targets": ["anbn"],
      "n_strings": [10],
      "seeds": [0, 1, 2],
      "hidden_dim": 64,
      "tasks": 2000,
      "meta": {"outer_lr": 0.0001},
      "zoo": {"n": 5000, "seed": 0},
      "eval": {"lengths": [1, 40], "per_length": 10, "max_length": 10},
      "workers": 1
    }
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import checkpoint, downstream, evaluation, langs, meta, nn
from .zoo import SamplingPrior, Zoo, build_zoo

log = logging.getLogger(__name__)

SOURCE_CLASSES = ("unmetatrained", "regular", "context-free", "context-sensitive", "zoo-simple", "zoo-complex")
_LEVEL_CLASS = {"Regular": "regular", "ContextFree": "context-free", "ContextSensitive": "context-sensitive"}

RESULT_FIELDS = [
    "meta_source",
    "source_class",
    "arch",
    "target",
    "n_strings",
    "seed",
    "length_bucket",
    "mean_f1",
    "mean_p_val",
    "mean_bt",
    "n_records",
    "self_transfer",
    "error",
]


def derive_seed(*keys) -> int:
    digest = hashlib.sha256(json.dumps(keys, sort_keys=True).encode()).digest()
    return int.from_bytes(digest[:4], "little")


def source_class(source: str) -> str:
    if source == "none":
        return "unmetatrained"
    if source.startswith("zoo:"):
        return "zoo-simple" if float(source[4:]) < 0 else "zoo-complex"
    return _LEVEL_CLASS[langs.get_language(source).chomsky_level]


@dataclass
class ExperimentConfig:
    targets: list[str]
    meta_sources: list[str] = field(default_factory=lambda: ["none"])
    archs: list[dict] = field(default_factory=lambda: [{"cell": "lstm"}])
    n_strings: list[int] = field(default_factory=lambda: [10])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    master_seed: int = 0
    hidden_dim: int = 64
    tasks: int = 2000
    meta: dict = field(default_factory=dict)
    zoo: dict = field(default_factory=lambda: {"n": 5000, "seed": 0})
    eval: dict = field(default_factory=lambda: {"lengths": [1, 40], "per_length": 10, "max_length": 10})
    workers: int = 1

    def __post_init__(self):
        for s in self.meta_sources:
            source_class(s)  # validates
        for t in self.targets:
            langs.get_language(t)
        for n in self.n_strings:
            downstream.TrainSchedule.for_n(n)

    @classmethod
    def from_json(cls, data: dict) -> "ExperimentConfig":
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(json.loads(Path(path).read_text()))

    def arch_descriptors(self) -> list[nn.ArchDescriptor]:
        out = []
        for a in self.archs:
            a = {"hidden_dim": self.hidden_dim, **a}
            out.append(nn.ArchDescriptor.from_dict(a))
        return out

    def meta_config(self, arch: nn.ArchDescriptor, source: str, seed: int) -> meta.MetaConfig:
        overrides = {"inner_loops_total": self.tasks, **self.meta}
        cfg = meta.desk_config(arch=arch, **overrides)
        return replace(cfg, seed=derive_seed(self.master_seed, "meta", source, arch.to_dict(), seed))

    def eval_settings(self) -> tuple[tuple[int, int], int, int]:
        e = {"lengths": [1, 40], "per_length": 10, "max_length": 10, **self.eval}
        return tuple(e["lengths"]), int(e["per_length"]), int(e["max_length"])


def arch_label(arch: nn.ArchDescriptor) -> str:
    return arch.cell


@dataclass(frozen=True)
class MetaJob:
    source: str
    arch: nn.ArchDescriptor
    seed: int


@dataclass(frozen=True)
class Cell:
    source: str
    arch: nn.ArchDescriptor
    target: str
    n_strings: int
    seed: int

    @property
    def self_transfer(self) -> bool:
        return self.source == self.target

    @property
    def key(self) -> str:
        return f"{self.source}__{arch_label(self.arch)}{self.arch.hidden_dim}__{self.target}__n{self.n_strings}__s{self.seed}"


def grid(config: ExperimentConfig) -> list[Cell]:
    return [
        Cell(src, arch, tgt, n, seed)
        for src in config.meta_sources
        for arch in config.arch_descriptors()
        for tgt in config.targets
        for n in config.n_strings
        for seed in config.seeds
    ]


# ---------------------------------------------------------------------------
# Meta checkpoints


def _zoo_for(config: ExperimentConfig) -> Zoo:
    return build_zoo(int(config.zoo.get("n", 5000)), rng=int(config.zoo.get("seed", 0)))


def meta_source_for(config: ExperimentConfig, source: str, zoo_cache: dict):
    if source.startswith("zoo:"):
        if "zoo" not in zoo_cache:
            zoo_cache["zoo"] = _zoo_for(config)
        return meta.ZooSource(zoo_cache["zoo"], SamplingPrior(float(source[4:])))
    return langs.get_language(source)


def meta_cache_key(config: ExperimentConfig, job: MetaJob) -> str:
    cfg = config.meta_config(job.arch, job.source, job.seed)
    payload = {"source": job.source, "meta": cfg.to_dict(), "format": checkpoint.VERSION}
    if job.source.startswith("zoo:"):
        payload["zoo"] = config.zoo
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:20]


def _run_meta_job(args) -> tuple[str, str | None]:
    config, job, store = args
    key = meta_cache_key(config, job)
    path = Path(store) / f"{key}.mlfw"
    if path.exists():
        return key, None
    cfg = config.meta_config(job.arch, job.source, job.seed)
    source = meta_source_for(config, job.source, {})
    try:
        result = meta.meta_train(cfg, source)
    except Exception as exc:  # recorded per cell, grid continues
        log.warning("meta-training %s failed: %s", key, exc)
        return key, f"{type(exc).__name__}: {exc}"
    tmp = path.with_suffix(".tmp")
    checkpoint.save(tmp, result.params, {"source": job.source, "meta": cfg.to_dict()})
    result.write_log(Path(store) / f"{key}.log.csv")
    tmp.replace(path)
    return key, None


# ---------------------------------------------------------------------------
# Cells


def _eval_corpus(config: ExperimentConfig, target: str) -> list[evaluation.ContinuationRecord]:
    lengths, per_length, _ = config.eval_settings()
    rng = np.random.default_rng(derive_seed(config.master_seed, "eval", target))
    return evaluation.build_eval_corpus(langs.get_language(target), rng, lengths, per_length)


def _fresh_init(config: ExperimentConfig, cell: Cell) -> nn.ModelParams:
    rng = np.random.default_rng(derive_seed(config.master_seed, "init", cell.arch.to_dict(), cell.seed))
    return nn.init_params(cell.arch, rng)


def _rows_for(cell: Cell, report: evaluation.EvalReport | None, error: str | None) -> list[dict]:
    base = {
        "meta_source": cell.source,
        "source_class": source_class(cell.source),
        "arch": arch_label(cell.arch),
        "target": cell.target,
        "n_strings": cell.n_strings,
        "seed": cell.seed,
        "self_transfer": int(cell.self_transfer),
        "error": error or "",
    }
    if report is None:
        return [{**base, "length_bucket": "short", "mean_f1": None, "mean_p_val": None, "mean_bt": None, "n_records": 0}]
    rows = [
        {
            **base,
            "length_bucket": f"<={report.max_length}",
            "mean_f1": report.mean_f1,
            "mean_p_val": report.mean_p_val,
            "mean_bt": report.mean_bt,
            "n_records": sum(1 for r in report.records if r.length <= report.max_length),
        }
    ]
    for length, m in report.per_length.items():
        rows.append(
            {
                **base,
                "length_bucket": str(length),
                "mean_f1": m["f1"],
                "mean_p_val": m["p_val"],
                "mean_bt": m["bt"],
                "n_records": m["count"],
            }
        )
    return rows


def run_cell(config: ExperimentConfig, cell: Cell, store: Path, manifest_dir: Path | None = None) -> list[dict]:
    error = None
    report = None
    ckpt_hash = None
    init_id = "unmetatrained"
    try:
        if cell.source == "none":
            init = _fresh_init(config, cell)
        else:
            key = meta_cache_key(config, MetaJob(cell.source, cell.arch, cell.seed))
            path = store / f"{key}.mlfw"
            if not path.exists():
                raise FileNotFoundError(f"meta checkpoint {key} missing (meta-training failed?)")
            init, _ = checkpoint.load(path)
            ckpt_hash = checkpoint.file_hash(path)
            init_id = key
        target = langs.get_language(cell.target)
        schedule = downstream.TrainSchedule.for_n(cell.n_strings)
        train_seed = derive_seed(config.master_seed, "train", cell.target, cell.n_strings, cell.seed)
        trained = downstream.train(
            init, target, schedule, np.random.default_rng(train_seed), init_id=init_id, seed=train_seed
        )
        _, _, max_length = config.eval_settings()
        report = evaluation.evaluate_model(trained.params, _eval_corpus(config, cell.target), max_length)
    except Exception as exc:  # recorded, grid continues
        log.warning("cell %s failed: %s", cell.key, exc)
        error = f"{type(exc).__name__}: {exc}"
    rows = _rows_for(cell, report, error)
    if manifest_dir is not None:
        manifest = {
            "cell": {
                "meta_source": cell.source,
                "arch": cell.arch.to_dict(),
                "target": cell.target,
                "n_strings": cell.n_strings,
                "seed": cell.seed,
            },
            "master_seed": config.master_seed,
            "config": asdict(config),
            "meta_checkpoint": init_id,
            "meta_checkpoint_sha256": ckpt_hash,
            "error": error,
            "summary": rows[0],
        }
        (manifest_dir / f"{cell.key}.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return rows


def _run_cell_args(args):
    return run_cell(*args)


def _map(fn, items: list, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_grid(config: ExperimentConfig, out_dir) -> Path:
    """Run every cell; writes results.csv, aggregates.csv, manifests/ and checkpoints/."""
    out = Path(out_dir)
    store = out / "checkpoints"
    manifests = out / "manifests"
    store.mkdir(parents=True, exist_ok=True)
    manifests.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(asdict(config), indent=1, sort_keys=True))

    jobs = sorted(
        {MetaJob(c.source, c.arch, c.seed) for c in grid(config) if c.source != "none"},
        key=lambda j: (j.source, json.dumps(j.arch.to_dict(), sort_keys=True), j.seed),
    )
    for key, err in _map(_run_meta_job, [(config, j, store) for j in jobs], config.workers):
        if err:
            log.warning("meta checkpoint %s unavailable: %s", key, err)

    cells = grid(config)
    all_rows = _map(_run_cell_args, [(config, c, store, manifests) for c in cells], config.workers)
    rows = [r for group in all_rows for r in group]
    write_results(out / "results.csv", rows)
    tables = report(rows)
    write_aggregates(out, tables)
    return out


def write_results(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k)) for k in RESULT_FIELDS})


def read_results(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            for k in ("mean_f1", "mean_p_val", "mean_bt"):
                r[k] = float(r[k]) if r[k] not in ("", "None") else None
            r["n_strings"] = int(r["n_strings"])
            r["seed"] = int(r["seed"])
            r["n_records"] = int(r["n_records"])
            r["self_transfer"] = int(r["self_transfer"])
            rows.append(r)
    return rows


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


# ---------------------------------------------------------------------------
# Reporting


def _mean_sd(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=1)) if len(arr) > 1 else 0.0


def report(rows: Sequence[dict]) -> dict[str, list[dict]]:
    """Figure-ready tables.

    ``fig3``: mean F1 (short bucket) by arch x source class x n_strings,
    self-transfer rows excluded.  ``fig4``: the same per arch with the
    improvement over the unmetatrained baseline.  ``fig5``: per-length
    curves for every (arch, source, target, n_strings).
    """
    if not rows:
        raise ValueError("report needs at least one result row")
    ok = [r for r in rows if r.get("mean_f1") is not None and not r.get("error")]
    short = [r for r in ok if str(r["length_bucket"]).startswith("<=")]
    archs = sorted({r["arch"] for r in rows})
    ns = sorted({int(r["n_strings"]) for r in rows})

    fig3 = []
    for arch in archs:
        for cls in SOURCE_CLASSES:
            for n in ns:
                members = [
                    r["mean_f1"]
                    for r in short
                    if r["arch"] == arch and r["source_class"] == cls and int(r["n_strings"]) == n and not int(r["self_transfer"])
                ]
                if not members:
                    continue
                mean, sd = _mean_sd(members)
                fig3.append({"arch": arch, "source_class": cls, "n_strings": n, "mean_f1": mean, "sd_f1": sd, "n_rows": len(members)})
    present = {r["source_class"] for r in fig3}
    for cls in SOURCE_CLASSES:
        if cls not in present:
            log.warning("source class %s has no rows; omitted", cls)

    fig4 = []
    base = {(r["arch"], r["n_strings"]): r["mean_f1"] for r in fig3 if r["source_class"] == "unmetatrained"}
    for r in fig3:
        b = base.get((r["arch"], r["n_strings"]))
        fig4.append({**r, "delta_vs_unmetatrained": None if b is None else r["mean_f1"] - b})

    fig5 = []
    curves: dict = {}
    for r in ok:
        if str(r["length_bucket"]).startswith("<="):
            continue
        key = (r["arch"], r["meta_source"], r["target"], int(r["n_strings"]))
        curves.setdefault(key, {}).setdefault(int(r["length_bucket"]), []).append(r["mean_f1"])
    for key in sorted(curves):
        arch, src, tgt, n = key
        for length in sorted(curves[key]):
            mean, sd = _mean_sd(curves[key][length])
            fig5.append(
                {"arch": arch, "meta_source": src, "target": tgt, "n_strings": n, "length": length, "mean_f1": mean, "sd_f1": sd}
            )
    return {"fig3": fig3, "fig4": fig4, "fig5": fig5}


def write_aggregates(out_dir, tables: dict[str, list[dict]]) -> None:
    out = Path(out_dir)
    with open(out / "aggregates.csv", "w", newline="") as fh:
        fields = ["table", "arch", "source_class", "meta_source", "target", "n_strings", "length", "mean_f1", "sd_f1", "n_rows", "delta_vs_unmetatrained"]
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for name, rows in tables.items():
            for r in rows:
                w.writerow({"table": name, **{k: _fmt(r.get(k)) for k in fields[1:]}})
    for name, rows in tables.items():
        if not rows:
            continue
        cols = list(rows[0])
        with open(out / f"{name}.dat", "w") as fh:
            fh.write("# " + " ".join(cols) + "\n")
            for r in rows:
                fh.write(" ".join(_dat(r[c]) for c in cols) + "\n")


def _dat(v) -> str:
    if v is None:
        return "NaN"
    if isinstance(v, float):
        return "NaN" if math.isnan(v) else f"{v:.10g}"
    return str(v)
