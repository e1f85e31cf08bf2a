"""Command line interface: ``mechmeta <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, downstream, evaluation, langs, meta, nn, runner
from .zoo import SamplingPrior, Zoo, build_zoo, zoo_stats


def _write_lines(path, lines):
    if path in (None, "-"):
        for line in lines:
            sys.stdout.write(line + "\n")
    else:
        Path(path).write_text("".join(line + "\n" for line in lines))


def cmd_gen(args):
    lang = langs.get_language(args.lang, pairs_homogeneous=args.pairs_homogeneous)
    rng = np.random.default_rng(args.seed)
    strings = langs.sample_by_length_range(lang, args.lo, args.hi, args.n, rng)
    _write_lines(args.out, [json.dumps(r) for r in langs.corpus_records(lang, strings)])


def cmd_corpus(args):
    lang = langs.get_language(args.lang, pairs_homogeneous=args.pairs_homogeneous)
    records = evaluation.build_eval_corpus(
        lang, np.random.default_rng(args.seed), (args.lo, args.hi), args.per_length, dedup=args.dedup
    )
    _write_lines(args.out, [json.dumps(r.to_json()) for r in records])


def cmd_zoo_build(args):
    zoo = build_zoo(args.n, rng=args.seed)
    zoo.save(args.out)
    print(json.dumps(zoo_stats(zoo), indent=1))


def cmd_zoo_stats(args):
    print(json.dumps(zoo_stats(Zoo.load(args.path)), indent=1))


def _arch(args) -> nn.ArchDescriptor:
    return nn.ArchDescriptor(cell=args.arch, layers=args.layers, hidden_dim=args.hidden, embed_dim=args.embed)


def cmd_model_init(args):
    params = nn.init_params(_arch(args), np.random.default_rng(args.seed))
    digest = checkpoint.save(args.out, params, {"init_seed": args.seed})
    print(digest)


def cmd_model_inspect(args):
    params, meta_info = checkpoint.load(args.path)
    info = {
        "arch": params.arch.to_dict(),
        "meta": meta_info,
        "sha256": checkpoint.file_hash(args.path),
        "parameters": params.num_parameters(),
        "arrays": {k: {"shape": list(v.shape), "norm": float(np.linalg.norm(v))} for k, v in params.items()},
    }
    print(json.dumps(info, indent=1))


def cmd_model_diff(args):
    a, _ = checkpoint.load(args.a)
    b, _ = checkpoint.load(args.b)
    d = checkpoint.diff(a, b)
    print(json.dumps({"max_abs_diff": d, "identical": all(v == 0 for v in d.values())}, indent=1))


def cmd_meta_train(args):
    if args.source == "zoo":
        zoo = Zoo.load(args.zoo) if args.zoo else build_zoo(5000, rng=args.zoo_seed)
        source = meta.ZooSource(zoo, SamplingPrior(args.temperature))
    else:
        source = langs.get_language(args.source)
    overrides = {"inner_loops_total": args.tasks, "seed": args.seed, "arch": _arch(args)}
    if args.outer_lr is not None:
        overrides["outer_lr"] = args.outer_lr
    if args.accumulation is not None:
        overrides["meta_accumulation"] = args.accumulation
    cfg = meta.desk_config(**overrides)
    result = meta.meta_train(cfg, source, progress_every=args.progress)
    digest = checkpoint.save(args.out, result.params, {"source": source.name, "meta": cfg.to_dict()})
    result.write_log(args.log or f"{args.out}.log.csv")
    print(digest)


def cmd_train(args):
    lang = langs.get_language(args.lang)
    if args.init == "fresh":
        init = nn.init_params(_arch(args), np.random.default_rng(args.init_seed))
        init_id, init_hash = "unmetatrained", None
    else:
        init, _ = checkpoint.load(args.init)
        init_id, init_hash = str(args.init), checkpoint.file_hash(args.init)
    schedule = downstream.TrainSchedule.for_n(args.n)
    trained = downstream.train(init, lang, schedule, np.random.default_rng(args.seed), init_id=init_id, seed=args.seed)
    digest = checkpoint.save(args.out, trained.params, {"provenance": {k: v for k, v in trained.provenance.items() if k != "train_set"}})
    manifest = {
        **trained.provenance,
        "init_sha256": init_hash,
        "init_seed": args.init_seed if args.init == "fresh" else None,
        "output_sha256": digest,
        "losses": trained.losses,
    }
    Path(f"{args.out}.manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    print(digest)


def cmd_eval(args):
    params, _ = checkpoint.load(args.model)
    corpus = evaluation.read_corpus(args.corpus)
    report = evaluation.evaluate_model(params, corpus, args.max_length)
    if args.records_csv:
        report.write_records_csv(args.records_csv)
    text = json.dumps(report.summary(), indent=1)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)


def cmd_run(args):
    config = runner.ExperimentConfig.load(args.config)
    if args.workers is not None:
        config.workers = args.workers
    out = runner.run_grid(config, args.out)
    print(out)


def _add_arch_args(p, hidden=64):
    p.add_argument("--arch", choices=["lstm", "gru"], default="lstm")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--hidden", type=int, default=hidden)
    p.add_argument("--embed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mechmeta", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="sample strings as JSON lines")
    p.add_argument("--lang", required=True, choices=langs.LANG_NAMES)
    p.add_argument("--lo", type=int, default=1)
    p.add_argument("--hi", type=int, default=10)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")
    p.add_argument("--pairs-homogeneous", action="store_true")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("corpus", help="build a continuation evaluation corpus")
    p.add_argument("--lang", required=True, choices=langs.LANG_NAMES)
    p.add_argument("--lo", type=int, default=1)
    p.add_argument("--hi", type=int, default=40)
    p.add_argument("--per-length", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dedup", action="store_true")
    p.add_argument("--out", default="-")
    p.add_argument("--pairs-homogeneous", action="store_true")
    p.set_defaults(fn=cmd_corpus)

    zp = sub.add_parser("zoo", help="grammar zoo utilities").add_subparsers(dest="zoo_command", required=True)
    p = zp.add_parser("build")
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_zoo_build)
    p = zp.add_parser("stats")
    p.add_argument("path")
    p.set_defaults(fn=cmd_zoo_stats)

    mp = sub.add_parser("model", help="checkpoint utilities").add_subparsers(dest="model_command", required=True)
    p = mp.add_parser("init")
    _add_arch_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_model_init)
    p = mp.add_parser("inspect")
    p.add_argument("path")
    p.set_defaults(fn=cmd_model_inspect)
    p = mp.add_parser("diff")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(fn=cmd_model_diff)

    p = sub.add_parser("meta-train", help="first-order MAML meta-training")
    p.add_argument("--source", required=True, choices=[*langs.LANG_NAMES, "zoo"])
    p.add_argument("--temperature", type=float, default=-5.0)
    p.add_argument("--zoo", default=None, help="zoo JSON (built with --zoo-seed if omitted)")
    p.add_argument("--zoo-seed", type=int, default=0)
    _add_arch_args(p)
    p.add_argument("--tasks", type=int, default=2000)
    p.add_argument("--outer-lr", type=float, default=None)
    p.add_argument("--accumulation", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None)
    p.add_argument("--progress", type=int, default=100)
    p.set_defaults(fn=cmd_meta_train)

    p = sub.add_parser("train", help="downstream training")
    p.add_argument("--init", required=True, help="checkpoint path or 'fresh'")
    p.add_argument("--lang", required=True, choices=langs.LANG_NAMES)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init-seed", type=int, default=0)
    _add_arch_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="continuation metrics for a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--max-length", type=int, default=10)
    p.add_argument("--records-csv", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("run", help="run an experiment grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(fn=cmd_run)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args.fn(args)
    return 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
