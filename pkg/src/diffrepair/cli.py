"""Command-line entry point: ``diffrepair <command> ...``.

Exit codes: 0 success, 2 configuration or usage error, 3 data or I/O error,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import torch
import yaml

from . import __version__
from .config import (
    DEFAULTS, ConfigError, consumer_config, dump_config, load_config, model_config, parse_levels, train_config,
)
from .corpus import (
    CannotCorrupt, build_benchmark, build_corpus, corrupt, read_benchmark, read_corpus, resolve_ops,
    select_split, write_benchmark, write_corpus,
)
from .diffusion.checkpoint import CorruptCheckpoint, load_checkpoint, save_checkpoint
from .diffusion.model import DiffusionModel, NonFinite
from .diffusion.sampling import Trajectory, sample_batched
from .diffusion.schedule import BadConfig, make_schedule
from .diffusion.train import derive_seed, encode_corpus, make_optimizer, train
from .evaluation.consumer import consumer_repair, copy_baseline, finetune_consumer, load_consumer, save_consumer
from .evaluation.metrics import score
from .evaluation.plots import plot_bands, plot_noise_curve, plot_trends
from .evaluation.trends import LengthMismatch, band_table, solved_overlap, trend_analysis
from .formula import TokenizeError, detokenize, parses
from .pairs import (
    BudgetExhausted, analyze_dataset, generate_baseline_pairs, generate_pairs_detailed, generation_stats,
    read_pairs, write_pairs,
)
from .repair import POOLS, get_oracle, resolve_pools, run_repair

log = logging.getLogger("diffrepair")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class DataError(Exception):
    pass


# ---------------------------------------------------------------------------
# plumbing

def out_dir(cfg: dict) -> Path:
    base = os.environ.get("DIFFREPAIR_OUT") or cfg["paths.out"]
    return Path(base)


def resolve_out(cfg: dict, path: Optional[str], default: str) -> Path:
    p = Path(path or default)
    if not p.is_absolute():
        p = out_dir(cfg) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def require(path: Optional[str], what: str) -> Path:
    if not path:
        raise ConfigError(f"missing {what}")
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} {p} does not exist")
    return p


def file_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_manifest(primary: Path, args: argparse.Namespace, cfg: dict, inputs: Sequence[Path],
                   outputs: Sequence[Path], started: float, lineage: Optional[dict] = None) -> None:
    manifest = {
        "command": args.command + (f" {args.action}" if getattr(args, "action", None) else ""),
        "argv": list(getattr(args, "argv", sys.argv[1:])),
        "config": cfg,
        "inputs": {str(p): file_hash(p) for p in inputs},
        "outputs": {str(p): file_hash(p) for p in outputs if p.exists()},
        "tool_version": __version__,
        "torch_version": torch.__version__,
        "threads": torch.get_num_threads(),
        "wall_clock_s": round(time.time() - started, 3),
        "seed_lineage": lineage or {"root": cfg["seed"]},
    }
    write_json(primary.with_name(primary.name + ".manifest.json"), manifest)


def _load_model(path: str, cfg: dict):
    ck = load_checkpoint(require(path, "checkpoint"))
    # the sampler is an inference setting, so the run's config wins over the stored one
    ck.model.cfg = _config_call(lambda v: dataclasses.replace(ck.model.cfg, sampler=v), cfg["model.sampler"])
    return ck


def _config_call(fn, value):
    """Run a validator whose ValueError means a bad option, not bad data."""
    try:
        return fn(value)
    except ValueError as err:
        raise ConfigError(str(err)) from None


def _solved_flags(path: Path) -> dict[str, list[bool]]:
    """Execution-match flags from an `evaluate` JSON or `any` successes from a `repair` JSONL."""
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        return {path.stem: [bool(json.loads(l)["success"]["any"]) for l in text.splitlines() if l.strip()]}
    if "per_entry" in data:
        return {path.stem: data["per_entry"]["execution"]}
    return {f"{path.stem}:{k}": v["per_entry"]["execution"] for k, v in data.items() if k != "overlap"}


# ---------------------------------------------------------------------------
# commands

def cmd_config(args, cfg) -> int:
    sys.stdout.write(dump_config(cfg))
    return 0


def cmd_corpus(args, cfg) -> int:
    started = time.time()
    if args.action == "build":
        out = resolve_out(cfg, args.out, cfg["paths.corpus"])
        entries = build_corpus(cfg["corpus.n"], cfg["seed"], cfg["corpus.depth"], cfg["model.n"])
        write_corpus(entries, out)
        write_manifest(out, args, cfg, [], [out], started)
        print(f"wrote {len(entries)} formulas to {out}")
    elif args.action == "corrupt":
        src = require(args.corpus or cfg["paths.corpus"], "corpus")
        out = resolve_out(cfg, args.out, "corrupted.jsonl")
        ops = _config_call(resolve_ops, args.ops.split(",") if args.ops else None)
        entries = read_corpus(src)
        n_ok = 0
        with open(out, "w", encoding="utf-8") as f:
            for i, e in enumerate(entries):
                try:
                    broken = corrupt(e.code, ops, args.n_ops, derive_seed(cfg["seed"], "corrupt", i) % (1 << 31),
                                     cfg["model.n"])
                except CannotCorrupt:
                    continue
                f.write(json.dumps({"id": e.id, "broken": broken, "fixed": e.code}, sort_keys=True) + "\n")
                n_ok += 1
        write_manifest(out, args, cfg, [src], [out], started)
        print(f"wrote {n_ok} corrupted formulas to {out}")
    elif args.action == "bench":
        src = require(args.corpus or cfg["paths.corpus"], "corpus")
        out = resolve_out(cfg, args.out, cfg["paths.benchmark"])
        ops = _config_call(resolve_ops, args.ops.split(",") if args.ops else None)
        bench = build_benchmark(read_corpus(src), cfg["bench.n"], cfg["seed"], cfg["bench.grids"], ops,
                                split=None if args.all_splits else "bench")
        write_benchmark(bench, out)
        write_manifest(out, args, cfg, [src], [out], started)
        print(f"wrote {len(bench)} benchmark entries to {out}")
    return 0


def cmd_train(args, cfg) -> int:
    started = time.time()
    src = require(args.corpus or cfg["paths.corpus"], "corpus")
    out = resolve_out(cfg, args.out, cfg["paths.checkpoint"])
    metrics = out.with_name(out.stem + ".metrics.csv")
    entries = read_corpus(src)
    if not args.all_splits:
        entries = select_split(entries, "train")
    data = encode_corpus([e.code for e in entries], cfg["model.n"])
    tcfg = train_config(cfg)
    start, rows = 0, []
    if args.resume:
        ck = load_checkpoint(require(args.resume, "checkpoint to resume"))
        model, schedule, start = ck.model, ck.schedule, ck.step
        optimizer = make_optimizer(model, tcfg)
        ck.load_optimizer(optimizer)
        prior = Path(args.resume).with_name(Path(args.resume).stem + ".metrics.csv")
        if prior.exists():
            with open(prior, newline="") as f:
                rows = [r for r in csv.DictReader(f) if int(r["step"]) <= start]
    else:
        torch.manual_seed(derive_seed(cfg["seed"], "init"))
        model = DiffusionModel(model_config(cfg))
        schedule = make_schedule(cfg["model.T"], cfg["model.schedule"])
        optimizer = make_optimizer(model, tcfg)
    log.info("training %d -> %d steps on %d formulas", start, tcfg.steps, len(data))
    result = train(model, schedule, data, tcfg, optimizer, start_step=start,
                   on_log=lambda r: log.info("step %(step)d loss1 %(loss1).4f loss2 %(loss2).4f "
                                             "loss3 %(loss3).4f total %(total).4f", r))
    lineage = {"root": cfg["seed"], "init": derive_seed(cfg["seed"], "init"), "train": "sha256(root:train:step)",
               "resumed_from": start}
    save_checkpoint(out, model, schedule, result.step, optimizer, lineage=lineage,
                    extra={"train": tcfg.to_json(), "corpus_sha256": file_hash(src)})
    with open(metrics, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step", "loss1", "loss2", "loss3", "total"])
        for r in rows:
            w.writerow([r["step"], r["loss1"], r["loss2"], r["loss3"], r["total"]])
        for r in result.log:
            w.writerow([r["step"]] + [repr(float(r[k])) for k in ("loss1", "loss2", "loss3", "total")])
    write_manifest(out, args, cfg, [src], [out, metrics], started, lineage)
    print(f"checkpoint at step {result.step} written to {out}")
    return 0


def cmd_sample(args, cfg) -> int:
    started = time.time()
    ck = _load_model(args.checkpoint or cfg["paths.checkpoint"], cfg)
    out = resolve_out(cfg, args.out, "trajectories.jsonl")
    seeds = [derive_seed(cfg["seed"], "sample", i) % (1 << 31) for i in range(args.n)]
    trajs = sample_batched(ck.model, ck.schedule, seeds, args.stride or cfg["gen.snapshot_stride"])
    with open(out, "w", encoding="utf-8") as f:
        for t in trajs:
            f.write(json.dumps(t.to_json(), sort_keys=True) + "\n")
    rate = sum(parses(detokenize(t.final)) for t in trajs) / len(trajs)
    stats = out.with_name(out.stem + ".stats.json")
    write_json(stats, {"n": len(trajs), "parse_rate": rate})
    write_manifest(out, args, cfg, [Path(args.checkpoint or cfg["paths.checkpoint"])], [out, stats], started)
    print(f"{len(trajs)} samples, parse rate {rate:.3f}")
    return 0


def cmd_repair(args, cfg) -> int:
    started = time.time()
    pools = _config_call(resolve_pools, args.pool.split(",") if args.pool else cfg["repair.pools"])
    _config_call(get_oracle, cfg["repair.oracle"])
    levels = parse_levels(args.levels) if args.levels else cfg["repair.levels"]
    ck_path = args.checkpoint or cfg["paths.checkpoint"]
    ck = _load_model(ck_path, cfg)
    bench_path = require(args.bench or cfg["paths.benchmark"], "benchmark")
    bench = read_benchmark(bench_path)
    report = run_repair(ck.model, ck.schedule, bench, levels, cfg["repair.seeds_per_level"],
                        cfg["repair.oracle"], pools, seed=cfg["seed"])
    out = resolve_out(cfg, args.out, "repair.jsonl")
    summary = out.with_name(out.stem + ".summary.json")
    report.write(out, summary)
    write_manifest(out, args, cfg, [Path(ck_path), bench_path], [out, summary], started)
    print(json.dumps(report.summary["rates"], sort_keys=True))
    return 0


def cmd_genpairs(args, cfg) -> int:
    started = time.time()
    out = resolve_out(cfg, args.out, "pairs.jsonl")
    stats_path = out.with_name(out.stem + ".stats.json")
    n = args.n if args.n is not None else cfg["gen.n_pairs"]
    inputs = []
    if args.syntactic:
        src = require(args.corpus or cfg["paths.corpus"], "corpus")
        inputs.append(src)
        entries = select_split(read_corpus(src), "train")
        ops = _config_call(resolve_ops, args.ops.split(",") if args.ops else None)
        pairs = generate_baseline_pairs(entries, ops, n, cfg["seed"])
        stats = {"acceptance_rate": None, "n_pairs": len(pairs)}
        stats.update(analyze_dataset(pairs, seed=cfg["seed"]).to_json() if pairs else {})
    else:
        ck_path = args.checkpoint or cfg["paths.checkpoint"]
        inputs.append(Path(ck_path))
        ck = _load_model(ck_path, cfg)
        try:
            gen = generate_pairs_detailed(ck.model, ck.schedule, n, cfg["seed"], cfg["gen.snapshot_stride"])
        except BudgetExhausted as err:
            write_pairs(err.pairs, out)
            raise DataError(str(err)) from None
        pairs = gen.pairs
        stats = generation_stats(gen, ck.schedule.T, seed=cfg["seed"])
    write_pairs(pairs, out)
    write_json(stats_path, stats)
    write_manifest(out, args, cfg, inputs, [out, stats_path], started)
    print(f"wrote {len(pairs)} pairs to {out}")
    return 0


def cmd_finetune(args, cfg) -> int:
    started = time.time()
    src = require(args.pairs, "pairs file")
    pairs = read_pairs(src)
    out = resolve_out(cfg, args.out, "consumer.ckpt")
    ccfg = consumer_config(cfg)
    model = finetune_consumer(pairs, ccfg, on_log=lambda r: log.info("step %(step)d loss %(loss).4f", r))
    save_consumer(model, out, extra={"pairs_sha256": file_hash(src)})
    write_manifest(out, args, cfg, [src], [out], started)
    print(f"consumer written to {out}")
    return 0


def cmd_evaluate(args, cfg) -> int:
    started = time.time()
    bench_path = require(args.bench or cfg["paths.benchmark"], "benchmark")
    bench = read_benchmark(bench_path)
    brokens = [e.broken for e in bench]
    inputs = [bench_path]
    reports = {}
    if args.copy:
        reports["copy"] = score(copy_baseline(brokens), bench.entries)
    for path in args.consumer or []:
        p = require(path, "consumer checkpoint")
        inputs.append(p)
        model = load_consumer(p)
        reports[p.stem] = score(consumer_repair(model, brokens), bench.entries)
    if not reports:
        raise ConfigError("nothing to evaluate: pass --consumer and/or --copy")
    out = resolve_out(cfg, args.out, "evaluation.json")
    body = {name: r.to_json() for name, r in reports.items()}
    if len(reports) in (2, 3):
        body["overlap"] = solved_overlap({k: r.per_entry["execution"] for k, r in reports.items()})
    write_json(out, body)
    write_manifest(out, args, cfg, inputs, [out], started)
    for name, r in reports.items():
        print(f"{name}: execution {r.execution_match:.3f} sketch {r.sketch_match:.3f}")
    return 0


def _read_trajectories(path: Path) -> list[Trajectory]:
    with open(path, encoding="utf-8") as f:
        return [Trajectory.from_json(json.loads(line)) for line in f if line.strip()]


def cmd_analyze(args, cfg) -> int:
    started = time.time()
    if not (args.trends or args.pairs or args.overlap):
        raise ConfigError("choose --trends, --pairs or --overlap")
    outputs, inputs = [], []
    out = resolve_out(cfg, args.out, "analysis.json")
    body: dict = {}
    if args.trends:
        src = require(args.source, "--from trajectories file")
        inputs.append(src)
        report = trend_analysis(_read_trajectories(src))
        body["trends"] = report.to_json()
        svg = out.with_name(out.stem + ".trends.svg")
        plot_trends(body["trends"], svg)
        outputs.append(svg)
    if args.pairs:
        src = require(args.pairs, "pairs file")
        inputs.append(src)
        body["pairs"] = analyze_dataset(read_pairs(src), args.sample_size, args.ngram, cfg["seed"]).to_json()
    if args.overlap:
        flags: dict[str, list[bool]] = {}
        for path in args.overlap:
            p = require(path, "evaluation report")
            inputs.append(p)
            flags.update(_solved_flags(p))
        body["overlap"] = solved_overlap(flags)
    write_json(out, body)
    outputs.insert(0, out)
    write_manifest(out, args, cfg, inputs, outputs, started)
    print(f"analysis written to {out}")
    return 0


def cmd_plots(args, cfg) -> int:
    started = time.time()
    src = require(args.summary, "repair summary")
    summary = json.loads(src.read_text())
    out = resolve_out(cfg, args.out, "noise_curve.svg")
    plot_noise_curve(summary["curve"], out)
    outputs = [out]
    if summary.get("noise_bands"):
        bands = out.with_name(out.stem + ".bands.svg")
        plot_bands(band_table(summary["noise_bands"]), bands)
        outputs.append(bands)
    write_manifest(out, args, cfg, [src], outputs, started)
    print(f"plots written next to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file of dotted keys")
    common.add_argument("--seed", type=int, help="root seed")
    common.add_argument("--threads", type=int, default=1, help="torch intra-op threads (default 1)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="diffrepair", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("config", parents=[common], help="print the effective configuration")
    c.add_argument("action", choices=["show"])

    c = sub.add_parser("corpus", parents=[common], help="build corpora, corruptions and benchmarks")
    c.add_argument("action", choices=["build", "corrupt", "bench"])
    c.add_argument("--n", type=int, help="number of formulas / benchmark entries")
    c.add_argument("--depth", type=int)
    c.add_argument("--corpus", help="input corpus JSONL")
    c.add_argument("--ops", help="comma-separated corruption operators")
    c.add_argument("--n-ops", type=int, default=1)
    c.add_argument("--all-splits", action="store_true", help="bench: draw from every split")
    c.add_argument("--out", required=True)

    c = sub.add_parser("train", parents=[common], help="train the diffusion model")
    c.add_argument("--corpus")
    c.add_argument("--out")
    c.add_argument("--steps", type=int)
    c.add_argument("--lr", type=float)
    c.add_argument("--batch", type=int)
    c.add_argument("--schedule", choices=["linear", "sqrt"])
    c.add_argument("--resume", help="checkpoint to continue from")
    c.add_argument("--all-splits", action="store_true", help="train on every split, not only train")

    c = sub.add_parser("sample", parents=[common], help="unconditional samples with trajectories")
    c.add_argument("--checkpoint")
    c.add_argument("--n", type=int, default=500)
    c.add_argument("--stride", type=int)
    c.add_argument("--out")

    c = sub.add_parser("repair", parents=[common], help="noise-level repair sweep over a benchmark")
    c.add_argument("--checkpoint")
    c.add_argument("--bench")
    c.add_argument("--levels", help="e.g. 10..100 or 10,20,30")
    c.add_argument("--seeds-per-level", type=int)
    c.add_argument("--pool", help=f"comma-separated subset of {','.join(POOLS)}")
    c.add_argument("--oracle", choices=["exec", "exec_dist", "bifi", "sketch"])
    c.add_argument("--out")

    c = sub.add_parser("genpairs", parents=[common], help="generate (broken, fixed) pairs")
    c.add_argument("--checkpoint")
    c.add_argument("--n", type=int)
    c.add_argument("--stride", type=int)
    c.add_argument("--syntactic", action="store_true", help="use the corruptor instead of diffusion")
    c.add_argument("--corpus")
    c.add_argument("--ops")
    c.add_argument("--out")

    c = sub.add_parser("finetune", parents=[common], help="train the seq2seq consumer on pairs")
    c.add_argument("--pairs", required=True)
    c.add_argument("--steps", type=int)
    c.add_argument("--out")

    c = sub.add_parser("evaluate", parents=[common], help="score consumers on a benchmark")
    c.add_argument("--consumer", action="append")
    c.add_argument("--copy", action="store_true", help="include the copy-input baseline")
    c.add_argument("--bench")
    c.add_argument("--out")

    c = sub.add_parser("analyze", parents=[common], help="trend, pair-set and overlap analytics")
    c.add_argument("--trends", action="store_true")
    c.add_argument("--from", dest="source", help="trajectories JSONL from `sample`")
    c.add_argument("--pairs")
    c.add_argument("--overlap", nargs="+", help="evaluation JSON files (one per generator)")
    c.add_argument("--sample-size", type=int, default=200)
    c.add_argument("--ngram", type=int, default=3)
    c.add_argument("--out")

    c = sub.add_parser("plots", parents=[common], help="SVG charts from a repair summary")
    c.add_argument("--summary", required=True)
    c.add_argument("--out")
    return p


FLAG_KEYS = {
    "seed": "seed", "depth": "corpus.depth", "steps": None, "lr": "train.lr", "batch": "train.batch",
    "schedule": "model.schedule", "seeds_per_level": "repair.seeds_per_level", "oracle": "repair.oracle",
    "stride": "gen.snapshot_stride",
}


def _overrides(args) -> dict:
    out = {}
    for attr, key in FLAG_KEYS.items():
        value = getattr(args, attr, None)
        if key and value is not None:
            out[key] = value
    if getattr(args, "steps", None) is not None:
        out["consumer.steps" if args.command == "finetune" else "train.steps"] = args.steps
    if args.command == "corpus" and args.n is not None:
        out["corpus.n" if args.action == "build" else "bench.n"] = args.n
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = yaml.safe_load(value)
    return out


COMMANDS = {
    "config": cmd_config, "corpus": cmd_corpus, "train": cmd_train, "sample": cmd_sample,
    "repair": cmd_repair, "genpairs": cmd_genpairs, "finetune": cmd_finetune, "evaluate": cmd_evaluate,
    "analyze": cmd_analyze, "plots": cmd_plots,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return int(exit_.code or 0)
    args.argv = list(argv) if argv is not None else sys.argv[1:]
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        torch.set_num_threads(args.threads)
        cfg = load_config(args.config, _overrides(args))
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, BadConfig) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFinite as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CorruptCheckpoint, OSError, TokenizeError, LengthMismatch, json.JSONDecodeError,
            KeyError, ValueError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
