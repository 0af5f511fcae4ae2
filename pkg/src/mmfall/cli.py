"""Command-line entry point: ``mmfall {train,evaluate,ablate,bench,export-attention,synth}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .bench import benchmark_latency
from .data.dataset_io import load_dataset, save_dataset
from .data.synthetic import synth_generate
from .errors import MMFallError
from .model import init_model
from .experiment import (STANDARD_VARIANTS, ExperimentConfig, artifact_root, build_split, evaluate_checkpoint,
                         export_attention, run_ablation, run_experiment)

log = logging.getLogger("mmfall")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_overrides({"seed": args.seed})
    return cfg


def _out_dir(args, name: str) -> Path:
    return Path(args.out) if args.out else artifact_root() / name


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, f"run-seed{cfg.seed}")
    result = run_experiment(cfg, out)
    rep = result["report"]
    log.info("test F1 %.4f  recall %.4f  AUC %s  -> %s", rep.f1, rep.recall, rep.auc_roc, out)
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    report = evaluate_checkpoint(cfg, args.checkpoint, args.threshold)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    variants = json.loads(Path(args.variants).read_text()) if args.variants else STANDARD_VARIANTS
    out = Path(args.out) if args.out else artifact_root() / "ablation.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    for row in run_ablation(cfg, variants, out):
        log.info("%-18s recall %.4f  F1 %.4f  AUC %s", row["variant"], row["recall"], row["f1"], row["auc_roc"])
    return 0


def cmd_bench(args) -> int:
    if args.checkpoint:
        model = args.checkpoint
    else:
        cfg = _load_config(args)
        model = (cfg.model, init_model(cfg.model, cfg.seed))
    report = benchmark_latency(model, iters=args.iters, warmup=args.warmup)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_export_attention(args) -> int:
    if args.windows:
        windows, _ = load_dataset(args.windows)
    else:
        windows = build_split(_load_config(args)).test
    windows = windows[:args.limit]
    out = Path(args.out) if args.out else artifact_root() / "attention.csv"
    rows = export_attention(args.checkpoint, windows, out)
    log.info("wrote %d attention rows to %s", len(rows), out)
    return 0


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    d = cfg.data
    windows = synth_generate(d.n_subjects, d.windows_per_subject, d.fall_fraction, seed=cfg.seed, T=d.window_len)
    out = Path(args.out) if args.out else artifact_root() / f"synthetic-seed{cfg.seed}.mmds"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(out, windows, seed=cfg.seed, provenance=[{"step": "synth_generate", "n_subjects": d.n_subjects,
                                                           "windows_per_subject": d.windows_per_subject,
                                                           "fall_fraction": d.fall_fraction}])
    log.info("wrote %d windows to %s", len(windows), out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmfall", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--config", help="experiment config JSON")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help=out_help)

    sp = sub.add_parser("train", help="run an experiment and write its artifacts")
    common(sp, "artifact directory")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="evaluate a checkpoint on the config's test split")
    common(sp, "report JSON path (default: stdout)")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--threshold", type=float)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("ablate", help="train ablation variants on one shared split")
    common(sp, "ablation CSV path")
    sp.add_argument("--variants", help="JSON list of {name, section: {key: value}} overrides")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("bench", help="batch-1 single-thread latency benchmark")
    common(sp, "report JSON path")
    sp.add_argument("--checkpoint", help="checkpoint to time (default: freshly initialised model)")
    sp.add_argument("--iters", type=int, default=2000)
    sp.add_argument("--warmup", type=int, default=50)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("export-attention", help="dump per-head attention weights as CSV")
    common(sp, "CSV path")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--windows", help="dataset file (default: the config's test split)")
    sp.add_argument("--limit", type=int, default=8)
    sp.set_defaults(func=cmd_export_attention)

    sp = sub.add_parser("synth", help="write a synthetic dataset file")
    common(sp, "dataset path")
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except (MMFallError, FileNotFoundError) as exc:
        log.error("error: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
