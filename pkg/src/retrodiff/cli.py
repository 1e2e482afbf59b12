"""Command-line harness for the experimental matrix.

Verbs:
  gen-data         write the synthetic dataset to <out>/data
  train            train one model, write checkpoint + loss curve
  evaluate         sample every test prompt, write metrics.csv
  ablate-k         train+evaluate across a list of k values
  longtail-report  per-frequency-bin alignment table + figure

Exit codes: 0 success, 2 config error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

from .config import ExperimentConfig, load_config
from .dataset import ConfigError
from .diffusion import (Denoiser, DivergenceError, config_hash,
                        load_checkpoint, save_checkpoint)
from . import experiment as ex
from .metrics import per_bin_report
from .dataset import BIN_LABELS
from .plots import plot_k_sweep, plot_longtail_bins

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3


def _data_dir(cfg, out):
    d = cfg.data_dir
    if not os.path.isabs(d):
        d = os.path.join(out, d)
    return d


def cmd_gen_data(cfg: ExperimentConfig, seed: int, out: str) -> int:
    cfg.seed = seed
    ex.generate_data(cfg, _data_dir(cfg, out))
    return EXIT_OK


def _require_data(cfg, out):
    d = _data_dir(cfg, out)
    if not os.path.exists(os.path.join(d, "manifest.tsv")):
        raise ConfigError(f"no dataset at {d}; run gen-data first")
    return d


def cmd_train(cfg: ExperimentConfig, seed: int, out: str) -> int:
    world = ex.build_world(cfg, _require_data(cfg, out))
    os.makedirs(out, exist_ok=True)
    denoiser, curve = ex.run_training(cfg, seed, world)
    ckpt = os.path.join(out, "checkpoint.bin")
    save_checkpoint(ckpt, denoiser, config_hash(cfg.canonical_text()))
    ex.write_loss_curve(os.path.join(out, "loss_curve.csv"), curve)
    ex.write_run_record(os.path.join(out, "run_record.json"), cfg, seed,
                        ckpt)
    print(f"trained: final epoch loss {curve[-1]:.5f}, "
          f"checkpoint {ckpt}")
    return EXIT_OK


def cmd_evaluate(cfg: ExperimentConfig, seed: int, out: str) -> int:
    ckpt = os.path.join(out, "checkpoint.bin")
    if not os.path.exists(ckpt):
        raise ConfigError(f"no checkpoint at {ckpt}; run train first")
    world = ex.build_world(cfg, _require_data(cfg, out))
    denoiser = Denoiser(ex.model_config(cfg), seed=seed)
    load_checkpoint(ckpt, denoiser)
    result = ex.run_evaluation(cfg, seed, denoiser, world)
    rows = ex.metrics_csv_rows(cfg, seed, result)
    ex.write_metrics_csv(os.path.join(out, "metrics.csv"), rows)
    ex.write_records_csv(os.path.join(out, "per_sample.csv"),
                         result.records)
    for name, value in result.metrics.items():
        print(f"{name}: {value:.4f}")
    return EXIT_OK


def cmd_ablate_k(cfg: ExperimentConfig, seed: int, out: str) -> int:
    world = ex.build_world(cfg, _require_data(cfg, out))
    os.makedirs(out, exist_ok=True)
    sweep_rows = []
    for k in cfg.k_values():
        arm = ExperimentConfig(**{**cfg.__dict__, "k": k,
                                  "retrieval_type": "none" if k == 0
                                  else cfg.retrieval_type})
        arm_dir = os.path.join(out, f"k{k}")
        _, result = ex.full_run(arm, seed, world, arm_dir)
        sweep_rows.append((k, seed, result.metrics["alignment"]))
        print(f"k={k}: alignment {result.metrics['alignment']:.3f}")
    with open(os.path.join(out, "sweep.csv"), "w") as fh:
        fh.write("k,seed,alignment\n")
        for k, s, a in sweep_rows:
            fh.write(f"{k},{s},{a:.10g}\n")
    plot_k_sweep(os.path.join(out, "sweep.svg"), sweep_rows)
    return EXIT_OK


def cmd_longtail_report(cfg: ExperimentConfig, seed: int, out: str) -> int:
    per_sample = os.path.join(out, "per_sample.csv")
    if not os.path.exists(per_sample):
        raise ConfigError(f"no evaluation at {per_sample}; "
                          "run evaluate first")
    world_freq = {}
    data = _require_data(cfg, out)
    with open(os.path.join(data, "vocab.tsv")) as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            world_freq[int(parts[0])] = int(parts[-2])
    per_class = []
    zero_scores = []
    with open(per_sample) as fh:
        next(fh)
        for line in fh:
            sid, toks, align, zs = line.rstrip("\n").split(",")
            score = float(align)
            for tok in toks.split(";"):
                per_class.append((int(tok), score))
            if zs == "1":
                zero_scores.append(score)
    rows = per_bin_report(per_class, world_freq)
    by_bin = {label: 100.0 * mean for label, mean, _ in rows}
    counts = {label: count for label, _, count in rows}
    with open(os.path.join(out, "bins.csv"), "w", newline="") as fh:
        w = csv.writer(fh)   # bin labels contain commas; quoting matters
        w.writerow(["bin", "mean_alignment", "count"])
        for label in BIN_LABELS:
            if label in by_bin:
                w.writerow([label, f"{by_bin[label]:.10g}", counts[label]])
            else:
                w.writerow([label, "nan", 0])
    nonzero = [(label, by_bin[label]) for label in BIN_LABELS
               if label != "zero" and label in by_bin]
    gap = nonzero[-1][1] - nonzero[0][1] if len(nonzero) >= 2 else 0.0
    with open(os.path.join(out, "bins_summary.csv"), "w") as fh:
        fh.write("stat,value\n")
        fh.write(f"head_minus_tail_gap,{gap:.10g}\n")
        zs = 100.0 * sum(zero_scores) / len(zero_scores) \
            if zero_scores else float("nan")
        fh.write(f"zero_shot_mean,{zs:.10g}\n")
    plot_longtail_bins(os.path.join(out, "bins.svg"),
                       {f"k={cfg.k} {cfg.retrieval_type}": by_bin})
    print(f"head-minus-tail gap: {gap:.3f}")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate-k": cmd_ablate_k,
    "longtail-report": cmd_longtail_report,
}


def make_parser():
    parser = argparse.ArgumentParser(
        prog="retrodiff",
        description="retrieval-augmented latent diffusion experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None,
                       help="flat key=value config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="runs/default",
                       help="output directory")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg, args.seed, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
