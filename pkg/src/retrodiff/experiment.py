"""Experiment orchestration: wire dataset, retrieval, model and metrics
into reproducible runs.

Every run is a pure function of (config, seed): dataset generation,
retrieval, training batches and sampling all derive their randomness
from named seed sequences, so re-running a config yields bit-identical
metric CSVs.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .dataset import (Dataset, generate_dataset, load_dataset, save_dataset,
                      zero_shot_ids)
from .diffusion import (LATENT_SCALE, ConditionBundle, Denoiser, ModelConfig,
                        TrainConfig, config_hash, ddpm_sample, make_bundle,
                        make_schedule, prepare_training_set, save_checkpoint,
                        train)
from .encoders import FrozenEncoders, decompress
from .metrics import (AlignmentScorer, MatchedFilterBank, feature_stats,
                      frechet_distance, inception_score, kl_divergence,
                      per_bin_report)
from .retrieval import PairStore, build_index, query_topk

SAMPLE_CHUNK = 128


@dataclass
class World:
    """Dataset plus every frozen component derived from it."""
    train: Dataset
    test: Dataset
    encoders: FrozenEncoders
    index: object
    pair_store: PairStore
    bank: MatchedFilterBank
    scorer: AlignmentScorer


def generate_data(cfg: ExperimentConfig, out_dir: str):
    train, test = generate_dataset(
        cfg.seed, cfg.V, cfg.zipf_s, cfg.n_train, cfg.n_test,
        cfg.heldout_fraction)
    save_dataset(out_dir, train, test)
    return train, test


def build_world(cfg: ExperimentConfig, data_dir: str | None = None,
                datasets=None) -> World:
    """Load (or receive) the dataset and build all frozen machinery."""
    if datasets is not None:
        train, test = datasets
    else:
        train, test = load_dataset(data_dir)
    enc = FrozenEncoders(cfg.V, train.T, train.F, seed=cfg.encoder_seed)
    return World(train, test, enc, build_index(train, enc),
                 PairStore(train, enc), MatchedFilterBank(train.vocabulary),
                 AlignmentScorer(enc, train.vocabulary))


def model_config(cfg: ExperimentConfig) -> ModelConfig:
    return ModelConfig(width=cfg.width, blocks=cfg.blocks,
                       n_steps=cfg.n_steps, beta_start=cfg.beta_start,
                       beta_end=cfg.beta_end)


def run_training(cfg: ExperimentConfig, seed: int, world: World):
    """Train one model; returns (denoiser, loss curve)."""
    denoiser = Denoiser(model_config(cfg), seed=seed)
    entries = prepare_training_set(world.train, world.index,
                                   world.pair_store, world.encoders,
                                   cfg.k, cfg.retrieval_type)
    tcfg = TrainConfig(epochs=cfg.epochs, batch=cfg.batch, lr=cfg.lr,
                       k=cfg.k, retrieval_type=cfg.retrieval_type,
                       seed=seed, cond_dropout=cfg.cond_dropout)
    curve = train(denoiser, entries, tcfg)
    return denoiser, curve


def _test_bundles(cfg: ExperimentConfig, world: World, samples):
    bundles = []
    for sid, cap, _ in samples:
        e_t = world.encoders.encode_text_global(cap)
        if cfg.retrieval_type == "none" or cfg.k == 0:
            bundles.append(ConditionBundle(e_t, None, None, 0))
        else:
            ids, scores = query_topk(world.index, e_t, cfg.k,
                                     exclude_id=sid)
            bundles.append(make_bundle(
                e_t, world.pair_store.pairs(ids, scores),
                cfg.retrieval_type))
    return bundles


@dataclass
class EvalResult:
    metrics: dict                  # metric name -> value ("all" scope)
    bin_rows: list                 # (bin label, mean alignment, count)
    records: list                  # per sample dicts
    head_tail_gap: float
    zero_shot_alignment: float


def evaluate_samples(world: World, samples, generated, tau: float = 0.1
                     ) -> EvalResult:
    """Score generated spectrograms against their prompts and the real
    test renders."""
    zs_ids = zero_shot_ids(world.test)
    records = []
    gen_feats, ref_feats, posteriors, kls = [], [], [], []
    per_class = []
    for (sid, cap, ref_grid), gen_grid in zip(samples, generated):
        align = world.scorer.score(gen_grid, cap)
        p_gen = world.bank.posterior(gen_grid, tau)
        p_ref = world.bank.posterior(ref_grid, tau)
        posteriors.append(p_gen)
        kls.append(kl_divergence(p_ref, p_gen))
        gen_feats.append(world.encoders.encode_audio(gen_grid).mean(axis=0))
        ref_feats.append(world.encoders.encode_audio(ref_grid).mean(axis=0))
        is_zero = sid in zs_ids
        records.append({"sample_id": sid, "tokens": list(cap.tokens),
                        "alignment": align, "zero_shot": is_zero})
        for tok in cap.tokens:
            per_class.append((tok, align))

    metrics = {
        "frechet": frechet_distance(feature_stats(np.stack(gen_feats)),
                                    feature_stats(np.stack(ref_feats))),
        "kl": float(np.mean(kls)),
        "is": inception_score(posteriors),
        "alignment": 100.0 * float(np.mean([r["alignment"]
                                            for r in records])),
    }
    bin_rows = per_bin_report(per_class, world.train.class_frequency)
    nonzero = [(label, mean) for label, mean, _ in bin_rows
               if label != "zero"]
    gap = nonzero[-1][1] - nonzero[0][1] if len(nonzero) >= 2 else 0.0
    zs = [r["alignment"] for r in records if r["zero_shot"]]
    return EvalResult(metrics, bin_rows, records,
                      head_tail_gap=100.0 * gap,
                      zero_shot_alignment=100.0 * float(np.mean(zs))
                      if zs else float("nan"))


def run_evaluation(cfg: ExperimentConfig, seed: int, denoiser: Denoiser,
                   world: World) -> EvalResult:
    """Sample one latent per test prompt and score the batch."""
    samples = world.test.samples
    if 0 < cfg.eval_prompts < len(samples):
        # evenly spaced subset so the zero-shot slice (end of the test
        # split) stays represented
        idx = np.unique(np.linspace(0, len(samples) - 1,
                                    cfg.eval_prompts).round().astype(int))
        samples = [samples[i] for i in idx]
    bundles = _test_bundles(cfg, world, samples)
    schedule = make_schedule(cfg.n_steps, cfg.beta_start, cfg.beta_end)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5A11]))
    generated = []
    for start in range(0, len(samples), SAMPLE_CHUNK):
        chunk = bundles[start:start + SAMPLE_CHUNK]
        latents = ddpm_sample(denoiser, chunk, schedule, rng,
                              guidance=cfg.guidance_scale)
        generated.extend(decompress(z / LATENT_SCALE) for z in latents)
    return evaluate_samples(world, samples, generated,
                            tau=cfg.kl_temperature)


# -- artifacts --------------------------------------------------------------

def run_id(cfg: ExperimentConfig, seed: int) -> str:
    return f"{config_hash(cfg.canonical_text()):016x}-{seed}"


def metrics_csv_rows(cfg: ExperimentConfig, seed: int, result: EvalResult):
    """Rows for the metric report CSV:
    run_id, k, model_size, metric, bin, value, seed."""
    rid = run_id(cfg, seed)
    rows = []
    for name, value in result.metrics.items():
        rows.append((rid, cfg.k, cfg.model_size, name, "all",
                     f"{value:.10g}", seed))
    for label, mean, count in result.bin_rows:
        rows.append((rid, cfg.k, cfg.model_size, "alignment", label,
                     f"{100.0 * mean:.10g}", seed))
    rows.append((rid, cfg.k, cfg.model_size, "head_tail_gap", "all",
                 f"{result.head_tail_gap:.10g}", seed))
    rows.append((rid, cfg.k, cfg.model_size, "zero_shot_alignment", "zero",
                 f"{result.zero_shot_alignment:.10g}", seed))
    return rows


def write_metrics_csv(path: str, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)   # bin labels contain commas; quoting matters
        w.writerow(["run_id", "k", "model_size", "metric", "bin", "value",
                    "seed"])
        w.writerows(rows)


def write_loss_curve(path: str, curve):
    with open(path, "w") as fh:
        fh.write("epoch,mean_loss\n")
        for epoch, loss in enumerate(curve, 1):
            fh.write(f"{epoch},{loss:.10g}\n")


def write_records_csv(path: str, records):
    with open(path, "w") as fh:
        fh.write("sample_id,tokens,alignment,zero_shot\n")
        for r in records:
            toks = ";".join(str(t) for t in r["tokens"])
            fh.write(f"{r['sample_id']},{toks},"
                     f"{r['alignment']:.10g},{int(r['zero_shot'])}\n")


def write_run_record(path: str, cfg: ExperimentConfig, seed: int,
                     checkpoint: str, metrics: dict | None = None):
    record = {"run_id": run_id(cfg, seed),
              "config_hash": f"{config_hash(cfg.canonical_text()):016x}",
              "seed": seed, "checkpoint": checkpoint,
              "metrics": metrics or {}}
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def full_run(cfg: ExperimentConfig, seed: int, world: World, out_dir: str):
    """Train, checkpoint, evaluate and write all artifacts for one run."""
    os.makedirs(out_dir, exist_ok=True)
    denoiser, curve = run_training(cfg, seed, world)
    ckpt = os.path.join(out_dir, "checkpoint.bin")
    save_checkpoint(ckpt, denoiser, config_hash(cfg.canonical_text()))
    write_loss_curve(os.path.join(out_dir, "loss_curve.csv"), curve)
    result = run_evaluation(cfg, seed, denoiser, world)
    rows = metrics_csv_rows(cfg, seed, result)
    write_metrics_csv(os.path.join(out_dir, "metrics.csv"), rows)
    write_records_csv(os.path.join(out_dir, "per_sample.csv"),
                      result.records)
    write_run_record(os.path.join(out_dir, "run_record.json"), cfg, seed,
                     ckpt, result.metrics)
    return denoiser, result
