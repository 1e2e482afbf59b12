"""Experiment orchestration unit tests (no full training runs here)."""

import numpy as np
import pytest

from retrodiff.config import ExperimentConfig
from retrodiff.dataset import generate_dataset
from retrodiff.experiment import (build_world, evaluate_samples,
                                  metrics_csv_rows, run_id)


@pytest.fixture(scope="module")
def world():
    cfg = ExperimentConfig(V=16, zipf_s=1.0, n_train=60, n_test=40)
    train, test = generate_dataset(cfg.seed, cfg.V, cfg.zipf_s,
                                   cfg.n_train, cfg.n_test,
                                   cfg.heldout_fraction)
    return build_world(cfg, datasets=(train, test))


def test_self_evaluation_sanity(world):
    """Ground-truth renders evaluated against themselves: KL exactly 0,
    Fréchet ~0 (estimator noise only), alignment at its ceiling."""
    samples = world.test.samples
    generated = [grid for _, _, grid in samples]
    res = evaluate_samples(world, samples, generated)
    assert res.metrics["kl"] == pytest.approx(0.0, abs=1e-12)
    assert res.metrics["frechet"] == pytest.approx(0.0, abs=1e-8)
    assert res.metrics["is"] > 1.0
    assert res.metrics["alignment"] > 20.0


def test_zero_shot_rows_flagged(world):
    samples = world.test.samples
    res = evaluate_samples(world, samples,
                           [g for _, _, g in samples])
    flagged = [r for r in res.records if r["zero_shot"]]
    assert len(flagged) == 8    # 20% of 40 test prompts
    assert np.isfinite(res.zero_shot_alignment)


def test_run_id_encodes_config_and_seed():
    cfg = ExperimentConfig()
    a = run_id(cfg, 0)
    b = run_id(cfg, 1)
    c = run_id(ExperimentConfig(k=5), 0)
    assert a.endswith("-0") and b.endswith("-1")
    assert a.split("-")[0] == b.split("-")[0]
    assert a.split("-")[0] != c.split("-")[0]


def test_metrics_rows_carry_hash_and_seed(world):
    cfg = ExperimentConfig(V=16, zipf_s=1.0, n_train=60, n_test=40)
    samples = world.test.samples[:10]
    res = evaluate_samples(world, samples, [g for _, _, g in samples])
    rows = metrics_csv_rows(cfg, 3, res)
    rid = run_id(cfg, 3)
    assert all(r[0] == rid and r[-1] == 3 for r in rows)
    names = {r[3] for r in rows}
    assert {"frechet", "kl", "is", "alignment", "head_tail_gap",
            "zero_shot_alignment"} <= names
