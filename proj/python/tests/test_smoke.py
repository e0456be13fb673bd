import math

import numpy as np
import pytest

import pascl

TINY = {
    "n_max": 60, "rho": 10, "n_ood_train": 120, "n_test_per_class": 10, "n_ood_test": 60,
    "width": 12, "blocks": 2, "proj_dim": 6, "n1": 2, "n2": 1, "batch_in": 32, "batch_out": 32,
}


def test_counts_and_tail_set():
    counts = pascl.longtailed_counts(10, 500, 100.0)
    assert counts[0] == 500 and counts[-1] == 5
    assert pascl.tail_class_set(counts, 0.5) == [5, 6, 7, 8, 9]


def test_metrics_examples():
    assert pascl.auroc([0.9, 0.1], [True, False]) == 1.0
    assert pascl.auroc([0.3, 0.3], [True, False]) == 0.5
    assert pascl.aupr([0.9, 0.1, 0.2], [True, False, False]) == 1.0
    assert pascl.fpr_at_tpr([0.9, 0.5, 0.4], [True, False, False], 0.95) == 0.0
    rep = pascl.compute_report([0.9, 0.1, 0.2], [True, False, False], [0, 1, 0], [0, 1, 1], [1])
    assert rep["acc_tail"] == 0.5 and rep["acc_head"] is None


def test_metric_input_errors():
    with pytest.raises(pascl.InputError):
        pascl.auroc([0.1, 0.2], [True])


def test_scores():
    logits = np.array([[0.0, 0.0], [10.0, 0.0]])
    msp = pascl.ood_score(logits, "msp")
    assert msp[0] == pytest.approx(0.5)
    assert msp[1] < msp[0]
    energy = pascl.ood_score(logits, "energy")
    assert energy[0] == pytest.approx(-math.log(2.0))


def test_contrastive_head_only_is_zero():
    z = np.array([[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]])
    assert pascl.pascl_contrastive(z, [0, 0, -1], [False, False, True], "pascl", [1], 0.1) == 0.0


def test_config_roundtrip_and_errors():
    text = pascl.render_config(overrides={"rho": 37.5})
    assert "rho = 37.5" in text
    assert pascl.config_hash(text) == pascl.config_hash(overrides={"rho": 37.5})
    with pytest.raises(pascl.ConfigError):
        pascl.render_config(overrides={"k": 2})
    assert "lambda2" in pascl.config_keys()


def test_generate_is_deterministic():
    a = pascl.generate(overrides={**TINY, "seed": 3})
    b = pascl.generate(overrides={**TINY, "seed": 3})
    assert np.array_equal(a["train_in"]["x"], b["train_in"]["x"])
    assert a["train_in"]["x"].shape[1] == 2
    assert (a["train_out"]["y"] == -1).all()
    assert sum(a["priors"]) == pytest.approx(1.0, abs=1e-12)


def test_run_experiment_small():
    r = pascl.run_experiment(overrides=TINY)
    assert [(x["score_fn"], x["abf"]) for x in r["reports"]] == [
        ("msp", False), ("msp", True), ("energy", False), ("energy", True)]
    assert r["reports"][0]["auroc"] == r["reports"][1]["auroc"]
    assert 0.0 <= r["reports"][0]["auroc"] <= 1.0
    assert len(r["trace"]) == 3
    again = pascl.run_experiment(overrides=TINY)
    assert again["reports"] == r["reports"]


def test_grad_suite_losses():
    results = pascl.grad_suite(seeds=2, primitives=False)
    assert results and all(r["pass"] for r in results)
