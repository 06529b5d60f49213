import os

import numpy as np
import pytest

from motok import adapt, data, fileio


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    """Small two-domain dataset + oracle probabilities."""
    root = tmp_path_factory.mktemp("toy")
    spec = data.SyntheticSpec(n_source=24, n_target=24, n_val=16, seed=7)
    paths = data.generate_domain_pair(spec, root)
    probs = str(root / "probs.jsonl")
    data.oracle_probabilities(paths["truth_target_train"], probs, noise_temp=0.3, seed=1)
    return {"root": root, "paths": paths, "probs": probs}


def base_cfg(toy, **kw):
    base = dict(epochs=1, batch_size=8, model_lr=1e-3, seed=0,
                source_manifest=toy["paths"]["source_train"],
                target_manifest=toy["paths"]["target_train"],
                val_manifest=toy["paths"]["target_val"],
                probs_file=toy["probs"])
    base.update(kw)
    return adapt.TrainConfig(**base)


# -- pseudo-label filtering --------------------------------------------------

def rec(vid, probs):
    return adapt.PseudoLabelRecord(vid, np.asarray(probs, dtype=np.float64))


def test_filter_keeps_confident():
    out = adapt.filter_pseudolabels([rec("a", [0.9, 0.1])], gamma_c=0.8)
    assert out.entries == [("a", 0)]


def test_filter_drops_below_gate():
    out = adapt.filter_pseudolabels([rec("a", [0.7, 0.3])], gamma_c=0.8)
    assert out.size == 0


def test_filter_strict_inequality_and_tiebreak():
    assert adapt.filter_pseudolabels([rec("a", [0.8, 0.2])], gamma_c=0.8).size == 0
    out = adapt.filter_pseudolabels([rec("a", [0.5, 0.5])], gamma_c=0.3)
    assert out.entries == [("a", 0)]  # lowest index wins the tie


def test_filter_gamma_one_empty():
    recs = [rec("a", [1.0, 0.0]), rec("b", [0.3, 0.7])]
    assert adapt.filter_pseudolabels(recs, gamma_c=1.0).size == 0


def test_filter_monotone_in_gamma():
    rng = np.random.default_rng(0)
    recs = []
    for i in range(50):
        p = rng.dirichlet(np.ones(8))
        recs.append(rec(f"v{i}", p))
    sizes = [adapt.filter_pseudolabels(recs, g).size for g in (0.0, 0.3, 0.6, 0.9, 1.0)]
    assert sizes == sorted(sizes, reverse=True)
    assert sizes[0] == 50  # gamma 0 keeps everything


def test_filter_rejects_malformed():
    with pytest.raises(ValueError):
        adapt.filter_pseudolabels([rec("a", [0.9, 0.2])], 0.5)


# -- losses and rewards -------------------------------------------------------

def test_da_loss_lambda_zero_limit():
    from motok import tensor as T
    logits = T.Tensor(np.zeros((2, 8)))
    ls, lt, lda = adapt.da_loss(logits, np.array([0, 1]), None, None, lambda_t=0.5)
    assert lt is None
    assert float(lda.data) == float(ls.data)


def test_da_loss_combination():
    from motok import tensor as T
    s = T.Tensor(np.zeros((2, 8)))
    t = T.Tensor(np.zeros((3, 8)))
    ls, lt, lda = adapt.da_loss(s, np.array([0, 1]), t, np.array([1, 2, 3]), lambda_t=0.5)
    log8 = np.log(8.0)
    assert float(ls.data) == pytest.approx(log8, rel=1e-6)
    assert float(lt.data) == pytest.approx(log8, rel=1e-6)
    assert float(lda.data) == pytest.approx(1.5 * log8, rel=1e-6)


def test_compute_reward_forced_values():
    rb = adapt.compute_reward(0.5, 0.5, 0.6, 0.6, lambda_l=10.0)
    assert rb.r_src == pytest.approx(-5.4)
    assert rb.r_total == pytest.approx(2 * rb.r_src)  # identical stats double
    rb = adapt.compute_reward(0.3, 0.0, 1.0, 0.0, lambda_l=10.0)
    assert rb.r_src == pytest.approx(-3.0)  # rho=1 kills the efficiency term
    with pytest.raises(FloatingPointError):
        adapt.compute_reward(float("inf"), 0.0, 0.5, 0.5, 10.0)


def test_reward_breakdown_equations_hold_every_iteration(toy):
    cfg = base_cfg(toy, epochs=1)
    tr = adapt.Trainer(cfg)
    tr.run()
    for row in tr.metrics:
        r_src = -cfg.lambda_l * row["loss_s"] - (1.0 - row["rho_s"])
        r_tgt = -cfg.lambda_l * row["loss_t"] - (1.0 - row["rho_t"])
        assert row["r_total"] == r_src + r_tgt  # exact float equality


# -- config -------------------------------------------------------------------

def test_config_roundtrip_through_flat_dict():
    cfg = adapt.TrainConfig(gamma_c=0.4, tau_override=None, epochs=3)
    d = adapt.config_to_dict(cfg)
    assert d["tau_override"] == "none"
    back = adapt.config_from_dict(d)
    assert back == cfg
    with_tau = adapt.config_from_dict({**d, "tau_override": "0.25"})
    assert with_tau.tau_override == 0.25
    with pytest.raises(ValueError):
        adapt.config_from_dict({"bogus": "1"})


def test_config_validation():
    with pytest.raises(ValueError):
        adapt.TrainConfig(gamma_c=1.5)
    with pytest.raises(ValueError):
        adapt.TrainConfig(lambda_t=0.0)
    with pytest.raises(ValueError):
        adapt.TrainConfig(drop_mode="topk")
    with pytest.raises(ValueError):
        adapt.TrainConfig(tau_override=1.0)


# -- training loop ------------------------------------------------------------

def test_empty_target_degenerates_to_source_only(toy):
    cfg = base_cfg(toy, probs_file="")
    tr = adapt.Trainer(cfg)
    tr.run()
    for row in tr.metrics:
        assert row["loss_t"] == 0.0
        assert row["rho_t"] == 0.0


def test_training_deterministic_across_runs(toy, tmp_path):
    outs = []
    for d in ("a", "b"):
        cfg = base_cfg(toy, epochs=2)
        tr = adapt.Trainer(cfg)
        tr.run()
        path = tmp_path / d / "metrics.csv"
        os.makedirs(path.parent, exist_ok=True)
        adapt.write_metrics(path, tr.metrics)
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]


def test_gamma_one_equals_disabled_target_trajectory(toy, tmp_path):
    logs = []
    for kw in (dict(gamma_c=1.0), dict(probs_file="")):
        cfg = base_cfg(toy, epochs=2, **kw)
        tr = adapt.Trainer(cfg)
        tr.run()
        path = tmp_path / f"m{len(logs)}.csv"
        adapt.write_metrics(path, tr.metrics)
        logs.append(path.read_bytes())
    assert logs[0] == logs[1]


def test_lda_matches_recomputation_from_logged_logits(toy):
    cfg = base_cfg(toy, epochs=1, batch_size=2)
    tr = adapt.Trainer(cfg)
    src = tr.source[:2]
    tgt = tr.target[:2]
    row = tr.train_iteration(src, tgt)
    src_logits, src_labels, tgt_logits, tgt_labels = tr.last_logits

    def ce(logits, labels):
        z = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        return float(np.mean(lse - z[np.arange(len(labels)), labels]))

    expect = ce(src_logits, src_labels) + cfg.lambda_t * ce(tgt_logits, tgt_labels)
    assert row["loss_da"] == pytest.approx(expect, abs=1e-6)


def test_lambda_t_scaling_linearity(toy):
    rows = {}
    for lam in (0.5, 1.0):
        cfg = base_cfg(toy, epochs=1, lambda_t=lam)
        tr = adapt.Trainer(cfg)
        row = tr.train_iteration(tr.source[:4], tr.target[:4])
        rows[lam] = row["loss_da"] - row["loss_s"]
    assert rows[1.0] == pytest.approx(2.0 * rows[0.5], rel=1e-5)


def test_metrics_csv_columns(toy, tmp_path):
    cfg = base_cfg(toy, epochs=1)
    tr = adapt.Trainer(cfg)
    tr.run()
    tr.save(tmp_path / "ckpt")
    header = open(tmp_path / "ckpt" / "metrics.csv").readline().strip()
    assert header == "iter,loss_s,loss_t,loss_da,tau,rho_s,rho_t,r_total,baseline"


def test_tau_override_bypasses_policy(toy):
    cfg = base_cfg(toy, epochs=1, tau_override=0.45)
    tr = adapt.Trainer(cfg)
    tr.run()
    assert all(row["tau"] == 0.45 for row in tr.metrics)
    assert tr.policy.mu == 0.01 and tr.policy.baseline == 0.0  # untouched
    assert tr.tau_hat == 0.45


# -- evaluation ---------------------------------------------------------------

def test_evaluate_deterministic_and_fields(toy, tmp_path):
    cfg = base_cfg(toy, epochs=1)
    tr = adapt.Trainer(cfg)
    tr.run()
    tr.save(tmp_path / "ckpt")
    r1 = adapt.evaluate(toy["paths"]["target_val"], tmp_path / "ckpt")
    r2 = adapt.evaluate(toy["paths"]["target_val"], tmp_path / "ckpt")
    assert r1.accuracy == r2.accuracy
    assert r1.mean_drop_ratio == r2.mean_drop_ratio
    assert r1.tokens_full == 128
    assert 0.0 <= r1.accuracy <= 1.0


def test_evaluate_requires_tau_hat(toy, tmp_path):
    cfg = base_cfg(toy, epochs=1)
    tr = adapt.Trainer(cfg)
    tr.run()
    tr.save(tmp_path / "c2")
    import json
    meta_path = tmp_path / "c2" / "meta.json"
    meta = json.loads(meta_path.read_text())
    meta["tau_hat"] = None
    meta_path.write_text(json.dumps(meta))
    with pytest.raises(ValueError):
        adapt.evaluate(toy["paths"]["target_val"], tmp_path / "c2")


def test_evaluate_zero_tau_override_keeps_everything(toy, tmp_path):
    cfg = base_cfg(toy, epochs=1)
    tr = adapt.Trainer(cfg)
    tr.run()
    tr.save(tmp_path / "c3")
    res = adapt.evaluate(toy["paths"]["target_val"], tmp_path / "c3", tau_override=0.0)
    assert res.mean_drop_ratio == 0.0
    assert res.mean_retained == res.tokens_full


def test_memorization_sanity_ceiling(tmp_path):
    # a model trained to memorize a tiny labeled set evaluates at accuracy 1.0
    spec = data.SyntheticSpec(n_source=8, n_target=8, n_val=8, seed=11,
                              n_classes=2)
    paths = data.generate_domain_pair(spec, tmp_path / "d")
    cfg = adapt.TrainConfig(
        epochs=30, batch_size=8, model_lr=3e-3, seed=1, drop_mode="lmft",
        source_manifest=paths["source_train"], target_manifest=paths["target_train"],
        val_manifest=paths["source_train"], probs_file="")
    tr = adapt.Trainer(cfg)
    tr.run()
    tr.save(tmp_path / "ck")
    res = adapt.evaluate(paths["source_train"], tmp_path / "ck")
    assert res.accuracy == 1.0
