import math

import numpy as np
import pytest

from mscl.config import ABLATION_ROWS, TrainConfig, ablation_config, build_config, parse_config_text
from mscl.training import (
    METRIC_COLUMNS,
    MetricsLog,
    MSCLModel,
    NumericalError,
    SGD,
    cosine_lr,
    forward_losses,
    make_batch,
    pretrain,
    read_metrics,
    sgd_step,
)


def small(**kw):
    base = dict(width=8, embed_dim=8, clip_len=4, batch_size=4, bank_size=16, epochs=1, seed=0)
    base.update(kw)
    return TrainConfig(**base).validate()


# --------------------------------------------------------------- optimizer


def test_sgd_first_steps_by_hand():
    p = {"w": np.array([1.0, -2.0])}
    opt = SGD(momentum=0.9, weight_decay=0.1)
    opt.step(p, {"w": np.array([0.5, 0.5])}, lr=0.1)
    # v = g + wd p = [0.6, 0.3]
    np.testing.assert_allclose(p["w"], [0.94, -2.03], rtol=1e-14)
    opt.step(p, {"w": np.array([0.0, 1.0])}, lr=0.1)
    # v = 0.9 v + g + wd p = [0.54 + 0.094, 0.27 + 1 - 0.203]
    np.testing.assert_allclose(p["w"], [0.94 - 0.0634, -2.03 - 0.1067], rtol=1e-13)


def test_sgd_missing_gradient_still_decays():
    p = {"w": np.array([2.0])}
    SGD(0.0, 0.5).step(p, {}, lr=1.0)
    assert p["w"][0] == 1.0


def test_sgd_rejects_non_finite():
    with pytest.raises(NumericalError):
        SGD().step({"w": np.zeros(2)}, {"w": np.array([np.nan, 0.0])}, 0.1)


def test_sgd_step_functional_matches_class():
    a, b = {"w": np.ones(3)}, {"w": np.ones(3)}
    opt, vel = SGD(0.9, 1e-4), {}
    for g in (np.arange(3.0), np.ones(3)):
        opt.step(a, {"w": g}, 0.05)
        sgd_step(b, {"w": g}, 0.05, 0.9, 1e-4, vel)
    np.testing.assert_array_equal(a["w"], b["w"])


def test_cosine_lr_examples():
    assert cosine_lr(0, 100, 0.01) == 0.01
    assert cosine_lr(50, 100, 0.01) == pytest.approx(0.005, rel=1e-14)
    assert cosine_lr(100, 100, 0.01) == pytest.approx(0.0, abs=1e-18)
    assert cosine_lr(25, 100, 1.0) == pytest.approx((1 + math.cos(math.pi / 4)) / 2)
    with pytest.raises(ValueError):
        cosine_lr(101, 100, 0.01)


# ------------------------------------------------------------------ config


def test_config_text_parsing():
    got = parse_config_text("# c\nalpha = pi/3\nfra = off\nlr=0.5  # trailing\nsampler = uniform\n")
    assert got == {"alpha": math.pi / 3, "fra": False, "lr": 0.5, "sampler": "uniform"}
    with pytest.raises(ValueError, match="unknown key"):
        parse_config_text("nope = 1")
    with pytest.raises(ValueError, match="on/off"):
        parse_config_text("fra = maybe")


def test_config_roundtrip_and_validation(tmp_path):
    cfg = TrainConfig(lr=0.02, fra=False)
    path = tmp_path / "c.cfg"
    path.write_text(cfg.to_text())
    assert build_config(path) == cfg
    assert build_config(path, {"lr": 0.5}).lr == 0.5
    for bad in ({"tau": 0.0}, {"alpha": 4.0}, {"width": 12}, {"batch_size": 600}, {"sampler": "x"}):
        with pytest.raises(ValueError):
            TrainConfig(**bad).validate()


def test_ablation_rows():
    assert set(ABLATION_ROWS) == set(range(1, 9))
    r1, r8 = ablation_config(1), ablation_config(8)
    assert (r1.use_rf, r1.use_lmc, r1.fra, r1.sampler, r1.flow_encoder) == (False, False, False, "uniform", "2d")
    assert (r8.use_rf, r8.use_lmc, r8.fra, r8.sampler) == (True, True, True, "mds")
    assert ablation_config(3).flow_encoder == "3d-zero"


# ----------------------------------------------------------------- model


def test_model_query_and_key_start_equal():
    m = MSCLModel(small())
    for k, v in m.rgb.arrays().items():
        np.testing.assert_array_equal(v, m.rgb_key.arrays()[k])
    assert not any(p.requires_grad for p in m.flow_key.params.values())


def test_make_batch_shapes(tiny_videos):
    cfg = small(fra=True)
    b = make_batch(tiny_videos[:4], cfg, np.random.default_rng(0))
    for t in (b.rgb_q, b.flow_q, b.rgb_k, b.flow_k, b.flow_rot):
        assert t.shape == (4, 3, 4, 16, 16)
    assert len(b.angles) == 4
    assert all(cfg.alpha <= a <= 2 * math.pi - cfg.alpha for a in b.angles)
    assert make_batch(tiny_videos[:4], small(fra=False), np.random.default_rng(0)).flow_rot is None


def test_lambda_zero_drops_local_term(tiny_videos):
    rng = np.random.default_rng(0)
    cfg = small()
    model = MSCLModel(cfg)
    b = make_batch(tiny_videos[:4], cfg, rng)
    model.rgb_bank.enqueue(np.eye(8)[:4])
    model.flow_bank.enqueue(np.eye(8)[4:])
    on, _, _ = forward_losses(model, b, cfg)
    off, _, _ = forward_losses(model, b, cfg.replace(use_lmc=False))
    assert off.l_lmc == on.l_lmc
    assert off.total == pytest.approx(on.total - on.l_lmc, rel=1e-12)
    assert on.total == pytest.approx(on.l_rgb + on.l_flow + on.l_rf + on.l_lmc, rel=1e-12)
    no_rf, _, _ = forward_losses(model, b, cfg.replace(use_rf=False))
    assert no_rf.l_rf == 0.0


def test_pretrain_deterministic_over_ten_steps(tiny_videos):
    cfg = small(epochs=5)
    m1, log1 = pretrain(cfg, tiny_videos)
    m2, log2 = pretrain(cfg, tiny_videos)
    assert len(log1.rows) == 10
    assert log1.rows == log2.rows
    for k, v in m1.named_arrays().items():
        np.testing.assert_array_equal(v, m2.named_arrays()[k])
    _, log3 = pretrain(cfg.replace(seed=1), tiny_videos)
    assert log3.rows != log1.rows


def test_pretrain_updates_weights_and_banks(tiny_videos):
    cfg = small(epochs=1)
    init = MSCLModel(cfg)
    model, log = pretrain(cfg, tiny_videos)
    assert not np.array_equal(model.rgb.arrays()["stage3.w"], init.rgb.arrays()["stage3.w"])
    # warm batch + two steps
    assert len(model.rgb_bank) == 12
    assert all(np.isfinite(r).all() for r in np.array(log.rows))


def test_pretrain_validation(tiny_videos):
    with pytest.raises(ValueError, match="batch_size"):
        pretrain(small(batch_size=16, bank_size=16), tiny_videos)
    with pytest.raises(ValueError, match="at least one video"):
        pretrain(small(), [])


def test_metrics_tsv_roundtrip(tmp_path, tiny_videos):
    _, log = pretrain(small(epochs=1), tiny_videos)
    path = tmp_path / "m.tsv"
    log.write(path)
    header = path.read_text().splitlines()[0]
    assert header.split("\t") == list(METRIC_COLUMNS)
    assert read_metrics(path) == log.rows
    with pytest.raises(ValueError):
        MetricsLog(rows=[(5, 0, 0, 0, 0, 0, 0)]).append(5, 0.1, None)


def test_bank_keys_come_from_key_encoder(tiny_videos):
    from mscl import tensor as tn

    cfg = small()
    model = MSCLModel(cfg)
    # push the query encoder away from its momentum copy
    for p in model.rgb.params.values():
        p.data += 0.05
    model.rgb_bank.enqueue(np.eye(8)[:4])
    model.flow_bank.enqueue(np.eye(8)[4:])
    b = make_batch(tiny_videos[:4], cfg, np.random.default_rng(0))
    _, key_rgb, _ = forward_losses(model, b, cfg)
    with tn.no_grad():
        from_key = model.rgb_key.forward(b.rgb_k, local=False)[0].data
        from_query = model.rgb.forward(b.rgb_k, local=False)[0].data
    np.testing.assert_array_equal(key_rgb, from_key)
    assert not np.allclose(key_rgb, from_query)
