import math

import numpy as np
import pytest

import tripcast


def tiny_config(tmp_seed=5):
    c = tripcast.parse_config(
        """
        [model]
        d_model = 8
        n_heads = 2
        ff_dim = 16
        step_embed_dim = 8
        [train]
        batch = 4
        max_steps = 8
        eval_every = 4
        [sample]
        paths = 5
        limit = 2
        [synth]
        subjects = 150
        """
    )
    c.seed = tmp_seed
    c.finalize()
    return c


def test_schedule_endpoints():
    s = tripcast.make_schedule()
    assert s.T == 50
    assert s.alpha[0] == 1.0
    assert s.beta[1] == pytest.approx(1e-4, rel=1e-12)
    assert s.beta[50] == pytest.approx(0.5, rel=1e-12)
    assert s.alpha[50] < 1e-3
    assert np.all(np.diff(s.alpha[1:]) < 0)


def test_forward_then_exact_reverse_recovers_x0():
    s = tripcast.make_schedule()
    x0 = np.array([0.7], dtype=np.float32)
    mask = np.array([1], dtype=np.uint8)
    eps = np.array([0.3], dtype=np.float32)
    xt = tripcast.forward_noise(x0, mask, 1, eps, s)
    x = tripcast.reverse_step(xt, eps, 1, np.zeros(1, dtype=np.float32), s, mask)
    assert abs(float(x[0]) - 0.7) < 1e-5


def test_metrics():
    assert tripcast.crps_gaussian(0.0, 0.0, 2.0) == 2.0
    assert len(tripcast.quantile_levels) == 19
    q = tripcast.quantiles(np.arange(101, dtype=float))
    assert q["median"] == 50.0
    assert q["q"][0] == pytest.approx(5.0)
    point = np.full((2, 10), 3.0)
    assert tripcast.sacrps(point, np.array([3.0, 3.0])) == 0.0
    with pytest.raises(tripcast.Error):
        tripcast.sacrps(point, np.zeros(2))


def test_config_errors_carry_the_class():
    with pytest.raises(tripcast.Error, match="ConfigError"):
        tripcast.parse_config("[train]\nbatch = lots\n")


def test_end_to_end(tmp_path):
    c = tiny_config()
    planted, _ = tripcast.synth(c, tmp_path / "events.csv")
    counts, log = tripcast.preprocess(c, tmp_path / "events.csv", tmp_path / "data")
    assert counts["stays_underage"] == planted["stays_minor"]
    assert "discard" in log
    samples = tripcast.read_dataset(tmp_path / "data" / "train.bin")
    assert len(samples) == int(counts["train_samples"])
    assert samples[0]["conditional"]["value"].shape == (60,)
    assert samples[0]["target"]["mask"].shape == (30,)

    a, _ = tripcast.train(c, tmp_path / "data", tmp_path / "ta")
    b, _ = tripcast.train(c, tmp_path / "data", tmp_path / "tb")
    assert a["final_step"] == 8
    assert a["checkpoint_hash"] == b["checkpoint_hash"]
    assert np.all(np.isfinite(a["train_loss"]))

    forecasts, _ = tripcast.sample(c, tmp_path / "data", tmp_path / "ta" / "best.ckpt", tmp_path / "f")
    assert len(forecasts) == 2
    slot = forecasts[0]["slots"][0]
    assert slot["samples"].shape == (5,)
    assert slot["raw"].shape == (5,)
    assert forecasts[0]["seconds"] > 0

    m, _ = tripcast.evaluate(c, tmp_path / "f", tmp_path / "e")
    assert m["samples"] == 2
    assert math.isclose(m["sacrps"], m["sacrps_regrouped"], rel_tol=1e-12)
    files, _ = tripcast.report(tmp_path)
    assert "fan_chart.csv" in files
    with pytest.raises(tripcast.Error, match="IoError"):
        tripcast.report(tmp_path / "missing")
