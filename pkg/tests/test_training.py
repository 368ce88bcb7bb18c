"""Tests for nricci.training: config validation, the SGD loop, regimes."""

import numpy as np
import pytest

from nricci import data_io, training
from nricci.training import TrainConfig, TrainingDiverged


def _slice(ds, n):
    return ds.images[:n], ds.labels[:n]


class TestTrainConfig:
    def test_defaults_ce(self):
        cfg = TrainConfig(arch="15,20")
        assert cfg.regime == "ce"
        assert cfg.weight_decay is None
        assert cfg.at_eps is None

    def test_wd_default_filled(self):
        cfg = TrainConfig(arch="15,20", regime="wd")
        assert cfg.weight_decay == training.DEFAULT_WEIGHT_DECAY

    def test_at_defaults_filled(self):
        cfg = TrainConfig(arch="15,20", regime="at")
        assert cfg.at_eps == training.DEFAULT_AT_EPS
        assert cfg.at_steps == training.DEFAULT_AT_STEPS
        assert cfg.at_step_size == pytest.approx(2.5 * cfg.at_eps / cfg.at_steps)
        assert cfg.at_warmup_epochs == training.DEFAULT_AT_WARMUP_EPOCHS

    def test_unknown_regime(self):
        with pytest.raises(ValueError, match="regime"):
            TrainConfig(arch="15,20", regime="dropout")

    @pytest.mark.parametrize(
        "kw",
        [
            {"epochs": 0},
            {"epochs": -1},
            {"batch_size": 0},
            {"lr": 0.0},
            {"lr": -0.1},
            {"momentum": 1.0},
            {"momentum": -0.1},
        ],
    )
    def test_bad_numeric_settings(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(arch="15,20", **kw)

    def test_wd_knob_rejected_outside_wd(self):
        with pytest.raises(ValueError, match="wd-only"):
            TrainConfig(arch="15,20", regime="ce", weight_decay=1e-4)

    @pytest.mark.parametrize(
        "kw",
        [
            {"at_eps": 0.1},
            {"at_steps": 5},
            {"at_step_size": 0.01},
            {"at_warmup_epochs": 1},
        ],
    )
    def test_at_knobs_rejected_outside_at(self, kw):
        with pytest.raises(ValueError, match="at-only"):
            TrainConfig(arch="15,20", regime="wd", **kw)

    @pytest.mark.parametrize(
        "kw",
        [
            {"at_eps": 0.0},
            {"at_steps": 0},
            {"at_step_size": -0.01},
            {"at_warmup_epochs": -1},
        ],
    )
    def test_bad_at_settings(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(arch="15,20", regime="at", **kw)

    def test_nonpositive_weight_decay(self):
        with pytest.raises(ValueError, match="weight_decay"):
            TrainConfig(arch="15,20", regime="wd", weight_decay=0.0)

    def test_dict_roundtrip(self):
        cfg = TrainConfig(arch="15,25,20,15", regime="at", epochs=3, seed=7)
        again = TrainConfig.from_dict(cfg.to_dict())
        assert again == cfg

    def test_from_dict_rejects_unknown_keys(self):
        d = TrainConfig(arch="15,20").to_dict()
        d["optimizer"] = "adam"
        with pytest.raises(ValueError, match="optimizer"):
            TrainConfig.from_dict(d)


class TestTrainLoop:
    def test_ce_learns(self, mnist_train):
        x, y = _slice(mnist_train, 3000)
        net, hist = training.train(x, y, TrainConfig(arch="15,20", epochs=3, seed=0))
        assert len(hist) == 3
        epochs = [row[0] for row in hist]
        assert epochs == [1, 2, 3]
        assert hist[-1][2] > 0.7  # train accuracy
        secs = [row[3] for row in hist]
        assert all(b >= a for a, b in zip(secs, secs[1:]))

    def test_meta_recorded(self, mnist_train):
        x, y = _slice(mnist_train, 500)
        cfg = TrainConfig(arch="15,20", epochs=1, seed=3)
        net, _ = training.train(x, y, cfg)
        assert net.meta["regime"] == "ce"
        assert net.meta["seed"] == 3
        assert TrainConfig.from_dict(net.meta["train_config"]) == cfg

    def test_same_seed_reproduces(self, mnist_train):
        x, y = _slice(mnist_train, 1000)
        cfg = TrainConfig(arch="15,20", epochs=2, seed=5)
        net_a, hist_a = training.train(x, y, cfg)
        net_b, hist_b = training.train(x, y, cfg)
        for pa, pb in zip(net_a.parameter_arrays(), net_b.parameter_arrays()):
            np.testing.assert_array_equal(pa, pb)
        assert [r[:3] for r in hist_a] == [r[:3] for r in hist_b]

    def test_different_seed_differs(self, mnist_train):
        x, y = _slice(mnist_train, 1000)
        net_a, _ = training.train(x, y, TrainConfig(arch="15,20", epochs=1, seed=0))
        net_b, _ = training.train(x, y, TrainConfig(arch="15,20", epochs=1, seed=1))
        diffs = [
            float(np.abs(pa - pb).max())
            for pa, pb in zip(net_a.parameter_arrays(), net_b.parameter_arrays())
        ]
        assert max(diffs) > 1e-6

    def test_log_path_written(self, mnist_train, tmp_path):
        x, y = _slice(mnist_train, 500)
        log = tmp_path / "train_log.csv"
        training.train(x, y, TrainConfig(arch="15,20", epochs=2, seed=0), log_path=log)
        header, rows = data_io.read_csv(log)
        assert header == ["epoch", "loss", "accuracy", "seconds"]
        assert len(rows) == 2
        assert float(rows[0][1]) > 0.0

    def test_empty_training_set(self):
        with pytest.raises(ValueError, match="empty"):
            training.train(
                np.zeros((0, 784)), np.zeros(0, dtype=np.int64),
                TrainConfig(arch="15,20"),
            )

    def test_divergence_detected(self, mnist_train):
        x, y = _slice(mnist_train, 500)
        with pytest.raises(TrainingDiverged):
            training.train(x, y, TrainConfig(arch="15,20", epochs=3, seed=0, lr=1e4))


class TestRegimes:
    def test_wd_shrinks_weights(self, mnist_train):
        x, y = _slice(mnist_train, 1000)
        net_ce, _ = training.train(x, y, TrainConfig(arch="15,20", epochs=2, seed=0))
        net_wd, _ = training.train(
            x, y, TrainConfig(arch="15,20", regime="wd", epochs=2, seed=0,
                              weight_decay=0.05),
        )
        norm_ce = sum(
            float(np.square(p).sum())
            for p, k in zip(net_ce.parameter_arrays(), net_ce.parameter_kinds())
            if k == "weight"
        )
        norm_wd = sum(
            float(np.square(p).sum())
            for p, k in zip(net_wd.parameter_arrays(), net_wd.parameter_kinds())
            if k == "weight"
        )
        assert norm_wd < 0.5 * norm_ce

    def test_at_trains_above_chance(self, mnist_train):
        x, y = _slice(mnist_train, 2000)
        cfg = TrainConfig(arch="15,20", regime="at", epochs=4, seed=0)
        net, hist = training.train(x, y, cfg)
        assert hist[-1][2] > 0.35
        assert net.meta["regime"] == "at"

    def test_at_more_robust_than_ce_small_scale(self, mnist_train):
        # Cheap directional check; the full-protocol comparison lives in
        # the acceptance suite.
        from nricci import robustness

        x, y = _slice(mnist_train, 3000)
        net_ce, _ = training.train(x, y, TrainConfig(arch="15,20", epochs=4, seed=0))
        net_at, _ = training.train(
            x, y, TrainConfig(arch="15,20", regime="at", epochs=4, seed=0),
        )
        xe, ye = mnist_train.images[3000:3300], mnist_train.labels[3000:3300]
        cfg = robustness.AttackConfig(n_steps=10, n_restarts=1, seed=0)
        robust = {}
        for name, net in (("ce", net_ce), ("at", net_at)):
            hits = 0
            for i in range(xe.shape[0]):
                if int(net.predict(xe[i].reshape(1, -1))[0]) != int(ye[i]):
                    continue
                if robustness.pgd_attack(net, xe[i], int(ye[i]), 0.1, cfg,
                                         example_index=i) is None:
                    hits += 1
            robust[name] = hits / xe.shape[0]
        assert robust["at"] > robust["ce"]


class TestEvaluateAccuracy:
    def test_known_values(self, mnist_train):
        x, y = _slice(mnist_train, 64)
        net, _ = training.train(x, y, TrainConfig(arch="15,20", epochs=1, seed=0))
        acc = training.evaluate_accuracy(net, x, y)
        preds = net.predict(x)
        assert acc == pytest.approx(float((preds == y).mean()))

    def test_batching_invariant(self, mnist_train):
        x, y = _slice(mnist_train, 300)
        net, _ = training.train(x, y, TrainConfig(arch="15,20", epochs=1, seed=0))
        a = training.evaluate_accuracy(net, x, y, batch_size=7)
        b = training.evaluate_accuracy(net, x, y, batch_size=512)
        assert a == b

    def test_empty_rejected(self, mnist_train):
        x, y = _slice(mnist_train, 10)
        net, _ = training.train(x, y, TrainConfig(arch="15,20", epochs=1, seed=0))
        with pytest.raises(ValueError):
            training.evaluate_accuracy(net, np.zeros((0, 784)), np.zeros(0))
