"""Training loop behavior: updates, schedule, early stopping, determinism."""

import math

import numpy as np
import pytest
from scipy import stats

from stochproto import autodiff as ad
from stochproto.classify import SamplerConfig
from stochproto.dataset import split_by_instance
from stochproto.encoder import EncoderConfig, init_encoder
from stochproto.episodes import EpisodeSpec, sample_episode
from stochproto.synthetic import SyntheticSpec, generate_dataset
from stochproto.training import (
    TrainerConfig,
    TrainingDivergedError,
    episode_mean_loss,
    fit,
    learning_rate_at,
    train_step,
    write_log_csv,
)


@pytest.fixture(scope="module")
def feature_data():
    ds = generate_dataset(SyntheticSpec(), 60, seed=101, mode="features")
    return split_by_instance(ds, 0.2, seed=1)


def fresh_model(seed, hidden=(16,)):
    return init_encoder(EncoderConfig(4, hidden, 2), episode_support_count=8, seed=seed)


SPEC = EpisodeSpec(ways=4, shots=2, queries_per_class=5)


class TestTrainStep:
    def test_zero_learning_rate_is_identity(self, feature_data):
        train, _ = feature_data
        model = fresh_model(0)
        before = [p.data.copy() for p in model.parameters()]
        episode = sample_episode(train, SPEC, np.random.default_rng(0))
        config = TrainerConfig(learning_rate=0.0)
        train_step(model, episode, config, np.random.default_rng(1))
        for p, b in zip(model.parameters(), before):
            np.testing.assert_array_equal(p.data, b)

    def test_initial_loss_near_log_ways(self, feature_data):
        train, _ = feature_data
        losses = []
        for seed in range(10):
            model = fresh_model(seed)
            episode = sample_episode(train, SPEC, np.random.default_rng(seed))
            loss = episode_mean_loss(model, episode, SamplerConfig("intersection", 1),
                                     np.random.default_rng(seed))
            losses.append(float(ad.value_of(loss)))
        assert abs(np.mean(losses) - math.log(4.0)) < 0.7

    def test_one_step_reduces_loss_on_average(self, feature_data):
        train, _ = feature_data
        improved = 0
        n_models = 20
        for seed in range(n_models):
            model = fresh_model(seed)
            episode = sample_episode(train, SPEC, np.random.default_rng(seed))
            config = TrainerConfig(learning_rate=1e-3,
                                   sampler=SamplerConfig("intersection", 1))
            before = float(ad.value_of(episode_mean_loss(
                model, episode, config.sampler, np.random.default_rng(seed))))
            train_step(model, episode, config, np.random.default_rng(seed))
            after = float(ad.value_of(episode_mean_loss(
                model, episode, config.sampler, np.random.default_rng(seed))))
            improved += after < before
        p = stats.binomtest(improved, n_models, alternative="greater").pvalue
        assert p < 0.05

    def test_divergence_reported_with_diagnostics(self, feature_data):
        train, _ = feature_data
        model = fresh_model(3)
        model.weights[0].data[:] = 1e300  # force an overflow in the forward pass
        episode = sample_episode(train, SPEC, np.random.default_rng(0))
        with pytest.raises(TrainingDivergedError, match="classes"):
            train_step(model, episode, TrainerConfig(), np.random.default_rng(0))

    def test_pn_model_trains_through_same_harness(self, feature_data):
        train, _ = feature_data
        model = init_encoder(EncoderConfig(4, (16,), 2), 8, seed=4, kind="pn")
        episode = sample_episode(train, SPEC, np.random.default_rng(0))
        before = [p.data.copy() for p in model.weights]
        _, loss = train_step(model, episode, TrainerConfig(learning_rate=1e-2),
                             np.random.default_rng(1))
        assert np.isfinite(loss)
        assert any(not np.array_equal(p.data, b)
                   for p, b in zip(model.weights, before))


class TestSchedule:
    def test_halving_boundaries(self):
        config = TrainerConfig(learning_rate=0.4, halve_every_epochs=2)
        rates = [learning_rate_at(config, e) for e in range(1, 7)]
        assert rates == [0.4, 0.4, 0.2, 0.2, 0.1, 0.1]


class TestFit:
    def test_max_epochs_zero_is_noop(self, feature_data):
        train, val = feature_data
        model = fresh_model(5)
        before = [p.data.copy() for p in model.parameters()]
        model, log = fit(model, train, val, SPEC, TrainerConfig(max_epochs=0))
        assert log == []
        for p, b in zip(model.parameters(), before):
            np.testing.assert_array_equal(p.data, b)

    def test_log_schema_and_schedule(self, feature_data, tmp_path):
        train, val = feature_data
        model = fresh_model(6)
        config = TrainerConfig(learning_rate=0.002, halve_every_epochs=2, max_epochs=4,
                               patience=10, episodes_per_epoch=5, val_episodes=3, seed=7)
        _, log = fit(model, train, val, SPEC, config)
        assert [row["epoch"] for row in log] == [1, 2, 3, 4]
        assert [row["learning_rate"] for row in log] == [0.002, 0.002, 0.001, 0.001]
        assert [row["episodes_seen"] for row in log] == [5, 10, 15, 20]
        for row in log:
            assert np.isfinite(row["gamma"])
            assert row["sigma_eps_sq"] > 0
        write_log_csv(log, tmp_path / "log.csv")
        header = (tmp_path / "log.csv").read_text().splitlines()[0]
        assert header == ("epoch,episodes_seen,learning_rate,mean_train_loss,"
                          "val_accuracy,gamma,sigma_eps_sq")

    def test_full_run_determinism(self, feature_data):
        train, val = feature_data
        logs, params = [], []
        for _ in range(2):
            model = fresh_model(8)
            config = TrainerConfig(learning_rate=1e-3, max_epochs=3, patience=5,
                                   episodes_per_epoch=8, val_episodes=3, seed=9)
            model, log = fit(model, train, val, SPEC, config)
            logs.append(log)
            params.append([p.data.copy() for p in model.parameters()])
        assert logs[0] == logs[1]
        for a, b in zip(*params):
            np.testing.assert_array_equal(a, b)

    def test_early_stopping_restores_best(self, feature_data):
        train, val = feature_data
        model = fresh_model(10)
        config = TrainerConfig(learning_rate=5e-3, max_epochs=40, patience=3,
                               episodes_per_epoch=10, val_episodes=5, seed=11)
        model, log = fit(model, train, val, SPEC, config)
        assert len(log) < 40  # patience kicked in
        best_epoch = max(log, key=lambda r: r["val_accuracy"])["epoch"]
        assert log[-1]["epoch"] - best_epoch >= config.patience
