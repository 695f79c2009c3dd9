"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The trained-model criteria share session fixtures, so the whole module
runs in minutes on one core. Tolerances are pinned here and nowhere
else. Run with `pytest tests/test_acceptance.py -v -s` to see the
per-criterion lines as they complete.
"""

import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from stochproto import autodiff as ad
from stochproto.classify import (
    QuadratureGrid,
    SamplerConfig,
    intersection_posterior,
    naive_posterior,
    quadrature_posterior,
)
from stochproto.corruption import OcclusionPolicy, occlude
from stochproto.dataset import split_by_instance
from stochproto.encoder import EncoderConfig, encode_batch, init_encoder, preprocess
from stochproto.episodes import EpisodeSpec, sample_episode
from stochproto.evaluate import EvalConfig, evaluate, evaluate_paired, uncertainty_sweep
from stochproto.gaussians import DiagonalGaussian, log_density, product, product_identity_factor
from stochproto.prototypes import Prototype
from stochproto.synthetic import SyntheticSpec, bayes_accuracy, generate_dataset
from stochproto.training import TrainerConfig, episode_mean_loss, fit

from test_classify import make_random_setup, total_variation


def check(num, condition, detail):
    verdict = "PASS" if condition else "FAIL"
    print(f"\n[{verdict}] criterion {num}: {detail}")
    assert condition, f"criterion {num} failed: {detail}"


# ---------------------------------------------------------------------------
# Shared training fixtures (pixel-mode synthetic task).
# ---------------------------------------------------------------------------

PIXEL_ENCODER = EncoderConfig(input_dim=768, hidden_dims=(64, 64), embed_dim=2, downsample=4)
EPISODE_SPEC = EpisodeSpec(ways=4, shots=2, queries_per_class=5)


@pytest.fixture(scope="session")
def pixel_data():
    dataset = generate_dataset(SyntheticSpec(), 250, seed=1, mode="pixels")
    train, val = split_by_instance(dataset, 0.2, seed=2)
    test = generate_dataset(SyntheticSpec(), 120, seed=900, mode="pixels")
    return train, val, test


@pytest.fixture(scope="session")
def trained_spe(pixel_data):
    """The criterion-5 model: intersection sampling, one sample per query."""
    train, val, _ = pixel_data
    model = init_encoder(PIXEL_ENCODER, episode_support_count=8, gamma0=0.01,
                         seed=3, kind="spe")
    config = TrainerConfig(learning_rate=3e-3, halve_every_epochs=40, max_epochs=60,
                           patience=15, episodes_per_epoch=100, val_episodes=40,
                           sampler=SamplerConfig("intersection", 1), seed=4)
    model, _ = fit(model, train, val, EPISODE_SPEC, config)
    return model


def test_criterion_01_gaussian_algebra():
    rng = np.random.default_rng(11)

    zs = np.linspace(-20.0, 20.0, 100_001)
    dz = zs[1] - zs[0]
    worst_density = 0.0
    for _ in range(10):
        parts = [DiagonalGaussian(rng.normal(scale=2.0, size=1),
                                  rng.uniform(0.3, 3.0, size=1)) for _ in range(3)]
        raw = np.ones_like(zs)
        for g in parts:
            raw *= np.exp(log_density(g, zs[:, None]))
        normalized = raw / (raw.sum() * dz)
        fused_density = np.exp(log_density(product(parts), zs[:, None]))
        worst_density = max(worst_density, np.abs(fused_density - normalized).max())

    worst_identity = 0.0
    for _ in range(1000):
        x = DiagonalGaussian(rng.normal(scale=3.0, size=2), rng.uniform(0.1, 4.0, size=2))
        y = DiagonalGaussian(rng.normal(scale=3.0, size=2), rng.uniform(0.1, 4.0, size=2))
        intersection, log_pref = product_identity_factor(x, y)
        z = rng.normal(scale=4.0, size=2)
        lhs = log_density(x, z) + log_density(y, z)
        rhs = log_density(intersection, z) + log_pref
        worst_identity = max(worst_identity, abs(lhs - rhs))

    check(1, worst_density < 1e-8 and worst_identity < 1e-10,
          f"product vs quadrature max density error {worst_density:.2e} (< 1e-8); "
          f"two-density split identity max error {worst_identity:.2e} (< 1e-10)")


def test_criterion_02_estimator_consistency():
    rng = np.random.default_rng(12)
    worst_tv = 0.0
    worst_log_gap = 0.0
    for _ in range(50):
        x, protos = make_random_setup(rng)
        oracle = quadrature_posterior(x, protos, QuadratureGrid(points_per_axis=601))

        post = naive_posterior(x, protos, 100_000, rng.normal(size=(100_000, 2)))
        worst_tv = max(worst_tv, total_variation(post.probs, oracle.probs))

        target = int(rng.integers(len(protos)))
        estimates = [
            float(ad.value_of(intersection_posterior(
                x, protos, target, 10_000, rng.normal(size=(10_000, 2)))))
            for _ in range(100)
        ]
        gap = abs(np.mean(estimates) - float(oracle.log_probs[target]))
        worst_log_gap = max(worst_log_gap, gap)

    check(2, worst_tv < 1e-2 and worst_log_gap < 1e-2,
          f"50 setups: naive s=1e5 worst TV {worst_tv:.4f} (< 0.01); intersection "
          f"s=1e4 x 100 draws worst log-prob gap {worst_log_gap:.4f} (< 0.01)")


def test_criterion_03_pn_reduction():
    rng = np.random.default_rng(13)
    worst = 0.0
    for _ in range(100):
        shared_var = rng.uniform(0.3, 2.0)
        means = rng.normal(scale=2.0, size=(4, 2))
        protos = [Prototype(c, DiagonalGaussian(means[c], np.full(2, shared_var)),
                            np.full(2, shared_var)) for c in range(4)]
        mu_x = rng.normal(scale=2.0, size=2)
        x = DiagonalGaussian(mu_x, np.zeros(2))  # floored to 1e-8
        marginal = quadrature_posterior(x, protos).probs
        d2 = ((mu_x - means) ** 2).sum(axis=1)
        pn = np.exp(-d2 / (2 * shared_var))
        pn /= pn.sum()
        worst = max(worst, np.abs(marginal - pn).max())
    check(3, worst < 1e-6,
          f"floor-variance marginal posterior vs distance softmax, 100 cases, "
          f"worst abs gap {worst:.2e} (< 1e-6)")


def test_criterion_04_gradient_integrity():
    rng = np.random.default_rng(14)
    feature_ds = generate_dataset(SyntheticSpec(), 30, seed=41, mode="features")
    model = init_encoder(EncoderConfig(4, (8,), 2), episode_support_count=8, seed=5)
    sampler = SamplerConfig("intersection", 1)
    worst = 0.0
    for instance in range(20):
        episode = sample_episode(feature_ds, EpisodeSpec(4, 2, 1),
                                 np.random.default_rng(instance))
        noise_seed = 1000 + instance

        loss = episode_mean_loss(model, episode, sampler, np.random.default_rng(noise_seed))
        loss.backward()
        grads = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                 for p in model.parameters()]

        for pi, p in enumerate(model.parameters()):
            base = p.data.copy()
            flat = base.ravel()
            for j in range(flat.size):
                fd = 0.0
                for sign in (1.0, -1.0):
                    p.data = base.copy()
                    p.data.ravel()[j] += sign * 1e-5
                    val = float(ad.value_of(episode_mean_loss(
                        model, episode, sampler, np.random.default_rng(noise_seed))))
                    fd += sign * val
                fd /= 2e-5
                analytic = grads[pi].ravel()[j]
                denom = max(abs(fd), abs(analytic), 1e-6)
                worst = max(worst, abs(fd - analytic) / denom)
            p.data = base
            p.grad = None
    check(4, worst < 1e-3,
          f"training-loss gradients vs central differences over 20 instances "
          f"(all weights, biases, gamma): worst relative error {worst:.2e} (< 1e-3)")


def test_criterion_05_synthetic_task(pixel_data, trained_spe):
    _, _, test = pixel_data
    report = evaluate(trained_spe, test, EvalConfig(episodes=500, spec=EPISODE_SPEC), seed=5)
    bayes = bayes_accuracy(SyntheticSpec(), 100_000, seed=17)
    model_ok = report.mean_accuracy >= 0.80
    bayes_ok = abs(bayes - 0.871) <= 0.01
    ceiling_ok = report.mean_accuracy <= bayes + 3 * report.std_error
    check(5, model_ok and bayes_ok and ceiling_ok,
          f"intersection s=1 SPE test accuracy {report.mean_accuracy:.4f} (>= 0.80), "
          f"generative-classifier accuracy {bayes:.4f} (0.871 +/- 0.01), "
          f"model below generative ceiling (+3 SE)")


def test_criterion_07_sampler_efficiency():
    dataset = generate_dataset(SyntheticSpec(), 250, seed=1, mode="features")
    train, val = split_by_instance(dataset, 0.2, seed=2)

    def short_run(method, samples, seed):
        model = init_encoder(EncoderConfig(4, (32,), 2), episode_support_count=8, seed=seed)
        config = TrainerConfig(learning_rate=1e-3, max_epochs=6, patience=6,
                               episodes_per_epoch=60, val_episodes=30,
                               sampler=SamplerConfig(method, samples), seed=seed + 1000)
        _, log = fit(model, train, val, EPISODE_SPEC, config)
        return max(row["val_accuracy"] for row in log)

    seeds = (1, 2, 3, 4, 5)
    means = {}
    for method, samples in (("intersection", 1), ("naive", 1), ("naive", 8), ("naive", 64)):
        means[(method, samples)] = float(np.mean([short_run(method, samples, s)
                                                  for s in seeds]))
    i1, n1 = means[("intersection", 1)], means[("naive", 1)]
    n8, n64 = means[("naive", 8)], means[("naive", 64)]
    check(7, i1 >= n1 and n1 <= n8 <= n64,
          f"matched budgets, 5 seeds: intersection s=1 {i1:.4f} >= naive s=1 {n1:.4f}; "
          f"naive non-decreasing over s: {n1:.4f} <= {n8:.4f} <= {n64:.4f}")


def test_criterion_09_corruption_statistics():
    policy = OcclusionPolicy(mode="corrupt", per_unit_probability=1.0, unit_size=28)
    rng = np.random.default_rng(19)
    image = np.ones((32, 32), dtype=np.float32)
    n_draws = 1_000_000
    unoccluded = 0
    out_of_bounds = 0
    for _ in range(n_draws):
        out = occlude(image, policy, rng)
        touched = out != 1.0
        if not touched.any():
            unoccluded += 1
            continue
        if touched[28:, :].any() or touched[:, 28:].any():
            out_of_bounds += 1
    freq = unoccluded / n_draws
    expected = 2 / 29 - 1 / 29**2
    check(9, out_of_bounds == 0 and abs(freq - expected) <= 0.002,
          f"1e6 draws: zero out-of-bounds writes; unoccluded branch frequency "
          f"{freq:.5f} vs {expected:.5f} (+/- 0.002)")


def test_criterion_10_determinism(tmp_path_factory):
    base = tmp_path_factory.mktemp("determinism")

    def run(args):
        proc = subprocess.run(
            [sys.executable, "-m", "stochproto.cli", "--threads", "1", *args],
            capture_output=True, text=True, cwd=str(Path(__file__).resolve().parent.parent))
        assert proc.returncode == 0, proc.stderr
        return proc

    outputs = {}
    for tag in ("a", "b"):
        root = base / tag
        run(["gen-data", "--per-class", "12", "--seed", "5", "--out",
             str(root / "data"), "--feature-mode"])
        run(["train", "--data", str(root / "data"), "--out", str(root / "run"),
             "--hidden", "16", "--learning-rate", "0.003", "--max-epochs", "2",
             "--episodes-per-epoch", "10", "--val-episodes", "4", "--seed", "3"])
        run(["eval", "--model-path", str(root / "run" / "model"), "--data",
             str(root / "data"), "--out", str(root / "eval"), "--episodes", "10",
             "--eval-samples", "16", "--seed", "2"])
        outputs[tag] = {
            p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "resolved_config.json"
        }
    identical = outputs["a"].keys() == outputs["b"].keys() and all(
        outputs["a"][k] == outputs["b"][k] for k in outputs["a"])
    check(10, identical,
          f"gen-data + train + eval re-runs with --threads 1 produced byte-identical "
          f"outputs ({len(outputs['a'])} files compared)")
