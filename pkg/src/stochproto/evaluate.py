"""Episodic evaluation under clean/corrupt regimes, sweeps, and exports.

Stochastic models are scored by the 200-sample naive posterior (argmax,
ties to the lowest class index); deterministic models score queries at
their embedding means with unit class variances. Paired evaluation feeds
both models the same episodes and the same corrupted pixels so that
per-episode differences isolate the models.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import autodiff as ad
from .classify import conditional_log_softmax, naive_log_posterior_batch
from .corruption import CLEAN, OcclusionPolicy
from .encoder import encode_batch, preprocess, sigma_epsilon_sq
from .episodes import EpisodeSpec, prepare_episode, sample_episode
from .gaussians import DiagonalGaussian
from .prototypes import form_pn_prototype, form_prototype
from .synthetic import render

DEFAULT_EVAL_SAMPLES = 200


@dataclass
class EvalConfig:
    episodes: int = 1000
    spec: EpisodeSpec = field(default_factory=EpisodeSpec)
    support_policy: OcclusionPolicy = CLEAN
    query_policy: OcclusionPolicy = CLEAN
    eval_samples: int = DEFAULT_EVAL_SAMPLES

    def __post_init__(self):
        if self.episodes < 1 or self.eval_samples < 1:
            raise ValueError("episodes and eval_samples must be >= 1")

    def echo(self):
        return {
            "episodes": self.episodes,
            "ways": self.spec.ways,
            "shots": self.spec.shots,
            "queries_per_class": self.spec.queries_per_class,
            "support_policy": self.support_policy.mode,
            "query_policy": self.query_policy.mode,
            "eval_samples": self.eval_samples,
        }


@dataclass
class EvalReport:
    mean_accuracy: float
    std_error: float
    per_episode_accuracy: list
    config: dict

    @classmethod
    def from_accuracies(cls, accuracies, config):
        acc = np.asarray(accuracies, dtype=np.float64)
        stderr = float(acc.std(ddof=1) / math.sqrt(len(acc))) if len(acc) > 1 else 0.0
        return cls(float(acc.mean()), stderr, [float(a) for a in acc], dict(config))


def episode_prototypes(model, episode):
    """Encode supports and build one prototype per episode class."""
    protos = []
    if model.kind == "pn":
        for slot, group in enumerate(episode.support):
            means, _ = encode_batch(model, preprocess(model.config, group))
            protos.append(form_pn_prototype([means[i] for i in range(len(group))], slot))
        return protos
    eps = sigma_epsilon_sq(model)
    for slot, group in enumerate(episode.support):
        means, variances = encode_batch(model, preprocess(model.config, group))
        embeddings = [DiagonalGaussian(means[i], variances[i]) for i in range(len(group))]
        protos.append(form_prototype(embeddings, eps, slot))
    return protos


def episode_predictions(model, episode, eval_samples, noise_rng):
    """Predicted episode-class index for each query (ties to lowest index)."""
    protos = episode_prototypes(model, episode)
    means, variances = encode_batch(model, preprocess(model.config, episode.queries))
    if model.kind == "pn":
        log_probs = conditional_log_softmax(means, protos)
    else:
        n_queries = episode.queries.shape[0]
        noise = noise_rng.normal(size=(eval_samples, n_queries, model.config.embed_dim))
        log_probs = naive_log_posterior_batch(means, variances, protos,
                                              eval_samples, noise)
    return np.argmax(ad.value_of(log_probs), axis=-1)


def episode_accuracy(model, episode, eval_samples, noise_rng):
    predictions = episode_predictions(model, episode, eval_samples, noise_rng)
    return float((predictions == episode.query_targets).mean())


def _episode_stream(dataset, config, seed):
    root = np.random.SeedSequence(seed)
    episode_rng, occlusion_rng, noise_rng = (np.random.default_rng(s) for s in root.spawn(3))
    for _ in range(config.episodes):
        episode = sample_episode(dataset, config.spec, episode_rng)
        episode = prepare_episode(episode, config.support_policy, config.query_policy,
                                  occlusion_rng)
        yield episode, noise_rng


def evaluate(model, dataset, config, seed=0):
    """Mean episodic accuracy over `config.episodes` sampled episodes."""
    accuracies = [
        episode_accuracy(model, episode, config.eval_samples, noise_rng)
        for episode, noise_rng in _episode_stream(dataset, config, seed)
    ]
    return EvalReport.from_accuracies(accuracies, config.echo())


def evaluate_paired(model_a, model_b, dataset, config, seed=0):
    """Score two models on identical episodes and corruptions.

    Returns (report_a, report_b, deltas, sign_test_p) where the one-sided
    sign test asks whether model_a beats model_b more often than chance
    across episodes (ties discarded).
    """
    acc_a, acc_b = [], []
    for episode, noise_rng in _episode_stream(dataset, config, seed):
        state = noise_rng.bit_generator.state
        acc_a.append(episode_accuracy(model_a, episode, config.eval_samples, noise_rng))
        noise_rng.bit_generator.state = state  # same eval noise for both models
        acc_b.append(episode_accuracy(model_b, episode, config.eval_samples, noise_rng))
    deltas = np.asarray(acc_a) - np.asarray(acc_b)
    wins = int((deltas > 0).sum())
    losses = int((deltas < 0).sum())
    if wins + losses == 0:
        p_value = 1.0
    else:
        p_value = float(stats.binomtest(wins, wins + losses, alternative="greater").pvalue)
    return (EvalReport.from_accuracies(acc_a, config.echo()),
            EvalReport.from_accuracies(acc_b, config.echo()),
            deltas, p_value)


def uncertainty_sweep(model, synth_spec, noise_kind, levels, samples_per_level=32, seed=0):
    """Mean predicted variance per embedding axis at each corruption level.

    Renders every class center under the requested corruption, encodes the
    renders, and averages the predicted variances. `hue` levels are
    per-pixel hue-noise standard deviations in degrees (0 means clean);
    `leg` levels are leg-length fractions.
    """
    if model.config.embed_dim != 2:
        raise ValueError("uncertainty sweeps require a 2-D embedding model")
    if noise_kind not in ("hue", "leg"):
        raise ValueError(f"unknown noise kind {noise_kind!r}")
    rng = np.random.default_rng(seed)
    rows = []
    for level in levels:
        images = []
        for c in range(synth_spec.num_classes):
            orientation, hue = synth_spec.class_center(c)
            for _ in range(samples_per_level):
                if noise_kind == "hue":
                    std = float(level) if level > 0 else None
                    images.append(render(synth_spec, orientation, hue,
                                         hue_noise_std=std, rng=rng))
                else:
                    images.append(render(synth_spec, orientation, hue,
                                         leg_fraction=float(level)))
        _, variances = encode_batch(model, preprocess(model.config, np.stack(images)))
        mean_var = ad.value_of(variances).mean(axis=0)
        rows.append((float(level), float(mean_var[0]), float(mean_var[1])))
    return rows


def export_embeddings(model, dataset, out_path):
    """CSV of per-instance embedding means and variances; returns row count."""
    dim = model.config.embed_dim
    header = ["instance_id", "label", "orientation", "hue"]
    header += [f"mu_{i}" for i in range(dim)] + [f"var_{i}" for i in range(dim)]
    lines = [",".join(header)]
    chunk = 256
    for start in range(0, len(dataset), chunk):
        rows = dataset.inputs[start:start + chunk]
        means, variances = encode_batch(model, preprocess(model.config, rows))
        means, variances = ad.value_of(means), ad.value_of(variances)
        for i in range(rows.shape[0]):
            idx = start + i
            latent = (dataset.latents[idx] if dataset.latents is not None else ("", ""))
            fields = [str(idx), str(int(dataset.labels[idx])),
                      _fmt(latent[0]), _fmt(latent[1])]
            fields += [_fmt(v) for v in means[i]] + [_fmt(v) for v in variances[i]]
            lines.append(",".join(fields))
    Path(out_path).write_text("\n".join(lines) + "\n")
    return len(dataset)


def _fmt(value):
    if value == "":
        return ""
    return repr(float(value))


def write_report(report, out_path):
    lines = [
        f"mean_accuracy={report.mean_accuracy!r}",
        f"std_error={report.std_error!r}",
    ]
    for key in sorted(report.config):
        lines.append(f"{key}={report.config[key]}")
    lines.append("per_episode_accuracy=" + ",".join(repr(a) for a in report.per_episode_accuracy))
    Path(out_path).write_text("\n".join(lines) + "\n")


def read_report(path):
    entries = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            entries[key] = value
    per_episode = [float(v) for v in entries.pop("per_episode_accuracy").split(",") if v]
    mean = float(entries.pop("mean_accuracy"))
    stderr = float(entries.pop("std_error"))
    return EvalReport(mean, stderr, per_episode, entries)
