"""Episodic training loop: SGD with momentum, halving schedule, early stopping."""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError
from .classify import (
    SamplerConfig,
    conditional_log_softmax,
    intersection_log_prob_batch,
    naive_log_posterior_batch,
)
from .corruption import CLEAN, OcclusionPolicy
from .encoder import encode_batch, preprocess
from .episodes import prepare_episode, sample_episode
from .evaluate import DEFAULT_EVAL_SAMPLES, episode_accuracy, episode_prototypes

LOG_COLUMNS = ("epoch", "episodes_seen", "learning_rate", "mean_train_loss",
               "val_accuracy", "gamma", "sigma_eps_sq")


class TrainingDivergedError(RuntimeError):
    """A training step produced a non-finite loss or gradient."""


@dataclass
class TrainerConfig:
    """Hyperparameters for `fit`.

    An "epoch" is a fixed number of episodes (episodic sampling has no
    natural boundary); the learning rate halves every
    `halve_every_epochs` epochs and training stops after `patience`
    validation rounds without improvement. `occlusion` corrupts training
    and validation imagery (probability-gated per image) for the
    corrupt-regime protocol.
    """

    learning_rate: float = 1e-4
    halve_every_epochs: int = 50
    patience: int = 10
    max_epochs: int = 200
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    seed: int = 0
    gamma0: float = 0.01
    episodes_per_epoch: int = 100
    val_episodes: int = 40
    momentum: float = 0.9
    occlusion: OcclusionPolicy = CLEAN
    eval_samples: int = DEFAULT_EVAL_SAMPLES

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


class MomentumSgd:
    """Classic momentum update: v <- m*v + g, p <- p - lr*v."""

    def __init__(self, parameters, momentum=0.9):
        self.parameters = list(parameters)
        self.momentum = momentum
        self.velocities = [np.zeros_like(p.data) for p in self.parameters]

    def step(self, learning_rate):
        for p, v in zip(self.parameters, self.velocities):
            grad = p.grad if p.grad is not None else 0.0
            v *= self.momentum
            v += grad
            p.data = p.data - learning_rate * v
            p.grad = None


def episode_mean_loss(model, episode, sampler, noise_rng):
    """Scalar mean training loss over the episode's queries (tracked).

    Losses are computed for the whole query batch in one pass; the result
    matches averaging per-query losses with the corresponding noise
    slices.
    """
    protos = episode_prototypes(model, episode)
    means, variances = encode_batch(model, preprocess(model.config, episode.queries))
    targets = episode.query_targets
    n_queries = len(targets)
    if model.kind == "pn":
        log_probs = conditional_log_softmax(means, protos)          # (Q, C)
        picked = ad.sum(log_probs * np.eye(len(protos))[targets], axis=-1)
    elif sampler.method == "intersection":
        noise = noise_rng.normal(
            size=(sampler.samples_per_query, n_queries, model.config.embed_dim))
        picked = intersection_log_prob_batch(
            means, variances, protos, targets, sampler.samples_per_query, noise)
    else:
        noise = noise_rng.normal(
            size=(sampler.samples_per_query, n_queries, model.config.embed_dim))
        log_probs = naive_log_posterior_batch(
            means, variances, protos, sampler.samples_per_query, noise)
        picked = ad.sum(log_probs * np.eye(len(protos))[targets], axis=-1)
    return -ad.sum(picked) * (1.0 / n_queries)


def train_step(model, episode, config, noise_rng=None, optimizer=None, learning_rate=None):
    """One optimizer update from one episode; returns (model, mean loss).

    Supplying a persistent `optimizer` keeps momentum across steps; a
    fresh one is created otherwise. Aborts with diagnostics if the loss
    turns non-finite.
    """
    if noise_rng is None:
        noise_rng = np.random.default_rng(config.seed)
    if optimizer is None:
        optimizer = MomentumSgd(model.parameters(), config.momentum)
    lr = config.learning_rate if learning_rate is None else learning_rate
    try:
        loss = episode_mean_loss(model, episode, config.sampler, noise_rng)
        loss.backward()
    except NonFiniteError as err:
        raise TrainingDivergedError(
            f"non-finite loss on episode with classes {episode.class_ids.tolist()} "
            f"(lr={lr}, sampler={config.sampler.method}): {err}") from err
    optimizer.step(lr)
    return model, float(ad.value_of(loss))


def learning_rate_at(config, epoch):
    """Halving schedule; epoch is 1-based."""
    return config.learning_rate * 0.5 ** ((epoch - 1) // config.halve_every_epochs)


def fit(model, train_set, val_set, spec, config):
    """Train episodically with early stopping on validation accuracy.

    Returns (model restored to its best-validation parameters, log rows).
    Fully deterministic for a fixed config and seed: episode sampling,
    corruption, sampler noise, and validation noise all derive from
    `config.seed`.
    """
    root = np.random.SeedSequence(config.seed)
    episode_rng, occlusion_rng, noise_rng, val_rng, val_noise_root = (
        np.random.default_rng(s) for s in root.spawn(5))

    # one fixed validation episode set keeps the early-stopping signal stable
    val_episodes = [
        prepare_episode(sample_episode(val_set, spec, val_rng),
                        config.occlusion, config.occlusion, val_rng)
        for _ in range(config.val_episodes if config.max_epochs > 0 else 0)
    ]

    optimizer = MomentumSgd(model.parameters(), config.momentum)
    log = []
    best_acc = -np.inf
    best_params = None
    best_epoch = 0
    episodes_seen = 0

    for epoch in range(1, config.max_epochs + 1):
        lr = learning_rate_at(config, epoch)
        losses = []
        for _ in range(config.episodes_per_epoch):
            episode = sample_episode(train_set, spec, episode_rng)
            episode = prepare_episode(episode, config.occlusion, config.occlusion,
                                      occlusion_rng)
            _, loss = train_step(model, episode, config, noise_rng, optimizer, lr)
            losses.append(loss)
            episodes_seen += 1

        val_noise = np.random.default_rng(val_noise_root.integers(0, 2**63))
        val_acc = float(np.mean([
            episode_accuracy(model, ep, config.eval_samples, val_noise)
            for ep in val_episodes
        ]))
        log.append({
            "epoch": epoch,
            "episodes_seen": episodes_seen,
            "learning_rate": lr,
            "mean_train_loss": float(np.mean(losses)),
            "val_accuracy": val_acc,
            "gamma": float(ad.value_of(model.gamma)),
            "sigma_eps_sq": float(np.logaddexp(0.0, ad.value_of(model.gamma))),
        })
        if val_acc > best_acc:
            best_acc = val_acc
            best_params = model.clone_parameter_values()
            best_epoch = epoch
        elif epoch - best_epoch >= config.patience:
            break

    if best_params is not None:
        model.restore_parameter_values(best_params)
    return model, log


def write_log_csv(log_rows, out_path):
    lines = [",".join(LOG_COLUMNS)]
    for row in log_rows:
        lines.append(",".join(
            repr(row[c]) if isinstance(row[c], float) else str(row[c])
            for c in LOG_COLUMNS))
    with open(out_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
