"""Class posteriors for query embeddings: exact, sampled, and oracle routes.

The class posterior marginalizes a per-point softmax over the query's
embedding distribution. That integral has no closed form, so this module
provides two Monte-Carlo estimators plus a low-dimensional quadrature
oracle used for verification:

* naive: draw z from the query embedding, average the softmax.
* intersection: rewrite the target-class numerator as a product-identity
  split, sample from the (much narrower) intersection Gaussian, and
  average the reciprocal of the summed class densities. Only the target
  class needs sampling, which makes single-sample training viable.

All probability math stays in log space; probabilities only materialize
for reporting.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from . import autodiff as ad
from .gaussians import LOG_TWO_PI, log_density, product_identity_factor, sample


@dataclass
class SamplerConfig:
    """Which estimator drives training, and how many draws per query."""

    method: str = "intersection"
    samples_per_query: int = 1

    def __post_init__(self):
        if self.method not in ("naive", "intersection"):
            raise ValueError(f"unknown sampler method {self.method!r}")
        if self.samples_per_query < 1:
            raise ValueError("samples_per_query must be >= 1")


@dataclass
class QuadratureGrid:
    """Tensor-product trapezoid rule over +/- span_sigmas of the query embedding."""

    points_per_axis: int = 801
    span_sigmas: float = 8.0


@dataclass
class ClassPosterior:
    """Log-probabilities over the episode's classes, tagged with provenance."""

    log_probs: object
    sample_count: int
    method: str

    def __post_init__(self):
        values = ad.value_of(self.log_probs)
        if not np.all(np.isfinite(values)):
            raise ValueError("class posterior contains non-finite log-probabilities")
        if self.method in ("naive", "quadrature", "deterministic"):
            total = np.exp(values).sum()
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"posterior probabilities sum to {total}, expected 1")

    @property
    def probs(self):
        return np.exp(ad.value_of(self.log_probs))

    def predicted_class(self):
        """Argmax class index; ties break toward the lowest index."""
        return int(np.argmax(ad.value_of(self.log_probs)))


def _as_noise(noise, s, dim):
    if isinstance(noise, ad.Tensor):
        noise = noise.data
    noise = np.asarray(noise, dtype=np.float64)
    if noise.ndim == 1:
        noise = noise[None, :]
    if noise.shape != (s, dim):
        raise ValueError(f"noise must have shape ({s}, {dim}), got {noise.shape}")
    return noise


def _class_score_matrix(z, prototypes):
    """Per-class log-densities stacked along a trailing class axis.

    z of shape (..., d) gives scores of shape (..., n_classes).
    """
    prefix = tuple(z.shape[:-1])
    cols = [ad.reshape(log_density(p.predictive, z), prefix + (1,)) for p in prototypes]
    return ad.concat(cols, axis=len(prefix))


def conditional_log_softmax(z, prototypes):
    """log p(y | z, S): softmax over per-class Gaussian log-densities at z.

    With equal class variances this reduces to a softmax over
    -||z - mu_y||^2 / (2 sigma^2), the deterministic-prototype rule.
    Accepts a single point (d,) -> (n_classes,) or any batch (..., d) ->
    (..., n_classes).
    """
    if len(prototypes) < 2:
        raise ValueError("need at least two prototypes to classify")
    scores = _class_score_matrix(z, prototypes)
    return scores - ad.log_sum_exp(scores, axis=-1, keepdims=True)


def deterministic_posterior(z, prototypes):
    """Posterior from a single fixed embedding point (the baseline's rule)."""
    return ClassPosterior(conditional_log_softmax(z, prototypes), 0, "deterministic")


def naive_posterior(x_embedding, prototypes, s, noise):
    """Average the conditional softmax over s reparameterized draws.

    Deterministic given `noise` (an (s, d) standard-normal array) and
    differentiable through the sampled points.
    """
    noise = _as_noise(noise, s, x_embedding.dim)
    z = sample(x_embedding, noise)
    lcs = conditional_log_softmax(z, prototypes)
    log_probs = ad.log_sum_exp(lcs, axis=0) - math.log(s)
    return ClassPosterior(log_probs, s, "naive")


def intersection_posterior(x_embedding, prototypes, target, s, noise):
    """Estimate log p(target | x, S) by sampling the intersection Gaussian.

    The target-class numerator splits into a prefactor times the
    intersection density, so the integral becomes the prefactor times the
    expectation, under the intersection, of the reciprocal summed class
    densities. Returns a scalar log-probability estimate.
    """
    if not 0 <= target < len(prototypes):
        raise ValueError(f"target index {target} out of range for {len(prototypes)} classes")
    noise = _as_noise(noise, s, x_embedding.dim)
    intersection, log_prefactor = product_identity_factor(
        x_embedding, prototypes[target].predictive)
    z = sample(intersection, noise)
    scores = _class_score_matrix(z, prototypes)
    log_total_density = ad.log_sum_exp(scores, axis=-1)         # (s,)
    log_mean_reciprocal = ad.log_sum_exp(-log_total_density, axis=0) - math.log(s)
    return log_prefactor + log_mean_reciprocal


def naive_log_posterior_batch(means, variances, prototypes, s, noise):
    """Naive estimator over a whole query batch at once.

    `means`/`variances` have shape (Q, d) and `noise` (s, Q, d); returns
    the (Q, n_classes) matrix of estimated log-posteriors. Equivalent to
    calling `naive_posterior` per query with the matching noise slice.
    """
    z = means + ad.sqrt(variances) * noise                       # (s, Q, d)
    lcs = conditional_log_softmax(z, prototypes)                 # (s, Q, C)
    return ad.log_sum_exp(lcs, axis=0) - math.log(s)             # (Q, C)


def intersection_log_prob_batch(means, variances, prototypes, targets, s, noise):
    """Intersection estimator for each query's own target class, batched.

    Returns the (Q,) vector of estimated log p(target_j | x_j, S);
    equivalent to per-query `intersection_posterior` calls with the
    matching noise slices. This is the training fast path.
    """
    targets = np.asarray(targets)
    n_classes = len(prototypes)
    one_hot = np.eye(n_classes)[targets]                         # (Q, C) constant
    dim = ad.value_of(means).shape[-1]
    proto_means = ad.concat(
        [ad.reshape(p.predictive.mean, (1, dim)) for p in prototypes], axis=0)
    proto_vars = ad.concat(
        [ad.reshape(p.predictive.variance, (1, dim)) for p in prototypes], axis=0)
    target_mean = ad.matmul(one_hot, proto_means)                # (Q, d)
    target_var = ad.matmul(one_hot, proto_vars)

    inter_var = ad.reciprocal(ad.reciprocal(variances) + ad.reciprocal(target_var))
    inter_mean = inter_var * (means / variances + target_mean / target_var)
    sum_var = variances + target_var
    log_prefactor = -0.5 * (
        ad.sum(ad.log(sum_var), axis=-1)
        + dim * LOG_TWO_PI
        + ad.sum(ad.square(means - target_mean) / sum_var, axis=-1))  # (Q,)

    z = inter_mean + ad.sqrt(inter_var) * noise                  # (s, Q, d)
    scores = _class_score_matrix(z, prototypes)                  # (s, Q, C)
    log_total_density = ad.log_sum_exp(scores, axis=-1)          # (s, Q)
    log_mean_reciprocal = ad.log_sum_exp(-log_total_density, axis=0) - math.log(s)
    return log_prefactor + log_mean_reciprocal                   # (Q,)


def quadrature_posterior(x_embedding, prototypes, grid=None):
    """Ground-truth posterior by tensor-product trapezoid quadrature.

    Restricted to 1-D or 2-D embeddings. Implemented against scipy's
    normal density rather than this package's Gaussian code, so it stays
    an independent oracle for the samplers.
    """
    if grid is None:
        grid = QuadratureGrid()
    elif isinstance(grid, int):
        grid = QuadratureGrid(points_per_axis=grid)
    mu = ad.value_of(x_embedding.mean)
    var = ad.value_of(x_embedding.variance)
    dim = mu.shape[0]
    if dim > 2:
        raise ValueError(f"quadrature oracle supports at most 2 dimensions, got {dim}")
    sd = np.sqrt(var)
    n = grid.points_per_axis
    axes, axis_weights = [], []
    for i in range(dim):
        pts = np.linspace(mu[i] - grid.span_sigmas * sd[i], mu[i] + grid.span_sigmas * sd[i], n)
        h = pts[1] - pts[0]
        w = np.full(n, h)
        w[0] *= 0.5
        w[-1] *= 0.5
        axes.append(pts)
        axis_weights.append(w)
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=-1)              # (N, dim)
    weights = axis_weights[0]
    for w in axis_weights[1:]:
        weights = np.outer(weights, w)
    weights = weights.ravel()

    def scipy_log_density(points_, mean_, var_):
        return stats.norm.logpdf(points_, loc=mean_, scale=np.sqrt(var_)).sum(axis=-1)

    log_px = scipy_log_density(points, mu, var)
    class_scores = np.stack(
        [scipy_log_density(points, ad.value_of(p.predictive.mean),
                           ad.value_of(p.predictive.variance))
         for p in prototypes], axis=-1)                                # (N, C)
    log_softmax = class_scores - special.logsumexp(class_scores, axis=-1, keepdims=True)
    per_class = np.exp(log_px[:, None] + log_softmax) * weights[:, None]
    probs = per_class.sum(axis=0)
    probs = probs / probs.sum()
    return ClassPosterior(np.log(probs), n, "quadrature")


def training_loss(x_embedding, prototypes, target, config, noise):
    """Negative estimated log-probability of the target class.

    The default configuration is the intersection estimator with a single
    sample, which matches the deterministic baseline's per-step cost.
    Frozen noise makes the loss a deterministic, differentiable function
    of the model parameters.
    """
    if config.method == "intersection":
        return -intersection_posterior(
            x_embedding, prototypes, target, config.samples_per_query, noise)
    post = naive_posterior(x_embedding, prototypes, config.samples_per_query, noise)
    return -post.log_probs[target]
