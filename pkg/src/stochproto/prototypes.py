"""Class prototypes: confidence-weighted Gaussian posteriors and plain means.

A stochastic prototype treats each support embedding as a noisy view of
the class prototype, with per-instance variance inflated by the shared
perturbation variance sigma_eps_sq. Fusing the views as a Gaussian
product yields a precision-weighted average, so noisy support instances
are discounted automatically. The deterministic baseline keeps the
unweighted mean with unit variances, which turns the downstream softmax
into a plain squared-distance rule.
"""

from .gaussians import DiagonalGaussian, product

import numpy as np


class Prototype:
    """One class's latent representative.

    `posterior` is the fused Gaussian over the prototype location;
    `inflated_variance` adds sigma_eps_sq back on top and is the variance
    the classifier uses when scoring query embeddings against this class.
    """

    __slots__ = ("class_id", "posterior", "inflated_variance", "predictive")

    def __init__(self, class_id, posterior, inflated_variance):
        self.class_id = class_id
        self.posterior = posterior
        self.inflated_variance = inflated_variance
        self.predictive = DiagonalGaussian(posterior.mean, inflated_variance)


def form_prototype(support_embeddings, sigma_eps_sq, class_id=0):
    """Fuse support embeddings into the class posterior.

    Each support Gaussian's variance is inflated by `sigma_eps_sq` before
    the product, and the classifier-facing variance is inflated once more.
    Differentiable in every support embedding and in sigma_eps_sq.
    """
    if not support_embeddings:
        raise ValueError("cannot form a prototype from an empty support set")
    inflated = [DiagonalGaussian(e.mean, e.variance + sigma_eps_sq) for e in support_embeddings]
    posterior = product(inflated)
    return Prototype(class_id, posterior, posterior.variance + sigma_eps_sq)


def form_pn_prototype(support_means, class_id=0):
    """Unweighted mean prototype with unit variances (deterministic baseline)."""
    if len(support_means) == 0:
        raise ValueError("cannot form a prototype from an empty support set")
    total = support_means[0]
    for m in support_means[1:]:
        total = total + m
    mean = total * (1.0 / len(support_means))
    ones = np.ones(mean.shape[-1])
    posterior = DiagonalGaussian(mean, ones)
    return Prototype(class_id, posterior, ones)
