"""Diagonal-Gaussian algebra: densities, reparameterized sampling, products.

All distributions here are axis-aligned Gaussians N(mean, diag(variance)).
Density arithmetic stays in log space throughout; raw densities are only
materialized inside stable log-sum-exp reductions downstream.

Functions accept means/variances as plain numpy arrays or as autodiff
Tensors, so the same algebra serves both evaluation and training.
"""

import math

import numpy as np

from . import autodiff as ad

LOG_TWO_PI = math.log(2.0 * math.pi)

# Precision sums in the product rule blow up when an encoder emits a
# near-zero variance; every constructed Gaussian is floored here.
VARIANCE_FLOOR = 1e-8


class DiagonalGaussian:
    """Mean/variance pair for an axis-aligned Gaussian in embedding space."""

    __slots__ = ("mean", "variance")

    def __init__(self, mean, variance):
        if isinstance(mean, (list, tuple, float, int)):
            mean = np.asarray(mean, dtype=np.float64)
        if isinstance(variance, (list, tuple, float, int)):
            variance = np.asarray(variance, dtype=np.float64)
        if mean.shape != variance.shape or mean.ndim != 1:
            raise ValueError(
                f"mean and variance must be equal-length vectors, got {mean.shape} and {variance.shape}")
        self.mean = mean
        self.variance = ad.clip_min(variance, VARIANCE_FLOOR)

    @property
    def dim(self):
        return self.mean.shape[0]

    def __repr__(self):
        return f"DiagonalGaussian(mean={ad.value_of(self.mean)}, variance={ad.value_of(self.variance)})"


def log_density(g, z):
    """log N(z; g.mean, diag(g.variance)).

    `z` may be a single vector of length d (returns a scalar) or a batch
    of shape (s, d) (returns a length-s vector).
    """
    if not isinstance(z, ad.Tensor):
        z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != g.dim:
        raise ValueError(f"point dimension {z.shape[-1]} != gaussian dimension {g.dim}")
    quad = ad.sum(ad.square(z - g.mean) / g.variance, axis=-1)
    log_norm = ad.sum(ad.log(g.variance)) + g.dim * LOG_TWO_PI
    return -0.5 * (quad + log_norm)


def sample(g, u):
    """Reparameterized draw: mean + sqrt(variance) * u for standard-normal u.

    Deterministic given `u`, and differentiable in the mean and variance.
    `u` may be (d,) or a batch (s, d).
    """
    if not isinstance(u, ad.Tensor):
        u = np.asarray(u, dtype=np.float64)
    if u.shape[-1] != g.dim:
        raise ValueError(f"noise dimension {u.shape[-1]} != gaussian dimension {g.dim}")
    return g.mean + ad.sqrt(g.variance) * u


def product(gaussians):
    """Normalized product of Gaussian densities.

    The product of N(m_i, v_i) densities is itself Gaussian, with
    precision equal to the sum of the input precisions and a
    precision-weighted mean:

        v = (sum_i 1/v_i)^-1,   m = v * sum_i m_i / v_i
    """
    if not gaussians:
        raise ValueError("product of an empty list of Gaussians")
    dims = {g.dim for g in gaussians}
    if len(dims) != 1:
        raise ValueError(f"mixed dimensions in product: {sorted(dims)}")
    precision = ad.reciprocal(gaussians[0].variance)
    weighted = gaussians[0].mean / gaussians[0].variance
    for g in gaussians[1:]:
        precision = precision + ad.reciprocal(g.variance)
        weighted = weighted + g.mean / g.variance
    variance = ad.reciprocal(precision)
    return DiagonalGaussian(variance * weighted, variance)


def product_identity_factor(x, y):
    """Split a two-density product into an intersection Gaussian and a prefactor.

    For every z,

        log N(z; mx, vx) + log N(z; my, vy)
            = log N(z; m_xy, v_xy) + log N(mx; my, vx + vy)

    where v_xy = (1/vx + 1/vy)^-1 and m_xy = v_xy * (mx/vx + my/vy).
    Returns (intersection DiagonalGaussian, scalar log prefactor); symmetric
    in its arguments.
    """
    if x.dim != y.dim:
        raise ValueError(f"dimension mismatch: {x.dim} vs {y.dim}")
    inv = ad.reciprocal(ad.reciprocal(x.variance) + ad.reciprocal(y.variance))
    mean = inv * (x.mean / x.variance + y.mean / y.variance)
    intersection = DiagonalGaussian(mean, inv)
    log_prefactor = log_density(DiagonalGaussian(y.mean, x.variance + y.variance), x.mean)
    return intersection, log_prefactor
