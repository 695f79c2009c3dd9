"""Stochastic prototype embeddings for few-shot classification.

Inputs embed as diagonal Gaussians; class prototypes fuse support
embeddings as confidence-weighted Gaussian products; queries classify by
marginalizing a softmax over their embedding uncertainty. Includes the
deterministic mean-prototype baseline, an episodic trainer, a synthetic
color/orientation dataset with its exact generative-model classifier,
and occlusion-corruption evaluation.
"""

from .autodiff import Tensor, backward, forward_op
from .classify import (
    ClassPosterior,
    QuadratureGrid,
    SamplerConfig,
    conditional_log_softmax,
    deterministic_posterior,
    intersection_posterior,
    naive_posterior,
    quadrature_posterior,
    training_loss,
)
from .corruption import OcclusionPolicy, occlude
from .dataset import Dataset, load_dataset, save_dataset, split_by_instance
from .encoder import (
    EncoderConfig,
    EncoderModel,
    encode,
    encode_batch,
    init_encoder,
    load_model,
    save_model,
    sigma_epsilon_sq,
)
from .episodes import Episode, EpisodeSpec, prepare_episode, sample_episode
from .evaluate import (
    EvalConfig,
    EvalReport,
    evaluate,
    evaluate_paired,
    export_embeddings,
    uncertainty_sweep,
)
from .gaussians import DiagonalGaussian, log_density, product, product_identity_factor, sample
from .prototypes import Prototype, form_pn_prototype, form_prototype
from .synthetic import SyntheticSpec, bayes_classify, generate_dataset, render, sample_latent
from .training import TrainerConfig, fit, train_step

__version__ = "0.1.0"
