"""MLP encoder mapping inputs to diagonal-Gaussian embeddings.

The final layer has width 2d: the first d outputs are the embedding mean,
the last d pass through softplus (plus the variance floor) to give a
strictly positive per-axis variance. The model also owns the trainable
scalar `gamma`; softplus(gamma) is the isotropic prototype-perturbation
variance shared by prototype formation and classification.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .gaussians import VARIANCE_FLOOR, DiagonalGaussian

MODEL_FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.txt"
PARAMS_NAME = "params.bin"

DEFAULT_GAMMA0 = 0.01


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture of the embedding network.

    `downsample` average-pools image inputs by that factor per side before
    flattening; feature-vector inputs ignore it. The activation is fixed
    to rectified-linear.
    """

    input_dim: int
    hidden_dims: tuple = (64, 64)
    embed_dim: int = 2
    downsample: int = 1

    def __post_init__(self):
        if self.input_dim < 1 or self.embed_dim < 1:
            raise ValueError("input_dim and embed_dim must be positive")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden widths must be positive")
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))

    @property
    def layer_widths(self):
        return (self.input_dim,) + self.hidden_dims + (2 * self.embed_dim,)


class EncoderModel:
    """Layer parameters plus the trainable gamma.

    `kind` records how the model is trained and evaluated: "spe" uses the
    full stochastic pipeline, "pn" ignores predicted variances and behaves
    as a deterministic mean-prototype classifier.
    """

    def __init__(self, config, weights, biases, gamma, seed=0, kind="spe"):
        self.config = config
        self.weights = weights
        self.biases = biases
        self.gamma = gamma
        self.seed = seed
        self.kind = kind

    def parameters(self):
        return list(self.weights) + list(self.biases) + [self.gamma]

    def clone_parameter_values(self):
        return [p.data.copy() for p in self.parameters()]

    def restore_parameter_values(self, values):
        for p, v in zip(self.parameters(), values):
            p.data = v.copy()


def init_encoder(config, episode_support_count, gamma0=DEFAULT_GAMMA0, seed=0, kind="spe"):
    """Fresh model with scaled-uniform fan-in init and the gamma prescription.

    gamma starts at `episode_support_count * gamma0 ** (2 / embed_dim)`:
    more support examples shrink the prototype variance, so the starting
    perturbation scales up with them, while the exponent keeps the noise
    volume roughly unit across embedding dimensionalities.
    """
    if gamma0 <= 0:
        raise ValueError("gamma0 must be positive")
    if episode_support_count < 1:
        raise ValueError("episode_support_count must be positive")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    widths = config.layer_widths
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out))))
        biases.append(Tensor(rng.uniform(-bound, bound, size=fan_out)))
    gamma = Tensor(episode_support_count * gamma0 ** (2.0 / config.embed_dim))
    return EncoderModel(config, weights, biases, gamma, seed=seed, kind=kind)


def sigma_epsilon_sq(model):
    """softplus(gamma): the strictly positive prototype-perturbation variance."""
    return ad.softplus(model.gamma)


def preprocess(config, raw):
    """Map raw instances to the (batch, input_dim) matrix the network expects.

    Image batches (B, H, W, C) are average-pooled by `config.downsample`
    per side and flattened; feature batches (B, F) pass through. A single
    instance may be given without the batch axis.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim == 3:
        raw = raw[None]
    elif raw.ndim == 1:
        raw = raw[None]
    if raw.ndim == 4:
        b, h, w, c = raw.shape
        p = config.downsample
        if p > 1:
            if h % p or w % p:
                raise ValueError(f"image size {h}x{w} not divisible by downsample {p}")
            raw = raw.reshape(b, h // p, p, w // p, p, c).mean(axis=(2, 4))
        flat = raw.reshape(b, -1)
    elif raw.ndim == 2:
        flat = raw
    else:
        raise ValueError(f"unsupported input rank {raw.ndim}")
    if flat.shape[1] != config.input_dim:
        raise ValueError(f"preprocessed width {flat.shape[1]} != input_dim {config.input_dim}")
    return flat


def encode_batch(model, inputs):
    """Encode a (batch, input_dim) matrix; returns (means, variances) of shape (batch, d)."""
    x = inputs if isinstance(inputs, ad.Tensor) else Tensor(np.asarray(inputs, dtype=np.float64))
    if x.ndim != 2 or x.shape[1] != model.config.input_dim:
        raise ValueError(f"expected (batch, {model.config.input_dim}) inputs, got {x.shape}")
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = ad.matmul(h, w) + b
        if i != last:
            h = ad.relu(h)
    d = model.config.embed_dim
    means = h[:, :d]
    variances = ad.softplus(h[:, d:]) + VARIANCE_FLOOR
    return means, variances


def encode(model, x):
    """Encode a single input vector into its Gaussian embedding."""
    means, variances = encode_batch(model, np.asarray(x, dtype=np.float64)[None, :])
    return DiagonalGaussian(means[0], variances[0])


# ---------------------------------------------------------------------------
# Serialization: text manifest + one little-endian float32 parameter blob in
# declared layer order (W0, b0, W1, b1, ...). Round-trips are value-exact at
# 32-bit precision.
# ---------------------------------------------------------------------------


def save_model(model, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = model.config
    gamma32 = float(np.float32(model.gamma.data))
    lines = [
        f"format_version={MODEL_FORMAT_VERSION}",
        f"kind={model.kind}",
        f"input_dim={cfg.input_dim}",
        f"hidden_dims={','.join(str(h) for h in cfg.hidden_dims)}",
        f"embed_dim={cfg.embed_dim}",
        f"downsample={cfg.downsample}",
        f"gamma={gamma32!r}",
        f"seed={model.seed}",
    ]
    blob = np.concatenate(
        [w.data.ravel() for pair in zip(model.weights, model.biases) for w in pair]
    ).astype("<f4")
    lines.append(f"param_count={blob.size}")
    (out_dir / MANIFEST_NAME).write_text("\n".join(lines) + "\n")
    (out_dir / PARAMS_NAME).write_bytes(blob.tobytes())


def _parse_manifest(text):
    entries = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or "=" not in line:
            continue
        key, value = line.split("=", 1)
        entries[key] = value
    return entries


def load_model(model_dir):
    model_dir = Path(model_dir)
    entries = _parse_manifest((model_dir / MANIFEST_NAME).read_text())
    if int(entries["format_version"]) != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {entries['format_version']}")
    hidden = tuple(int(h) for h in entries["hidden_dims"].split(",") if h)
    config = EncoderConfig(
        input_dim=int(entries["input_dim"]),
        hidden_dims=hidden,
        embed_dim=int(entries["embed_dim"]),
        downsample=int(entries["downsample"]),
    )
    blob = np.frombuffer((model_dir / PARAMS_NAME).read_bytes(), dtype="<f4")
    if blob.size != int(entries["param_count"]):
        raise ValueError(
            f"parameter blob holds {blob.size} values, manifest declares {entries['param_count']}")
    weights, biases = [], []
    offset = 0
    widths = config.layer_widths
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        w = blob[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = blob[offset:offset + fan_out]
        offset += fan_out
        weights.append(Tensor(np.asarray(w, dtype=np.float64)))
        biases.append(Tensor(np.asarray(b, dtype=np.float64)))
    if offset != blob.size:
        raise ValueError("parameter blob length mismatch against declared layers")
    gamma = Tensor(float(entries["gamma"]))
    return EncoderModel(config, weights, biases, gamma,
                        seed=int(entries["seed"]), kind=entries.get("kind", "spe"))
