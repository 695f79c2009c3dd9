"""Labeled dataset container and its on-disk format.

A dataset directory holds a key-value text manifest plus three binary
blobs: little-endian float32 inputs (instance-major, row-major), uint16
labels, and float32 (orientation, hue) latent pairs. Readers validate
every blob length against the manifest before use.
"""

from pathlib import Path

import numpy as np

DATASET_FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.txt"
INPUTS_NAME = "pixels.bin"
LABELS_NAME = "labels.bin"
LATENTS_NAME = "latents.bin"


class Dataset:
    """Instances plus labels, either as images (N,H,W,C) or feature rows (N,F)."""

    def __init__(self, inputs, labels, latents=None, class_names=None,
                 mode="pixels", seed=0, extras=None):
        inputs = np.asarray(inputs, dtype=np.float32)
        labels = np.asarray(labels, dtype=np.uint16)
        if inputs.shape[0] != labels.shape[0]:
            raise ValueError("inputs and labels disagree on instance count")
        if latents is not None:
            latents = np.asarray(latents, dtype=np.float32)
            if latents.shape[0] != labels.shape[0]:
                raise ValueError("latents and labels disagree on instance count")
        self.inputs = inputs
        self.labels = labels
        self.latents = latents
        self.class_names = list(class_names) if class_names else [
            str(c) for c in sorted(set(int(l) for l in labels))]
        self.mode = mode
        self.seed = seed
        self.extras = dict(extras or {})

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def num_classes(self):
        return len(self.class_names)

    def indices_by_class(self):
        return {c: np.flatnonzero(self.labels == c) for c in range(self.num_classes)}

    def subset(self, indices):
        indices = np.asarray(indices)
        return Dataset(
            self.inputs[indices], self.labels[indices],
            None if self.latents is None else self.latents[indices],
            class_names=self.class_names, mode=self.mode,
            seed=self.seed, extras=self.extras)


def split_by_instance(dataset, holdout_fraction, seed):
    """Stratified instance-level split into (train, holdout) datasets."""
    if not 0.0 < holdout_fraction < 1.0:
        raise ValueError("holdout_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    train_idx, hold_idx = [], []
    for _, idx in sorted(dataset.indices_by_class().items()):
        perm = idx[rng.permutation(len(idx))]
        n_hold = max(1, int(round(holdout_fraction * len(idx))))
        hold_idx.extend(perm[:n_hold])
        train_idx.extend(perm[n_hold:])
    return dataset.subset(np.sort(train_idx)), dataset.subset(np.sort(hold_idx))


def save_dataset(dataset, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if dataset.mode == "pixels":
        _, h, w, c = dataset.inputs.shape
    else:
        h, w, c = 1, 1, dataset.inputs.shape[1]
    lines = [
        f"format_version={DATASET_FORMAT_VERSION}",
        f"mode={dataset.mode}",
        f"count={len(dataset)}",
        f"height={h}",
        f"width={w}",
        f"channels={c}",
        f"class_names={','.join(dataset.class_names)}",
        f"seed={dataset.seed}",
    ]
    for key in sorted(dataset.extras):
        lines.append(f"spec_{key}={dataset.extras[key]}")
    (out_dir / MANIFEST_NAME).write_text("\n".join(lines) + "\n")
    (out_dir / INPUTS_NAME).write_bytes(
        dataset.inputs.astype("<f4").tobytes())
    (out_dir / LABELS_NAME).write_bytes(
        dataset.labels.astype("<u2").tobytes())
    if dataset.latents is not None:
        (out_dir / LATENTS_NAME).write_bytes(
            dataset.latents.astype("<f4").tobytes())


def load_dataset(data_dir):
    data_dir = Path(data_dir)
    entries = {}
    for line in (data_dir / MANIFEST_NAME).read_text().splitlines():
        if "=" in line:
            key, value = line.strip().split("=", 1)
            entries[key] = value
    if int(entries["format_version"]) != DATASET_FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format version {entries['format_version']}")
    count = int(entries["count"])
    h, w, c = int(entries["height"]), int(entries["width"]), int(entries["channels"])
    mode = entries["mode"]

    raw = np.frombuffer((data_dir / INPUTS_NAME).read_bytes(), dtype="<f4")
    expected = count * h * w * c
    if raw.size != expected:
        raise ValueError(f"input blob holds {raw.size} floats, manifest implies {expected}")
    inputs = raw.reshape(count, h, w, c) if mode == "pixels" else raw.reshape(count, c)

    labels = np.frombuffer((data_dir / LABELS_NAME).read_bytes(), dtype="<u2")
    if labels.size != count:
        raise ValueError(f"label blob holds {labels.size} entries, manifest says {count}")

    latents = None
    latents_path = data_dir / LATENTS_NAME
    if latents_path.exists():
        latents = np.frombuffer(latents_path.read_bytes(), dtype="<f4")
        if latents.size != count * 2:
            raise ValueError(f"latent blob holds {latents.size} floats, expected {count * 2}")
        latents = latents.reshape(count, 2)

    extras = {k[len("spec_"):]: v for k, v in entries.items() if k.startswith("spec_")}
    return Dataset(inputs.copy(), labels.copy(),
                   None if latents is None else latents.copy(),
                   class_names=entries["class_names"].split(","),
                   mode=mode, seed=int(entries["seed"]), extras=extras)
