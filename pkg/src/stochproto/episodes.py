"""Episode construction: sampled mini-tasks of n ways with support/query splits."""

from dataclasses import dataclass

import numpy as np

from .corruption import occlude


@dataclass(frozen=True)
class EpisodeSpec:
    """Classes per episode, support per class, and queries per class."""

    ways: int = 4
    shots: int = 2
    queries_per_class: int = 5

    def __post_init__(self):
        if min(self.ways, self.shots, self.queries_per_class) < 1:
            raise ValueError("ways, shots, and queries_per_class must be positive")


@dataclass
class Episode:
    """One sampled task: per-class support inputs plus labeled queries.

    `query_targets` index into the episode's class list (0..ways-1), not
    the dataset's global labels; `class_ids` maps back to those.
    """

    class_ids: np.ndarray
    support: list
    queries: np.ndarray
    query_targets: np.ndarray


def sample_episode(dataset, spec, rng):
    """Draw classes without replacement, then disjoint support/query instances.

    Deterministic given the rng state. Raises if the dataset cannot supply
    `ways` classes or `shots + queries_per_class` instances for a class.
    """
    if dataset.num_classes < spec.ways:
        raise ValueError(
            f"dataset has {dataset.num_classes} classes, episode needs {spec.ways}")
    class_ids = np.sort(rng.choice(dataset.num_classes, size=spec.ways, replace=False))
    by_class = dataset.indices_by_class()
    need = spec.shots + spec.queries_per_class
    support, query_rows, query_targets = [], [], []
    for slot, class_id in enumerate(class_ids):
        idx = by_class[int(class_id)]
        if len(idx) < need:
            raise ValueError(
                f"class {class_id} has {len(idx)} instances, episode needs {need}")
        chosen = rng.choice(idx, size=need, replace=False)
        support.append(dataset.inputs[chosen[:spec.shots]])
        query_rows.append(dataset.inputs[chosen[spec.shots:]])
        query_targets.extend([slot] * spec.queries_per_class)
    return Episode(
        class_ids=class_ids,
        support=support,
        queries=np.concatenate(query_rows, axis=0),
        query_targets=np.asarray(query_targets, dtype=np.int64),
    )


def prepare_episode(episode, support_policy, query_policy, rng):
    """Apply occlusion policies to an episode's images.

    Support images are processed first (class order, instance order), then
    queries, so a given rng state always produces the same corruption.
    Corrupt policies require pixel inputs.
    """
    if support_policy.mode == "clean" and query_policy.mode == "clean":
        return episode
    if episode.queries.ndim != 4:
        raise ValueError("occlusion policies require pixel-mode episodes")
    support = [
        np.stack([occlude(img, support_policy, rng) for img in group])
        for group in episode.support
    ]
    queries = np.stack([occlude(img, query_policy, rng) for img in episode.queries])
    return Episode(episode.class_ids, support, queries, episode.query_targets)
