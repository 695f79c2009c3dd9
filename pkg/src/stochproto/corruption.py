"""Random-rectangle occlusion for support/query corruption experiments.

A rectangle's width and height are integers drawn uniformly from
{0, ..., unit_size}; a zero on either axis leaves the image untouched.
The top-left corner is then drawn uniformly from the positions that keep
the rectangle inside the unit region, and the covered pixels are set to
zero. Draws are over integers so the unoccluded branch is reachable with
probability 1/(unit_size+1) per axis.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class OcclusionPolicy:
    """How (and whether) to occlude one image unit.

    `per_unit_probability` gates occlusion attempts in corrupt mode: use
    0.2 for training-style augmentation and 1.0 for test-style corrupt
    sets, which occlude every unit. The unit is the square region the
    rectangle is confined to; anchor it at the top-left corner (the
    digit-tiling convention) or on the image center (where a centered
    shape actually lives).
    """

    mode: str = "clean"
    per_unit_probability: float = 0.2
    unit_size: int = 28
    unit_anchor: str = "topleft"

    def __post_init__(self):
        if self.mode not in ("clean", "corrupt"):
            raise ValueError(f"unknown occlusion mode {self.mode!r}")
        if not 0.0 <= self.per_unit_probability <= 1.0:
            raise ValueError("per_unit_probability must lie in [0, 1]")
        if self.unit_anchor not in ("topleft", "center"):
            raise ValueError(f"unknown unit_anchor {self.unit_anchor!r}")


CLEAN = OcclusionPolicy(mode="clean")


def occlude(image, policy, rng=None):
    """Return a copy of `image` with at most one blacked-out rectangle.

    Clean mode copies the input bit-exactly. Corrupt mode needs an rng;
    the rectangle is confined to the top-left `unit_size` square, which
    for full-image units (unit_size = image side) is the whole frame.
    """
    image = np.asarray(image)
    out = image.copy()
    if policy.mode == "clean":
        return out
    if rng is None:
        raise ValueError("corrupt mode requires an rng")
    unit = policy.unit_size
    if image.shape[0] < unit or image.shape[1] < unit:
        raise ValueError(f"image {image.shape[:2]} smaller than unit size {unit}")
    if policy.per_unit_probability < 1.0 and rng.uniform() >= policy.per_unit_probability:
        return out
    width = int(rng.integers(0, unit + 1))
    height = int(rng.integers(0, unit + 1))
    if width == 0 or height == 0:
        return out
    left = int(rng.integers(0, unit - width + 1))
    top = int(rng.integers(0, unit - height + 1))
    if policy.unit_anchor == "center":
        left += (image.shape[1] - unit) // 2
        top += (image.shape[0] - unit) // 2
    out[top:top + height, left:left + width] = 0.0
    return out


def occlude_batch(images, policy, rng=None):
    """Occlude each image in a batch independently."""
    return np.stack([occlude(img, policy, rng) for img in images])
