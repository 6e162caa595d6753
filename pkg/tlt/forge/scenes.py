"""Synthetic scenes: one bright shape over a smoothed-noise background

Each class is one shape from consts.SHAPE_VOCABULARY:
class 0 is a filled disc, class 1 a cross, class 2 a square.
Shape sizes are drawn relative to a 32x32 reference image and redrawn
until the object covers a fraction of the image inside the configured band.
"""

import logging
import typing

import numpy as np
from scipy import ndimage

from tlt import consts
from tlt.configuration.basetypes import SceneConfig
from tlt.errors import DomainError
from tlt.forge.manifest import Sample


logger = logging.getLogger(__name__)


# Shape size ranges at the 32x32 reference resolution
REFERENCE_SIZE = 32
DISC_RADIUS = (4.5, 9.0)
CROSS_LENGTH = (14.0, 22.0)
CROSS_WIDTH = (3.0, 5.0)
SQUARE_SIDE = (8.0, 16.0)

MAX_DRAWS = 100


def _grid(height: int, width: int) -> typing.Tuple[np.ndarray, np.ndarray]:
    return np.meshgrid(np.arange(height), np.arange(width), indexing="ij")


def _draw_shape(
    shape: str, rng: np.random.Generator, height: int, width: int
) -> np.ndarray:
    """Draw one shape mask with random size and a position fully inside the image"""
    scale = min(height, width) / REFERENCE_SIZE
    ii, jj = _grid(height, width)

    if shape == "disc":
        radius = rng.uniform(*DISC_RADIUS) * scale
        extent = radius
    elif shape == "cross":
        length = rng.uniform(*CROSS_LENGTH) * scale
        barwidth = rng.uniform(*CROSS_WIDTH) * scale
        extent = length / 2
    elif shape == "square":
        side = rng.uniform(*SQUARE_SIDE) * scale
        extent = side / 2
    else:
        raise DomainError(f"Unknown shape '{shape}'")

    margin = extent + 1.0
    cy = rng.uniform(margin, height - 1 - margin)
    cx = rng.uniform(margin, width - 1 - margin)
    dy = np.abs(ii - cy)
    dx = np.abs(jj - cx)

    if shape == "disc":
        mask = dy ** 2 + dx ** 2 <= radius ** 2
    elif shape == "cross":
        horizontal = (dy <= barwidth / 2) & (dx <= length / 2)
        vertical = (dx <= barwidth / 2) & (dy <= length / 2)
        mask = horizontal | vertical
    else:
        mask = (dy <= side / 2) & (dx <= side / 2)
    return mask.astype(np.uint8)


def smooth_background(rng: np.random.Generator, config: SceneConfig) -> np.ndarray:
    """Smoothed uniform noise rescaled to [0.2, 0.7]"""
    noise = rng.random((config.height, config.width, config.channels))
    sigma = (config.smoothing, config.smoothing, 0)
    smoothed = ndimage.gaussian_filter(noise, sigma=sigma, mode="reflect")
    low, high = smoothed.min(), smoothed.max()
    if high - low <= 0:
        return np.full_like(smoothed, 0.45)
    return 0.2 + 0.5 * (smoothed - low) / (high - low)


def generate_scene(
    class_id: int,
    seed: int,
    config: SceneConfig,
    sample_id: typing.Optional[str] = None,
) -> Sample:
    """Render one untreated scene of class `class_id`

    The result depends only on (class_id, seed, config).
    """
    if not 0 <= class_id < config.n_classes:
        raise DomainError(
            f"class_id must be in [0, {config.n_classes}), got {class_id}"
        )
    if seed < 0:
        raise DomainError(f"Scene seeds must be nonnegative, got {seed}")

    rng = np.random.default_rng([int(seed), int(class_id)])
    shape = consts.SHAPE_VOCABULARY[class_id]
    background = smooth_background(rng, config)

    low, high = config.area_band
    npixels = config.height * config.width
    for _ in range(MAX_DRAWS):
        mask = _draw_shape(shape, rng, config.height, config.width)
        if low <= mask.sum() / npixels <= high:
            break
    else:
        raise DomainError(
            f"Could not draw a {shape} covering between {low} and {high} of a {config.height}x{config.width} image"
        )

    color = rng.uniform(0.85, 1.0, size=config.channels)
    x = np.where(mask[:, :, None] == 1, color[None, None, :], background)
    x = np.clip(x, 0.0, 1.0)

    return Sample(
        id=sample_id or f"scene-{class_id}-{seed}",
        x=x,
        y=class_id,
        t=0,
        mask=mask,
    )
