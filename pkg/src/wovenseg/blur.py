"""Gaussian blurring of greyscale frames."""
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .io import GreyFrame

DEFAULT_SIGMA = 1.5


@dataclass(frozen=True, eq=False)
class GaussianKernel:
    sigma: float
    radius: int
    weights: np.ndarray
    center_unnormalized: float

    @property
    def profile(self):
        """Normalized 1D factor; ``weights == outer(profile, profile)``."""
        return self.weights.sum(axis=0)


def gaussian_value(x, y, sigma):
    return math.exp(-(x * x + y * y) / (2.0 * sigma * sigma)) / (2.0 * math.pi * sigma * sigma)


def build_kernel(sigma=DEFAULT_SIGMA):
    """Sampled 2D Gaussian truncated at ``ceil(3 sigma)`` and renormalized."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    xx, yy = np.meshgrid(offsets, offsets, indexing="ij")
    raw = np.exp(-(xx ** 2 + yy ** 2) / (2.0 * sigma ** 2)) / (2.0 * math.pi * sigma ** 2)
    weights = raw / raw.sum()
    weights.setflags(write=False)
    return GaussianKernel(float(sigma), radius, weights, float(raw[radius, radius]))


def blur(frame, kernel):
    """Convolve ``frame`` with ``kernel`` using edge replication at the borders.

    The Gaussian factorizes, so this runs as two 1D passes.
    """
    out = kernels.separable_convolve(frame.intensities, kernel.profile)
    # round-off can nudge values a hair outside [0, 1]
    return GreyFrame(np.clip(out, 0.0, 1.0))
