"""LeakyReLU family used by both dynamical systems.

Slopes live in (0, 1] so the derivative stays in [0, 1]; slope 1 degrades to
the identity, which the hand-computable test oracles rely on.
"""

from __future__ import annotations

import numpy as np


def leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x, slope * x)

def leaky_relu_prime(x: np.ndarray, slope: float) -> np.ndarray:
    # Subgradient at the kink is resolved to the negative-side slope.
    return np.where(x > 0, 1.0, slope)

def leaky_relu_antiderivative(x: np.ndarray, slope: float) -> np.ndarray:
    """gamma with gamma' = leaky_relu and gamma(0) = 0: a half-quadratic."""
    return np.where(x > 0, 0.5 * x * x, 0.5 * slope * x * x)
