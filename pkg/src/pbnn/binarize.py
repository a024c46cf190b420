"""Binarization and activation functions with their gradients.

All functions are pure and elementwise over numpy arrays (scalars work
too).  Gradient functions return the upstream gradient multiplied by the
local derivative; kinks and clipped regions propagate exact zeros.

Randomness for the stochastic binarizer is counter-based (Philox) and
keyed by the caller, so draws are reproducible independent of execution
order; :func:`keyed_rng` builds a generator from an integer key path.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DEFAULT_CLIP",
    "keyed_rng",
    "binarize_det",
    "hard_sigmoid",
    "binarize_stoch",
    "ste_backward",
    "theta_tanh",
    "theta_tanh_backward",
    "theta_pwl",
    "theta_pwl_backward",
]

# Standard clipping threshold for the straight-through estimator.
DEFAULT_CLIP = 1.0


def keyed_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, *stream).

    Philox keyed through a SeedSequence spawn key: the same key path gives
    the same stream on every platform, and distinct paths give independent
    streams.  Used for weight init, batch shuffling, and stochastic
    binarization draws ((seed, stream-id, epoch, batch, layer) keys).
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


def binarize_det(theta):
    """Deterministic sign binarization: -1 where theta <= 0, else +1."""
    theta = np.asarray(theta)
    return np.where(theta > 0, 1.0, -1.0)


def hard_sigmoid(theta):
    """clip((theta + 1) / 2, 0, 1)."""
    return np.clip((np.asarray(theta, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0)


def binarize_stoch(theta, rng: np.random.Generator):
    """+1 with probability hard_sigmoid(theta), else -1.

    ``rng`` must be an explicitly seeded generator (see :func:`keyed_rng`);
    the whole block is drawn in one call so results do not depend on
    traversal order.
    """
    theta = np.asarray(theta)
    rho = hard_sigmoid(theta)
    draws = rng.random(size=theta.shape)
    return np.where(draws < rho, 1.0, -1.0)


def ste_backward(grad_out, theta, clip: float = DEFAULT_CLIP):
    """Straight-through estimator: pass gradient where |theta| <= clip, else 0."""
    if clip <= 0:
        raise ValueError(f"clip threshold must be positive, got {clip}")
    grad_out = np.asarray(grad_out)
    mask = np.abs(np.asarray(theta)) <= clip
    return grad_out * mask


def theta_tanh(latent, scale: float):
    """Smooth binarization surrogate tanh(scale * latent)."""
    return np.tanh(scale * np.asarray(latent))


def theta_tanh_backward(grad_out, latent, scale: float):
    t = np.tanh(scale * np.asarray(latent))
    return np.asarray(grad_out) * scale * (1.0 - t * t)


def theta_pwl(latent, scale: float):
    """Piecewise-linear surrogate clamp(scale * latent, -1, +1).

    The linear band has constant slope ``scale``; as ``scale`` grows the
    function converges pointwise to deterministic sign binarization.
    """
    if scale < 1.0:
        raise ValueError(f"scale must be >= 1, got {scale}")
    return np.clip(scale * np.asarray(latent), -1.0, 1.0)


def theta_pwl_backward(grad_out, latent, scale: float):
    """Gradient of the PWL surrogate: ``scale`` in-band, 0 when saturated.

    Points exactly on the kink |scale*latent| == 1 count as saturated;
    exact hits are common on the fixed-point grid and must not leak
    gradient twice.
    """
    if scale < 1.0:
        raise ValueError(f"scale must be >= 1, got {scale}")
    band = np.abs(scale * np.asarray(latent)) < 1.0
    return np.asarray(grad_out) * scale * band


def pwl_chain(latent, scale: float):
    """Local derivative of theta_pwl as a mask array (scale in-band, else 0)."""
    if scale < 1.0:
        raise ValueError(f"scale must be >= 1, got {scale}")
    return scale * (np.abs(scale * np.asarray(latent)) < 1.0)


def ste_chain(theta, clip: float = DEFAULT_CLIP):
    """Local pass-through mask of the STE (1 where |theta| <= clip)."""
    if clip <= 0:
        raise ValueError(f"clip threshold must be positive, got {clip}")
    return (np.abs(np.asarray(theta)) <= clip).astype(np.float64)
