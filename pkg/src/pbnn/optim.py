"""Adam, cross-entropy, and the learning-rate / scale-parameter schedules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionError

__all__ = [
    "AdamState",
    "adam_step",
    "lr_schedule",
    "v_schedule",
    "cross_entropy",
]


@dataclass
class AdamState:
    """First/second moment estimates for one parameter tensor.

    Moments are kept in float64 regardless of the parameter backend; only
    the written-back parameter is quantized (fixed-point mode).
    """

    m: np.ndarray
    s: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, param: np.ndarray, **kw) -> "AdamState":
        return cls(
            m=np.zeros(param.shape, dtype=np.float64),
            s=np.zeros(param.shape, dtype=np.float64),
            **kw,
        )


def adam_step(param, grad, state: AdamState, eta: float):
    """One bias-corrected Adam update; returns the new parameter values.

    ``state`` is advanced in place.  The update itself runs in float64;
    the caller stores the result back into the parameter's backend.
    """
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape:
        raise DimensionError(f"shape mismatch: {param.shape} vs {grad.shape}")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.s = state.beta2 * state.s + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.t)
    s_hat = state.s / (1.0 - state.beta2**state.t)
    return param - eta * m_hat / (np.sqrt(s_hat) + state.eps), state


def lr_schedule(epoch: int) -> float:
    """1e-3 decayed by an order of magnitude every 20 epochs (zero-based)."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return 1e-3 * 10.0 ** (-(epoch // 20))

def v_schedule(epoch: int, total_epochs: int) -> float:
    """Logarithmic ramp of the surrogate scale: 1 at epoch 0, 1000 at the last.

    Exactly log-linear in the (zero-based) epoch index with both endpoints
    pinned: ``10 ** (3 * epoch / (total_epochs - 1))``.
    """
    if total_epochs < 2:
        raise ValueError(f"total_epochs must be >= 2, got {total_epochs}")
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    if epoch == total_epochs - 1:
        return 1000.0  # pin the endpoint against float exponent rounding
    return 10.0 ** (3.0 * epoch / (total_epochs - 1))


def cross_entropy(logits, labels):
    """Mean cross-entropy over a batch plus the gradient w.r.t. the logits.

    Softmax is computed with max subtraction; the gradient is
    ``(softmax - onehot) / batch`` so gradient rows sum to zero.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(
            f"expected (B,K) logits and (B,) labels, got {logits.shape}, {labels.shape}"
        )
    n_classes = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(f"labels outside [0, {n_classes})")
    batch = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    softmax = exp / exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(exp.sum(axis=1, keepdims=True))
    loss = -log_probs[np.arange(batch), labels].mean()
    grad = softmax.copy()
    grad[np.arange(batch), labels] -= 1.0
    grad /= batch
    return float(loss), grad
