"""Layers with explicit forward/backward passes.

Every layer stores its parameters in the backend domain (``fmt=None`` +
dtype for the real backend, on-grid float64 for fixed point) and returns
forward outputs in the same domain.  Backward passes always run in real
arithmetic on the taped float intermediates; only forward tensors and
stored parameters are quantized in fixed-point mode.

Weight binarization happens inside the layer forward according to the
training regime:

* ``progressive``  - clamp(scale * latent, -1, 1), constant in-band slope
* ``deterministic``- sign of the real-valued shadow weights, STE gradient
* ``stochastic``   - stochastic sign draw per forward (deterministic sign
  when evaluating), STE gradient
* ``real``         - identity (and ReLU activations)
"""

from __future__ import annotations

import numpy as np

from .binarize import (
    DEFAULT_CLIP,
    binarize_det,
    binarize_stoch,
    pwl_chain,
    ste_chain,
    theta_pwl,
)
from .errors import DimensionError, GeometryError
from .fxp import QFormat
from .tensor import col2im_array, conv_output_extent, im2col_array, store

__all__ = [
    "REGIMES",
    "Conv2d",
    "Dense",
    "BatchNorm",
    "ActivationLayer",
    "maxpool_forward",
    "maxpool_backward",
    "bn_sign_shortcut",
]

REGIMES = ("progressive", "deterministic", "stochastic", "real")


def effective_params(values, *, binarized, regime, scale, clip, rng, training):
    """Regime-transformed parameter values and the gradient chain factor.

    Returns ``(theta, chain)`` where ``chain`` multiplies upstream
    gradients to reach the stored latent/shadow values (``None`` means
    identity: non-binarized layers and the real regime).
    """
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}")
    if not binarized or regime == "real":
        return values, None
    if regime == "progressive":
        return theta_pwl(values, scale), pwl_chain(values, scale)
    if regime == "deterministic":
        return binarize_det(values), ste_chain(values, clip)
    # stochastic: fresh draws each training forward, deterministic sign at eval
    if training and rng is not None:
        theta = binarize_stoch(values, rng)
    else:
        theta = binarize_det(values)
    return theta, ste_chain(values, clip)


def _chain_grad(grad, chain):
    return grad if chain is None else grad * chain


class Conv2d:
    """2-D convolution via im2col + matmul, with per-filter bias."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int = 3,
        stride: int = 1,
        padding: int = 1,
        binarized: bool = True,
        fmt: QFormat | None = None,
        dtype=np.float32,
        rng: np.random.Generator | None = None,
    ):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        self.binarized = binarized
        self.fmt = fmt
        self.dtype = dtype
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kernel * kernel
        fan_out = out_channels * kernel * kernel
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w0 = rng.uniform(-limit, limit, size=(out_channels, in_channels, kernel, kernel))
        self.weight = store(w0, fmt, dtype)
        self.bias = store(np.zeros(out_channels), fmt, dtype)

    def output_shape(self, input_shape):
        chans, h, w = input_shape
        if chans != self.in_channels:
            raise DimensionError(
                f"expected {self.in_channels} input channels, got {chans}"
            )
        return (
            self.out_channels,
            conv_output_extent(h, self.kernel, self.stride, self.padding),
            conv_output_extent(w, self.kernel, self.stride, self.padding),
        )

    def forward(self, x, *, regime="real", scale=1.0, clip=DEFAULT_CLIP,
                rng=None, training=True):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise DimensionError(
                f"expected (B,{self.in_channels},H,W) input, got {x.shape}"
            )
        theta_w, chain_w = effective_params(
            self.weight, binarized=self.binarized, regime=regime,
            scale=scale, clip=clip, rng=rng, training=training,
        )
        theta_b, chain_b = effective_params(
            self.bias, binarized=self.binarized, regime=regime,
            scale=scale, clip=clip, rng=rng, training=training,
        )
        theta_w = store(theta_w, self.fmt, self.dtype)
        theta_b = store(theta_b, self.fmt, self.dtype)
        batch = x.shape[0]
        h_out = conv_output_extent(x.shape[2], self.kernel, self.stride, self.padding)
        w_out = conv_output_extent(x.shape[3], self.kernel, self.stride, self.padding)
        cols = im2col_array(x, self.kernel, self.stride, self.padding)
        w_mat = theta_w.reshape(self.out_channels, -1)
        # wide accumulator: products and the bias add re-quantize only once
        pre = w_mat @ cols + theta_b[:, None]
        z = store(pre, self.fmt, self.dtype)
        z = np.ascontiguousarray(
            z.reshape(self.out_channels, batch, h_out, w_out).transpose(1, 0, 2, 3)
        )
        tape = {
            "cols": cols,
            "theta_mat": w_mat,
            "chain_w": chain_w,
            "chain_b": chain_b,
            "x_shape": x.shape,
        }
        return z, tape

    def backward(self, grad_out, tape):
        """Gradients w.r.t. the input and the stored latent weight/bias."""
        batch = tape["x_shape"][0]
        g = grad_out.transpose(1, 0, 2, 3).reshape(self.out_channels, -1)
        if g.shape[1] != tape["cols"].shape[1]:
            raise DimensionError("gradient does not match taped forward")
        grad_b = _chain_grad(g.sum(axis=1), tape["chain_b"])
        grad_w_eff = (g @ tape["cols"].T).reshape(self.weight.shape)
        grad_w = _chain_grad(grad_w_eff, tape["chain_w"])
        grad_cols = tape["theta_mat"].T @ g
        grad_x = col2im_array(
            grad_cols, tape["x_shape"], self.kernel, self.stride, self.padding
        )
        return grad_x, {"weight": grad_w, "bias": grad_b}


class Dense:
    """Fully-connected layer ``y = x @ W.T + b``."""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        binarized: bool = True,
        fmt: QFormat | None = None,
        dtype=np.float32,
        rng: np.random.Generator | None = None,
    ):
        self.in_features = in_features
        self.out_features = out_features
        self.binarized = binarized
        self.fmt = fmt
        self.dtype = dtype
        rng = rng if rng is not None else np.random.default_rng(0)
        limit = np.sqrt(6.0 / (in_features + out_features))
        w0 = rng.uniform(-limit, limit, size=(out_features, in_features))
        self.weight = store(w0, fmt, dtype)
        self.bias = store(np.zeros(out_features), fmt, dtype)

    def forward(self, x, *, regime="real", scale=1.0, clip=DEFAULT_CLIP,
                rng=None, training=True):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise DimensionError(
                f"expected (B,{self.in_features}) input, got {x.shape}"
            )
        theta_w, chain_w = effective_params(
            self.weight, binarized=self.binarized, regime=regime,
            scale=scale, clip=clip, rng=rng, training=training,
        )
        theta_b, chain_b = effective_params(
            self.bias, binarized=self.binarized, regime=regime,
            scale=scale, clip=clip, rng=rng, training=training,
        )
        theta_w = store(theta_w, self.fmt, self.dtype)
        theta_b = store(theta_b, self.fmt, self.dtype)
        z = store(x @ theta_w.T + theta_b, self.fmt, self.dtype)
        tape = {"x": x, "theta": theta_w, "chain_w": chain_w, "chain_b": chain_b}
        return z, tape

    def backward(self, grad_out, tape):
        if grad_out.shape[1] != self.out_features:
            raise DimensionError("gradient does not match taped forward")
        grad_b = _chain_grad(grad_out.sum(axis=0), tape["chain_b"])
        grad_w = _chain_grad(grad_out.T @ tape["x"], tape["chain_w"])
        grad_x = grad_out @ tape["theta"]
        return grad_x, {"weight": grad_w, "bias": grad_b}


def maxpool_forward(x):
    """2x2/stride-2 max pooling; returns the output and the argmax mask.

    Ties go to the first position in row-major window scan order, which
    keeps backward routing deterministic.
    """
    if x.ndim != 4:
        raise DimensionError(f"expected (B,C,H,W) input, got {x.shape}")
    batch, chans, h, w = x.shape
    if h % 2 or w % 2:
        raise GeometryError(f"spatial extents must be even, got {h}x{w}")
    windows = (
        x.reshape(batch, chans, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(batch, chans, h // 2, w // 2, 4)
    )
    idx = windows.argmax(axis=-1)
    y = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return y, idx


def maxpool_backward(grad_out, idx):
    """Route each output gradient to its argmax input position."""
    if grad_out.shape != idx.shape:
        raise DimensionError(f"shape mismatch: {grad_out.shape} vs {idx.shape}")
    batch, chans, h_out, w_out = grad_out.shape
    g4 = np.zeros(grad_out.shape + (4,), dtype=np.result_type(grad_out, np.float64))
    np.put_along_axis(g4, idx[..., None], grad_out[..., None], axis=-1)
    return (
        g4.reshape(batch, chans, h_out, w_out, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(batch, chans, 2 * h_out, 2 * w_out)
    )


class BatchNorm:
    """Batch normalization with an affine transform and running statistics.

    The running deviation stores the smoothed batch value of
    ``sqrt(var + eps)`` directly, so the evaluation transform and the
    sign shortcut (:func:`bn_sign_shortcut`) use identical statistics.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5,
                 fmt: QFormat | None = None, dtype=np.float32):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.fmt = fmt
        self.dtype = dtype
        self.gamma = store(np.ones(channels), fmt, dtype)
        self.beta = store(np.zeros(channels), fmt, dtype)
        self.running_mean = store(np.zeros(channels), fmt, dtype)
        self.running_std = store(np.ones(channels), fmt, dtype)

    def _expand(self, v, ndim):
        return np.reshape(v, (1, -1) + (1,) * (ndim - 2))

    def _store_std(self, values):
        out = store(values, self.fmt, self.dtype)
        if self.fmt is not None:
            # quantization must not collapse the deviation to zero
            out = np.maximum(out, self.fmt.resolution)
        return out

    def forward(self, x, training=True):
        if x.ndim not in (2, 4) or x.shape[1] != self.channels:
            raise DimensionError(
                f"expected (B,{self.channels},...) input, got {x.shape}"
            )
        axes = (0,) if x.ndim == 2 else (0, 2, 3)
        if training:
            mu = x.mean(axis=axes, dtype=np.float64)
            var = np.square(x - self._expand(mu, x.ndim)).mean(axis=axes, dtype=np.float64)
            std = np.sqrt(var + self.eps)
            self.running_mean = store(
                (1.0 - self.momentum) * np.asarray(self.running_mean, np.float64)
                + self.momentum * mu,
                self.fmt, self.dtype,
            )
            self.running_std = self._store_std(
                (1.0 - self.momentum) * np.asarray(self.running_std, np.float64)
                + self.momentum * std
            )
        else:
            mu = np.asarray(self.running_mean, dtype=np.float64)
            std = np.asarray(self.running_std, dtype=np.float64)
        inv_std = 1.0 / std
        xhat = (x - self._expand(mu, x.ndim)) * self._expand(inv_std, x.ndim)
        y = store(
            self._expand(self.gamma, x.ndim) * xhat + self._expand(self.beta, x.ndim),
            self.fmt, self.dtype,
        )
        tape = {"xhat": xhat, "inv_std": inv_std, "axes": axes}
        return y, tape

    def backward(self, grad_out, tape):
        """Batch-statistics chain rule; returns (grad_x, grad_gamma, grad_beta)."""
        xhat = tape["xhat"]
        axes = tape["axes"]
        count = grad_out.size // self.channels
        grad_gamma = (grad_out * xhat).sum(axis=axes)
        grad_beta = grad_out.sum(axis=axes)
        dxhat = grad_out * self._expand(self.gamma, grad_out.ndim)
        grad_x = (
            self._expand(tape["inv_std"], grad_out.ndim)
            / count
            * (
                count * dxhat
                - self._expand(dxhat.sum(axis=axes), grad_out.ndim)
                - xhat * self._expand((dxhat * xhat).sum(axis=axes), grad_out.ndim)
            )
        )
        return grad_x, grad_gamma, grad_beta

    def fold_thresholds(self):
        """Per-channel (threshold, gamma_positive, foldable) for sign shortcuts.

        threshold = running_mean - running_std * beta / gamma; channels with
        gamma == 0 are marked non-foldable (their normalized output is the
        constant beta).
        """
        gamma = np.asarray(self.gamma, dtype=np.float64)
        beta = np.asarray(self.beta, dtype=np.float64)
        mean = np.asarray(self.running_mean, dtype=np.float64)
        std = np.asarray(self.running_std, dtype=np.float64)
        foldable = gamma != 0.0
        safe_gamma = np.where(foldable, gamma, 1.0)
        threshold = mean - std * beta / safe_gamma
        return threshold, gamma > 0.0, foldable


def bn_sign_shortcut(x, bn: BatchNorm):
    """Sign of the eval-mode batch-norm output without normalizing.

    Per channel: +1 where ``(x > T) XNOR (gamma > 0)`` with
    ``T = running_mean - running_std * beta / gamma``.  An exact threshold
    hit normalizes to zero, whose sign is -1, so the comparison direction
    follows the sign of gamma (plain XNOR would call x == T positive for
    negative gains).  Channels with gamma == 0 fall back to the full
    normalization (whose output is the constant beta) followed by sign.
    """
    if x.ndim not in (2, 4) or x.shape[1] != bn.channels:
        raise DimensionError(f"expected (B,{bn.channels},...) input, got {x.shape}")
    threshold, gamma_pos, foldable = bn.fold_thresholds()
    t = bn._expand(threshold, x.ndim)
    pos = bn._expand(gamma_pos, x.ndim)
    out = np.where(np.where(pos, x > t, x < t), 1.0, -1.0)
    if not foldable.all():
        beta_sign = binarize_det(np.asarray(bn.beta, dtype=np.float64))
        fallback = np.broadcast_to(bn._expand(beta_sign, x.ndim), out.shape)
        out = np.where(bn._expand(foldable, x.ndim), out, fallback)
    return out


class ActivationLayer:
    """Regime-dependent activation: PWL / sign-with-STE / ReLU."""

    def __init__(self, fmt: QFormat | None = None, dtype=np.float32):
        self.fmt = fmt
        self.dtype = dtype

    def forward(self, z, *, regime="real", scale=1.0, clip=DEFAULT_CLIP,
                rng=None, training=True):
        if regime == "progressive":
            a = theta_pwl(z, scale)
            chain = pwl_chain(z, scale)
        elif regime == "deterministic":
            a = binarize_det(z)
            chain = ste_chain(z, clip)
        elif regime == "stochastic":
            if training and rng is not None:
                a = binarize_stoch(z, rng)
            else:
                a = binarize_det(z)
            chain = ste_chain(z, clip)
        elif regime == "real":
            a = np.maximum(z, 0)
            chain = (np.asarray(z) > 0).astype(np.float64)
        else:
            raise ValueError(f"unknown regime {regime!r}")
        return store(a, self.fmt, self.dtype), {"chain": chain}

    def backward(self, grad_out, tape):
        return grad_out * tape["chain"]
