"""Network assembly: architecture specs, blocks, and whole-net passes.

A network is a sequence of blocks (conv+BN+activation, pool, flatten,
FC+BN+activation, output FC).  Forward passes thread a ``ForwardCtx``
carrying the regime, surrogate scale, and RNG hooks; backward passes
consume the taped intermediates in reverse and produce one gradient per
parameter slot.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .binarize import keyed_rng
from .errors import DimensionError
from .fxp import QFormat
from .layers import (
    ActivationLayer,
    BatchNorm,
    Conv2d,
    Dense,
    bn_sign_shortcut,
    maxpool_backward,
    maxpool_forward,
)
from .tensor import store

__all__ = [
    "LayerDef",
    "NetworkSpec",
    "tiny_architecture",
    "benchmark_architecture",
    "architecture_for",
    "ForwardCtx",
    "ParamSlot",
    "Network",
    "parameter_memory",
]

# RNG stream ids (spawn-key prefixes) used across the package
STREAM_INIT = 0
STREAM_SHUFFLE = 1
STREAM_BINARIZE = 2
STREAM_AUGMENT = 3


@dataclass(frozen=True)
class LayerDef:
    kind: str  # "conv" | "pool" | "fc"
    features: int = 0  # conv filters / fc width
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    binarized: bool = True


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer descriptors; the last layer must be the real-valued FC head."""

    layers: tuple[LayerDef, ...]
    input_shape: tuple[int, int, int] = (3, 32, 32)
    classes: int = 10

    def __post_init__(self):
        if not self.layers or self.layers[-1].kind != "fc":
            raise DimensionError("network must end in a fully-connected layer")
        if self.layers[-1].binarized:
            raise DimensionError("the output layer adopts real-valued representations")
        if self.layers[-1].features != self.classes:
            raise DimensionError("output layer width must equal the class count")
        self.shape_chain()  # validates geometry end-to-end

    def shape_chain(self) -> list[tuple[str, tuple[int, ...]]]:
        """Per-layer (description, output shape); raises on invalid geometry."""
        chain = []
        shape: tuple[int, ...] = self.input_shape
        for ld in self.layers:
            if ld.kind == "conv":
                if len(shape) != 3:
                    raise DimensionError("convolution after flattening")
                chans, h, w = shape
                conv = Conv2d(chans, ld.features, ld.kernel, ld.stride, ld.padding,
                              rng=np.random.default_rng(0))
                shape = conv.output_shape(shape)
                chain.append(
                    (f"conv f={ld.features} k={ld.kernel} s={ld.stride} p={ld.padding}",
                     shape)
                )
            elif ld.kind == "pool":
                if len(shape) != 3 or shape[1] % 2 or shape[2] % 2:
                    raise DimensionError(f"cannot 2x2-pool shape {shape}")
                shape = (shape[0], shape[1] // 2, shape[2] // 2)
                chain.append(("maxpool k=2 s=2", shape))
            elif ld.kind == "fc":
                shape = (ld.features,)
                chain.append((f"fc n={ld.features}", shape))
            else:
                raise DimensionError(f"unknown layer kind {ld.kind!r}")
        return chain


def tiny_architecture(conv_channels=(16, 32), hidden=128,
                      input_shape=(3, 32, 32), classes=10) -> NetworkSpec:
    """Desk-scale test network: 2 conv (+pool) stages and one hidden FC."""
    c1, c2 = conv_channels
    return NetworkSpec(
        layers=(
            LayerDef("conv", c1),
            LayerDef("pool"),
            LayerDef("conv", c2),
            LayerDef("pool"),
            LayerDef("fc", hidden),
            LayerDef("fc", classes, binarized=False),
        ),
        input_shape=input_shape,
        classes=classes,
    )


def benchmark_architecture() -> NetworkSpec:
    """The full VGG-variant benchmark network (all binarized but the head)."""
    return NetworkSpec(
        layers=(
            LayerDef("conv", 128),
            LayerDef("conv", 128),
            LayerDef("pool"),
            LayerDef("conv", 128),
            LayerDef("conv", 256),
            LayerDef("pool"),
            LayerDef("conv", 256),
            LayerDef("conv", 512),
            LayerDef("pool"),
            LayerDef("fc", 1024),
            LayerDef("fc", 1024),
            LayerDef("fc", 10, binarized=False),
        )
    )


def architecture_for(name: str) -> NetworkSpec:
    if name == "tiny":
        return tiny_architecture()
    if name == "paper":
        return benchmark_architecture()
    raise DimensionError(f"unknown architecture {name!r}")


@dataclass
class ForwardCtx:
    """Per-forward settings shared by every block."""

    regime: str
    scale: float
    clip: float
    training: bool
    rng_for: Callable[[int, int], np.random.Generator | None] | None = None
    shortcut: bool = False  # substitute sign(BN(x)) with the threshold form

    def rng(self, block_id: int, role: int):
        if self.rng_for is None:
            return None
        return self.rng_for(block_id, role)


@dataclass
class ParamSlot:
    """Named reference to one stored tensor (trainable or buffer)."""

    key: str
    obj: object
    attr: str
    trainable: bool = True
    clamp: bool = False  # clamp to [-clip, clip] after updates (shadow weights)

    def get(self) -> np.ndarray:
        return getattr(self.obj, self.attr)

    def set(self, values: np.ndarray) -> None:
        setattr(self.obj, self.attr, values)


class _ConvBlock:
    def __init__(self, conv: Conv2d, bn: BatchNorm, act: ActivationLayer):
        self.conv = conv
        self.bn = bn
        self.act = act

    def forward(self, x, ctx: ForwardCtx, block_id: int):
        z, conv_tape = self.conv.forward(
            x, regime=ctx.regime, scale=ctx.scale, clip=ctx.clip,
            rng=ctx.rng(block_id, 0), training=ctx.training,
        )
        if ctx.shortcut and not ctx.training:
            a = store(bn_sign_shortcut(z, self.bn), self.conv.fmt, self.conv.dtype)
            return a, None
        y, bn_tape = self.bn.forward(z, training=ctx.training)
        a, act_tape = self.act.forward(
            y, regime=ctx.regime, scale=ctx.scale, clip=ctx.clip,
            rng=ctx.rng(block_id, 1), training=ctx.training,
        )
        return a, (conv_tape, bn_tape, act_tape)

    def backward(self, grad, tape):
        conv_tape, bn_tape, act_tape = tape
        g = self.act.backward(grad, act_tape)
        g, d_gamma, d_beta = self.bn.backward(g, bn_tape)
        g, conv_grads = self.conv.backward(g, conv_tape)
        grads = {
            "conv.weight": conv_grads["weight"],
            "conv.bias": conv_grads["bias"],
            "bn.gamma": d_gamma,
            "bn.beta": d_beta,
        }
        return g, grads

    def slots(self, prefix, regime):
        shadow = self.conv.binarized and regime in ("deterministic", "stochastic")
        return [
            ParamSlot(f"{prefix}.conv.weight", self.conv, "weight", clamp=shadow),
            ParamSlot(f"{prefix}.conv.bias", self.conv, "bias", clamp=shadow),
            ParamSlot(f"{prefix}.bn.gamma", self.bn, "gamma"),
            ParamSlot(f"{prefix}.bn.beta", self.bn, "beta"),
            ParamSlot(f"{prefix}.bn.running_mean", self.bn, "running_mean", trainable=False),
            ParamSlot(f"{prefix}.bn.running_std", self.bn, "running_std", trainable=False),
        ]


class _FcBlock:
    """Hidden FC with BN+activation, or the bare real-valued output head."""

    def __init__(self, fc: Dense, bn: BatchNorm | None, act: ActivationLayer | None):
        self.fc = fc
        self.bn = bn
        self.act = act

    def forward(self, x, ctx: ForwardCtx, block_id: int):
        z, fc_tape = self.fc.forward(
            x, regime=ctx.regime, scale=ctx.scale, clip=ctx.clip,
            rng=ctx.rng(block_id, 0), training=ctx.training,
        )
        if self.bn is None:
            return z, (fc_tape, None, None)
        if ctx.shortcut and not ctx.training:
            a = store(bn_sign_shortcut(z, self.bn), self.fc.fmt, self.fc.dtype)
            return a, None
        y, bn_tape = self.bn.forward(z, training=ctx.training)
        a, act_tape = self.act.forward(
            y, regime=ctx.regime, scale=ctx.scale, clip=ctx.clip,
            rng=ctx.rng(block_id, 1), training=ctx.training,
        )
        return a, (fc_tape, bn_tape, act_tape)

    def backward(self, grad, tape):
        fc_tape, bn_tape, act_tape = tape
        grads = {}
        g = grad
        if bn_tape is not None:
            g = self.act.backward(g, act_tape)
            g, d_gamma, d_beta = self.bn.backward(g, bn_tape)
            grads["bn.gamma"] = d_gamma
            grads["bn.beta"] = d_beta
        g, fc_grads = self.fc.backward(g, fc_tape)
        grads["fc.weight"] = fc_grads["weight"]
        grads["fc.bias"] = fc_grads["bias"]
        return g, grads

    def slots(self, prefix, regime):
        shadow = self.fc.binarized and regime in ("deterministic", "stochastic")
        out = [
            ParamSlot(f"{prefix}.fc.weight", self.fc, "weight", clamp=shadow),
            ParamSlot(f"{prefix}.fc.bias", self.fc, "bias", clamp=shadow),
        ]
        if self.bn is not None:
            out += [
                ParamSlot(f"{prefix}.bn.gamma", self.bn, "gamma"),
                ParamSlot(f"{prefix}.bn.beta", self.bn, "beta"),
                ParamSlot(f"{prefix}.bn.running_mean", self.bn, "running_mean", trainable=False),
                ParamSlot(f"{prefix}.bn.running_std", self.bn, "running_std", trainable=False),
            ]
        return out


class _PoolBlock:
    def forward(self, x, ctx, block_id):
        y, idx = maxpool_forward(x)
        return y, idx

    def backward(self, grad, tape):
        return maxpool_backward(grad, tape), {}

    def slots(self, prefix, regime):
        return []


class _FlattenBlock:
    def forward(self, x, ctx, block_id):
        return np.ascontiguousarray(x.reshape(x.shape[0], -1)), x.shape

    def backward(self, grad, tape):
        return grad.reshape(tape), {}

    def slots(self, prefix, regime):
        return []


class Network:
    """Assembled network over one backend, driven by a single trainer."""

    def __init__(
        self,
        spec: NetworkSpec,
        regime: str,
        fmt: QFormat | None = None,
        dtype=np.float32,
        seed: int = 0,
        clip: float = 1.0,
        bn_momentum: float = 0.1,
        bn_eps: float = 1e-5,
    ):
        self.spec = spec
        self.regime = regime
        self.fmt = fmt
        self.dtype = np.float64 if fmt is not None else dtype
        self.seed = seed
        self.clip = clip
        self.blocks: list = []

        shape: tuple[int, ...] = spec.input_shape
        n_layers = len(spec.layers)
        for i, ld in enumerate(spec.layers):
            rng = keyed_rng(seed, STREAM_INIT, i)
            is_output = i == n_layers - 1
            if ld.kind == "conv":
                conv = Conv2d(
                    shape[0], ld.features, ld.kernel, ld.stride, ld.padding,
                    binarized=ld.binarized, fmt=fmt, dtype=self.dtype, rng=rng,
                )
                shape = conv.output_shape(shape)
                self.blocks.append(_ConvBlock(
                    conv,
                    BatchNorm(ld.features, bn_momentum, bn_eps, fmt, self.dtype),
                    ActivationLayer(fmt, self.dtype),
                ))
            elif ld.kind == "pool":
                shape = (shape[0], shape[1] // 2, shape[2] // 2)
                self.blocks.append(_PoolBlock())
            elif ld.kind == "fc":
                if len(shape) != 1:
                    self.blocks.append(_FlattenBlock())
                    shape = (int(np.prod(shape)),)
                fc = Dense(shape[0], ld.features, binarized=ld.binarized,
                           fmt=fmt, dtype=self.dtype, rng=rng)
                shape = (ld.features,)
                if is_output:
                    self.blocks.append(_FcBlock(fc, None, None))
                else:
                    self.blocks.append(_FcBlock(
                        fc,
                        BatchNorm(ld.features, bn_momentum, bn_eps, fmt, self.dtype),
                        ActivationLayer(fmt, self.dtype),
                    ))

    def forward(self, x, ctx: ForwardCtx):
        tapes = []
        for block_id, block in enumerate(self.blocks):
            x, tape = block.forward(x, ctx, block_id)
            tapes.append(tape)
        return x, tapes

    def backward(self, grad_logits, tapes):
        """Gradients for every trainable slot, keyed like :meth:`slots`."""
        grads: dict[str, np.ndarray] = {}
        g = grad_logits
        for block_id in reversed(range(len(self.blocks))):
            block = self.blocks[block_id]
            tape = tapes[block_id]
            if tape is None:
                raise DimensionError("cannot backpropagate through a shortcut forward")
            g, block_grads = block.backward(g, tape)
            for name, value in block_grads.items():
                grads[f"b{block_id:02d}.{name}"] = value
        return grads

    def slots(self) -> list[ParamSlot]:
        out = []
        for block_id, block in enumerate(self.blocks):
            out.extend(block.slots(f"b{block_id:02d}", self.regime))
        return out

    def parameters(self) -> list[ParamSlot]:
        return [s for s in self.slots() if s.trainable]


def parameter_memory(net: Network) -> dict[str, int]:
    """Byte accounting of every stored tensor, split by category.

    ``binary_copy_bytes`` models the packed one-bit binarized parameter set
    that conventional (deterministic/stochastic) training materializes next
    to its real-valued shadow copy; progressive training keeps a single
    latent set and the category is zero.
    """
    width = 4 if net.fmt is None else net.fmt.total_bits // 8
    latent = 0
    binary_copy = 0
    bn_bytes = 0
    adam_bytes = 0
    dual = net.regime in ("deterministic", "stochastic")
    for slot in net.slots():
        n = slot.get().size
        if ".bn." in slot.key:
            bn_bytes += n * width
        else:
            latent += n * width
            layer = slot.obj
            if dual and getattr(layer, "binarized", False):
                binary_copy += (n + 7) // 8
        if slot.trainable:
            adam_bytes += 2 * n * 8  # float64 first/second moments
    return {
        "latent_bytes": latent,
        "binary_copy_bytes": binary_copy,
        "bn_bytes": bn_bytes,
        "adam_bytes": adam_bytes,
        "total_bytes": latent + binary_copy + bn_bytes + adam_bytes,
    }
