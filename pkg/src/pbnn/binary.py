"""Trained-parameter extraction and the binary-weight inference path.

Extraction snapshots a trained network into ``BinaryParams``: sign tensors
for every binarized layer, batch-norm folded into per-channel sign
thresholds, and the real-valued output head copied verbatim.  Inference
replays the network with plain +-1 weight matmuls and threshold
comparisons (the software stand-in for a conventional BNN inference
accelerator).
"""

from __future__ import annotations

import json

import numpy as np

from .binarize import binarize_det
from .errors import CheckpointError, DimensionError
from .network import Network, _ConvBlock, _FcBlock, _FlattenBlock, _PoolBlock
from .tensor import im2col_array

__all__ = ["BinaryParams", "extract_binary_params", "binary_infer", "evaluate_binary"]

FORMAT_VERSION = 1


def _fold_bn(bn):
    threshold, gamma_pos, foldable = bn.fold_thresholds()
    return {
        "threshold": threshold,
        "gamma_pos": gamma_pos.astype(np.bool_),
        "foldable": foldable.astype(np.bool_),
        "bn_gamma": np.asarray(bn.gamma, dtype=np.float64),
        "bn_beta": np.asarray(bn.beta, dtype=np.float64),
        "bn_mean": np.asarray(bn.running_mean, dtype=np.float64),
        "bn_std": np.asarray(bn.running_std, dtype=np.float64),
    }


def extract_binary_params(net: Network) -> "BinaryParams":
    """Pure read of the network into its deployable binary form.

    Binarized layers contribute the sign of their latent/shadow values
    (zero maps to -1); channels whose BN gain is exactly zero keep the
    unfolded normalization parameters instead of a threshold.
    """
    entries = []
    for block in net.blocks:
        if isinstance(block, _PoolBlock):
            entries.append({"kind": "pool"})
        elif isinstance(block, _FlattenBlock):
            entries.append({"kind": "flatten"})
        elif isinstance(block, _ConvBlock):
            entry = {
                "kind": "conv",
                "weight": binarize_det(block.conv.weight).astype(np.int8),
                "bias": binarize_det(block.conv.bias).astype(np.int8),
                "kernel": block.conv.kernel,
                "stride": block.conv.stride,
                "padding": block.conv.padding,
            }
            entry.update(_fold_bn(block.bn))
            entries.append(entry)
        elif isinstance(block, _FcBlock):
            if block.bn is None:
                entries.append({
                    "kind": "fc_real",
                    "weight": np.asarray(block.fc.weight, dtype=np.float64).copy(),
                    "bias": np.asarray(block.fc.bias, dtype=np.float64).copy(),
                })
            else:
                entry = {
                    "kind": "fc",
                    "weight": binarize_det(block.fc.weight).astype(np.int8),
                    "bias": binarize_det(block.fc.bias).astype(np.int8),
                }
                entry.update(_fold_bn(block.bn))
                entries.append(entry)
        else:  # pragma: no cover - construction guarantees the block set
            raise DimensionError(f"cannot extract {type(block).__name__}")
    return BinaryParams(entries, net.spec.input_shape, net.spec.classes)


def _threshold_sign(z, entry):
    """+1 where (z > T) XNOR (gamma > 0), with unfolded fallback channels.

    Exact threshold hits count as -1 (sign of a zero normalized output),
    hence the comparison direction flips with the gain's sign.
    """
    expand = (1, -1) + (1,) * (z.ndim - 2)
    t = entry["threshold"].reshape(expand)
    pos = entry["gamma_pos"].reshape(expand)
    out = np.where(np.where(pos, z > t, z < t), 1.0, -1.0)
    foldable = entry["foldable"]
    if not foldable.all():
        gamma = entry["bn_gamma"].reshape(expand)
        beta = entry["bn_beta"].reshape(expand)
        mean = entry["bn_mean"].reshape(expand)
        std = entry["bn_std"].reshape(expand)
        y = gamma * (z - mean) / std + beta
        out = np.where(foldable.reshape(expand), out, binarize_det(y))
    return out


class BinaryParams:
    """Deployable parameter set: sign tensors, BN thresholds, real head."""

    def __init__(self, entries, input_shape, classes):
        self.entries = entries
        self.input_shape = tuple(input_shape)
        self.classes = int(classes)
        self.validate()

    def validate(self):
        if not self.entries or self.entries[-1]["kind"] != "fc_real":
            raise CheckpointError("binary parameters must end in the real-valued head")
        for entry in self.entries:
            if entry["kind"] in ("conv", "fc"):
                w = entry["weight"]
                if not np.isin(w, (-1, 1)).all():
                    raise CheckpointError("binarized weights must be in {-1,+1}")

    def predict(self, images) -> np.ndarray:
        """Class predictions for one (C,H,W) image or an (N,C,H,W) batch."""
        single = images.ndim == 3
        x = np.asarray(images, dtype=np.float64)
        if single:
            x = x[None]
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise DimensionError(
                f"expected input shape {self.input_shape}, got {images.shape}"
            )
        for entry in self.entries:
            kind = entry["kind"]
            if kind == "pool":
                b, c, h, w = x.shape
                x = (
                    x.reshape(b, c, h // 2, 2, w // 2, 2)
                    .transpose(0, 1, 2, 4, 3, 5)
                    .reshape(b, c, h // 2, w // 2, 4)
                    .max(axis=-1)
                )
            elif kind == "flatten":
                x = x.reshape(x.shape[0], -1)
            elif kind == "conv":
                w_mat = entry["weight"].astype(np.float64)
                filters = w_mat.shape[0]
                k, s, p = entry["kernel"], entry["stride"], entry["padding"]
                batch = x.shape[0]
                h_out = (x.shape[2] + 2 * p - k) // s + 1
                w_out = (x.shape[3] + 2 * p - k) // s + 1
                cols = im2col_array(x, k, s, p)
                z = w_mat.reshape(filters, -1) @ cols
                z += entry["bias"].astype(np.float64)[:, None]
                z = z.reshape(filters, batch, h_out, w_out).transpose(1, 0, 2, 3)
                x = _threshold_sign(z, entry)
            elif kind == "fc":
                z = x @ entry["weight"].astype(np.float64).T
                z += entry["bias"].astype(np.float64)
                x = _threshold_sign(z, entry)
            elif kind == "fc_real":
                logits = x @ entry["weight"].T + entry["bias"]
            else:
                raise CheckpointError(f"unknown entry kind {kind!r}")
        preds = np.argmax(logits, axis=1)  # ties resolve to the lowest index
        return int(preds[0]) if single else preds

    # --- serialization -------------------------------------------------

    def save(self, path: str) -> None:
        arrays = {}
        meta = {
            "version": FORMAT_VERSION,
            "input_shape": list(self.input_shape),
            "classes": self.classes,
            "kinds": [e["kind"] for e in self.entries],
            "geometry": [
                [e["kernel"], e["stride"], e["padding"]] if e["kind"] == "conv" else None
                for e in self.entries
            ],
        }
        arrays["meta"] = np.array(json.dumps(meta))
        for i, entry in enumerate(self.entries):
            for key, value in entry.items():
                if isinstance(value, np.ndarray):
                    arrays[f"e{i:02d}/{key}"] = value
        with open(path, "wb") as f:
            np.savez(f, **arrays)

    @classmethod
    def load(cls, path: str) -> "BinaryParams":
        try:
            with np.load(path, allow_pickle=False) as payload:
                meta = json.loads(str(payload["meta"]))
                if meta.get("version") != FORMAT_VERSION:
                    raise CheckpointError(
                        f"unsupported binary-params version {meta.get('version')}"
                    )
                entries = []
                for i, kind in enumerate(meta["kinds"]):
                    entry = {"kind": kind}
                    prefix = f"e{i:02d}/"
                    for key in payload.files:
                        if key.startswith(prefix):
                            entry[key[len(prefix):]] = payload[key]
                    if kind == "conv":
                        k, s, p = meta["geometry"][i]
                        entry.update(kernel=k, stride=s, padding=p)
                    entries.append(entry)
        except CheckpointError:
            raise
        except Exception as e:
            raise CheckpointError(f"cannot load binary parameters: {e}") from None
        return cls(entries, meta["input_shape"], meta["classes"])


def binary_infer(params: BinaryParams, images):
    return params.predict(images)


def evaluate_binary(params: BinaryParams, dataset) -> float:
    preds = params.predict(dataset.images)
    return float((preds == dataset.labels).mean())
