"""Training driver: per-epoch loop, evaluation, and run orchestration.

One ``Trainer`` owns one network, its optimizer state, and the per-epoch
records.  Everything random is keyed by (seed, stream, epoch, ...) through
counter-based generators, so identical (seed, config) runs are identical
and checkpoint resume is exact.
"""

from __future__ import annotations

import math
import time
from typing import Callable

import numpy as np

from .binarize import keyed_rng
from .config import RunConfig
from .data import Dataset, batches
from .errors import TrainingDiverged
from .metrics import EpochRecord
from .network import (
    STREAM_AUGMENT,
    STREAM_BINARIZE,
    STREAM_SHUFFLE,
    ForwardCtx,
    Network,
    architecture_for,
    parameter_memory,
)
from .optim import AdamState, adam_step, cross_entropy, lr_schedule, v_schedule
from .tensor import store

__all__ = ["Trainer", "SHORTCUT_SCALE"]

# scale threshold above which no-gradient forwards use the BN sign shortcut
SHORTCUT_SCALE = 500.0

EVAL_BATCH = 256


def _augment(images, rng, flip: bool, crop: bool):
    """Optional horizontal flip and 4-pixel random crop, per sample."""
    if flip:
        mask = rng.random(images.shape[0]) < 0.5
        images = images.copy()
        images[mask] = images[mask, :, :, ::-1]
    if crop:
        pad = 4
        n, c, h, w = images.shape
        padded = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=images.dtype)
        padded[:, :, pad : pad + h, pad : pad + w] = images
        offsets = rng.integers(0, 2 * pad + 1, size=(n, 2))
        out = np.empty_like(images)
        for i in range(n):
            oy, ox = offsets[i]
            out[i] = padded[i, :, oy : oy + h, ox : ox + w]
        images = out
    return images


class Trainer:
    def __init__(self, cfg: RunConfig, train_ds: Dataset, test_ds: Dataset):
        cfg.validate()
        self.cfg = cfg
        self.train_ds = train_ds
        self.test_ds = test_ds
        fmt = cfg.fmt()
        self.net = Network(
            architecture_for(cfg.arch),
            regime=cfg.regime,
            fmt=fmt,
            seed=cfg.seed,
            clip=cfg.clip,
        )
        self.adam = {
            slot.key: AdamState.zeros_like(slot.get())
            for slot in self.net.parameters()
        }
        self.records: list[EpochRecord] = []
        self.completed_epochs = 0

    # --- schedules ---------------------------------------------------

    def scale_for(self, epoch: int) -> float:
        if self.cfg.epochs < 2:
            return 1.0
        return v_schedule(epoch, self.cfg.epochs)

    # --- forward contexts ----------------------------------------------

    def _train_ctx(self, scale: float, epoch: int, batch_index: int) -> ForwardCtx:
        rng_for = None
        if self.cfg.regime == "stochastic":
            seed = self.cfg.seed

            def rng_for(block_id, role, _e=epoch, _b=batch_index):
                return keyed_rng(seed, STREAM_BINARIZE, _e, _b, block_id, role)

        return ForwardCtx(
            regime=self.cfg.regime, scale=scale, clip=self.cfg.clip,
            training=True, rng_for=rng_for, shortcut=False,
        )

    def _eval_ctx(self, scale: float) -> ForwardCtx:
        shortcut = self.cfg.regime != "real" and scale >= SHORTCUT_SCALE
        return ForwardCtx(
            regime=self.cfg.regime, scale=scale, clip=self.cfg.clip,
            training=False, rng_for=None, shortcut=shortcut,
        )

    # --- core loops ----------------------------------------------------

    def run_epoch(self, epoch: int) -> EpochRecord:
        """One pass over the training set followed by a test evaluation."""
        cfg = self.cfg
        eta = lr_schedule(epoch)
        scale = self.scale_for(epoch)
        fmt = self.net.fmt
        start = time.perf_counter()
        losses = []
        shuffle_rng = keyed_rng(cfg.seed, STREAM_SHUFFLE, epoch)
        slots = self.net.parameters()
        for batch_index, (xb, yb) in enumerate(
            batches(self.train_ds, cfg.batch_size, shuffle_rng)
        ):
            if cfg.augment_flip or cfg.augment_crop:
                aug_rng = keyed_rng(cfg.seed, STREAM_AUGMENT, epoch, batch_index)
                xb = _augment(xb, aug_rng, cfg.augment_flip, cfg.augment_crop)
            x = store(xb, fmt, self.net.dtype)
            ctx = self._train_ctx(scale, epoch, batch_index)
            logits, tapes = self.net.forward(x, ctx)
            loss, grad_logits = cross_entropy(logits, yb)
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, batch_index, loss)
            grads = self.net.backward(grad_logits, tapes)
            for slot in slots:
                new, _ = adam_step(slot.get(), grads[slot.key], self.adam[slot.key], eta)
                if slot.clamp:
                    np.clip(new, -cfg.clip, cfg.clip, out=new)
                slot.set(store(new, fmt, self.net.dtype))
            losses.append(loss)
        train_loss = float(np.mean(losses)) if losses else math.nan
        accuracy = self.evaluate(scale=scale)
        wall = time.perf_counter() - start
        record = EpochRecord(epoch + 1, eta, scale, train_loss, accuracy, wall)
        self.records.append(record)
        self.completed_epochs = epoch + 1
        return record

    def predict(self, images, scale: float | None = None) -> np.ndarray:
        """Eval-mode class predictions (deterministic transforms, batched)."""
        scale = scale if scale is not None else self.scale_for(max(self.completed_epochs - 1, 0))
        ctx = self._eval_ctx(scale)
        preds = []
        for lo in range(0, len(images), EVAL_BATCH):
            x = store(images[lo : lo + EVAL_BATCH], self.net.fmt, self.net.dtype)
            logits, _ = self.net.forward(x, ctx)
            preds.append(np.argmax(logits, axis=1))
        return np.concatenate(preds) if preds else np.empty(0, dtype=np.int64)

    def evaluate(self, ds: Dataset | None = None, scale: float | None = None) -> float:
        """Argmax accuracy with eval-mode forwards."""
        ds = ds if ds is not None else self.test_ds
        preds = self.predict(ds.images, scale=scale)
        return float((preds == ds.labels).mean())

    def fit(self, on_epoch: Callable[["Trainer", EpochRecord], None] | None = None):
        """Run all remaining epochs; epoch 0 is a pre-training evaluation anchor."""
        if self.completed_epochs == 0 and not self.records:
            start = time.perf_counter()
            accuracy = self.evaluate(scale=self.scale_for(0))
            anchor = EpochRecord(
                0, lr_schedule(0), self.scale_for(0), None, accuracy,
                time.perf_counter() - start,
            )
            self.records.append(anchor)
            if on_epoch:
                on_epoch(self, anchor)
        for epoch in range(self.completed_epochs, self.cfg.epochs):
            record = self.run_epoch(epoch)
            if on_epoch:
                on_epoch(self, record)
        return self.records

    # --- reporting -------------------------------------------------------

    def verify_in_range(self, probe_images=None) -> None:
        """Assert every fixed-point tensor is on-grid and inside its format.

        Checks all stored tensors and, given probe images, every forward
        activation.  Saturating arithmetic guarantees this by construction;
        the walk makes no-wraparound observable per epoch.
        """
        fmt = self.net.fmt
        if fmt is None:
            return
        def check(name, values):
            values = np.asarray(values)
            if values.size == 0:
                return
            if values.min() < fmt.min_value or values.max() > fmt.max_value:
                raise AssertionError(f"{name} outside {fmt} range")
            raw = values * fmt.scale
            if not np.array_equal(raw, np.rint(raw)):
                raise AssertionError(f"{name} is off the {fmt} grid")

        for slot in self.net.slots():
            check(slot.key, slot.get())
        if probe_images is not None:
            x = store(probe_images, fmt, self.net.dtype)
            ctx = self._eval_ctx(self.scale_for(max(self.completed_epochs - 1, 0)))
            check("input", x)
            for block_id, block in enumerate(self.net.blocks):
                x, _ = block.forward(x, ctx, block_id)
                check(f"block{block_id}.out", x)

    def memory_report(self) -> dict[str, int]:
        return parameter_memory(self.net)

    def final_accuracy(self) -> float:
        return self.records[-1].test_acc if self.records else math.nan
