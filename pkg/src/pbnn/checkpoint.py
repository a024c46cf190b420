"""Versioned binary checkpoints with bit-exact resume.

The container is an npz archive holding the run config (JSON), the epoch
counter, all stored tensors (raw integers for fixed-point backends, float
arrays otherwise), Adam state, and the per-epoch records.  Randomness is
counter-based and derived from (seed, epoch, ...), so no generator state
needs saving.  Writes are atomic (temp file + rename).
"""

from __future__ import annotations

import math
import os

import numpy as np

from .config import RunConfig
from .errors import CheckpointError
from .fxp import raw_from_values, values_from_raw
from .metrics import EpochRecord
from .train import Trainer

__all__ = ["CHECKPOINT_VERSION", "save_checkpoint", "peek_config", "load_trainer"]

CHECKPOINT_VERSION = 1


def _records_to_arrays(records):
    num = np.array(
        [
            [
                r.epoch,
                r.eta,
                r.scale,
                math.nan if r.train_loss is None else r.train_loss,
                r.test_acc,
                r.wall_seconds,
            ]
            for r in records
        ],
        dtype=np.float64,
    ).reshape(len(records), 6)
    return num


def _records_from_array(num) -> list[EpochRecord]:
    out = []
    for row in np.asarray(num, dtype=np.float64).reshape(-1, 6):
        out.append(
            EpochRecord(
                epoch=int(row[0]),
                eta=float(row[1]),
                scale=float(row[2]),
                train_loss=None if math.isnan(row[3]) else float(row[3]),
                test_acc=float(row[4]),
                wall_seconds=float(row[5]),
            )
        )
    return out


def save_checkpoint(trainer: Trainer, path: str) -> None:
    fmt = trainer.net.fmt
    arrays = {
        "meta/version": np.array(CHECKPOINT_VERSION, dtype=np.int64),
        "meta/config": np.array(trainer.cfg.to_json()),
        "meta/epoch": np.array(trainer.completed_epochs, dtype=np.int64),
        "meta/records": _records_to_arrays(trainer.records),
    }
    for slot in trainer.net.slots():
        values = slot.get()
        if fmt is not None:
            arrays[f"state/{slot.key}"] = raw_from_values(values, fmt).astype(np.int16)
        else:
            arrays[f"state/{slot.key}"] = np.asarray(values)
    for key, state in trainer.adam.items():
        arrays[f"adam/{key}/m"] = state.m
        arrays[f"adam/{key}/s"] = state.s
        arrays[f"adam/{key}/t"] = np.array(state.t, dtype=np.int64)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        np.savez(f, **arrays)
    os.replace(tmp, path)


def peek_config(path: str) -> tuple[RunConfig, int]:
    """Read (config, completed_epochs) without materializing the state."""
    try:
        with np.load(path, allow_pickle=False) as payload:
            version = int(payload["meta/version"])
            if version != CHECKPOINT_VERSION:
                raise CheckpointError(f"unsupported checkpoint version {version}")
            cfg = RunConfig.from_json(str(payload["meta/config"]))
            epoch = int(payload["meta/epoch"])
    except CheckpointError:
        raise
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None
    return cfg, epoch


def load_trainer(path: str, train_ds, test_ds, out_override: str | None = None) -> Trainer:
    """Rebuild a trainer in the exact state the checkpoint captured."""
    cfg, _ = peek_config(path)
    if out_override:
        cfg = cfg.with_output(out_override)
    trainer = Trainer(cfg, train_ds, test_ds)
    fmt = trainer.net.fmt
    try:
        with np.load(path, allow_pickle=False) as payload:
            for slot in trainer.net.slots():
                key = f"state/{slot.key}"
                if key not in payload:
                    raise CheckpointError(f"checkpoint missing tensor {slot.key}")
                stored = payload[key]
                if fmt is not None:
                    slot.set(values_from_raw(stored, fmt))
                else:
                    slot.set(np.asarray(stored))
            for key, state in trainer.adam.items():
                state.m = np.asarray(payload[f"adam/{key}/m"], dtype=np.float64)
                state.s = np.asarray(payload[f"adam/{key}/s"], dtype=np.float64)
                state.t = int(payload[f"adam/{key}/t"])
            trainer.records = _records_from_array(payload["meta/records"])
            trainer.completed_epochs = int(payload["meta/epoch"])
    except CheckpointError:
        raise
    except Exception as e:
        raise CheckpointError(f"cannot load checkpoint {path}: {e}") from None
    return trainer
