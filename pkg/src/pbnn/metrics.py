"""Per-epoch metrics records and their CSV serialization.

The first CSV line is a comment embedding the library version and the
full run configuration; the rest is plain delimited data, one row per
epoch record (the epoch-0 row is the pre-training evaluation anchor and
has an empty train_loss field).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .config import RunConfig
from .errors import DataError

__all__ = ["EpochRecord", "header_lines", "format_record", "read_metrics"]

CSV_COLUMNS = ("epoch", "eta", "v", "train_loss", "test_acc", "wall_seconds")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int  # 0 = pre-training anchor, then 1..total
    eta: float
    scale: float
    train_loss: float | None
    test_acc: float
    wall_seconds: float


def header_lines(cfg: RunConfig, version: str) -> list[str]:
    return [
        f"# pbnn {version} {cfg.to_json()}",
        ",".join(CSV_COLUMNS),
    ]


def format_record(rec: EpochRecord) -> str:
    loss = "" if rec.train_loss is None or math.isnan(rec.train_loss) else f"{rec.train_loss:.8f}"
    return (
        f"{rec.epoch},{rec.eta:.10g},{rec.scale:.10g},"
        f"{loss},{rec.test_acc:.6f},{rec.wall_seconds:.3f}"
    )


def read_metrics(path: str) -> tuple[str, RunConfig, list[EpochRecord]]:
    """Parse a metrics CSV back into (version, config, records)."""
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln.rstrip("\n") for ln in f]
    if len(lines) < 2 or not lines[0].startswith("# pbnn "):
        raise DataError(f"not a pbnn metrics file: {path}")
    _, _, rest = lines[0].partition("# pbnn ")
    version, _, cfg_json = rest.partition(" ")
    cfg = RunConfig.from_json(cfg_json)
    if lines[1] != ",".join(CSV_COLUMNS):
        raise DataError(f"unexpected CSV columns in {path}")
    records = []
    for ln in lines[2:]:
        if not ln:
            continue
        parts = ln.split(",")
        if len(parts) != len(CSV_COLUMNS):
            raise DataError(f"malformed row in {path}: {ln!r}")
        records.append(
            EpochRecord(
                epoch=int(parts[0]),
                eta=float(parts[1]),
                scale=float(parts[2]),
                train_loss=None if parts[3] == "" else float(parts[3]),
                test_acc=float(parts[4]),
                wall_seconds=float(parts[5]),
            )
        )
    return version, cfg, records
