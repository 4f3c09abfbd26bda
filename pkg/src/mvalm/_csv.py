"""CSV output with round-trip exact floats."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import IO, Sequence

import numpy as np


def fmt(x: float) -> str:
    """Round-trip exact decimal text for a float."""
    return format(float(x) + 0.0, ".17g")  # folds -0.0 into 0


def write_rows(dest: str | Path | IO[str], header: Sequence[str], rows) -> None:
    def emit(fh: IO[str]) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) if isinstance(x, (float, np.floating)) else x for x in row])

    if hasattr(dest, "write"):
        emit(dest)
        return
    path = Path(dest)
    try:
        with path.open("w", newline="") as fh:
            emit(fh)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
