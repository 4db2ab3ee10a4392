"""Tab-separated result tables with a header line.

Floats are written with 17 significant digits so a round trip is exact and
two runs producing the same numbers produce the same bytes.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.17g}"
    return str(v)


def write_table(path: str | Path, columns, rows) -> Path:
    path = Path(path)
    columns = list(columns)
    lines = ["\t".join(columns)]
    for row in rows:
        row = list(row)
        if len(row) != len(columns):
            raise ValueError(f"row has {len(row)} cells, header has {len(columns)}")
        lines.append("\t".join(_cell(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def _parse(s: str):
    try:
        return float(s)
    except ValueError:
        return s


def read_table(path: str | Path) -> tuple[list[str], list[list]]:
    """Header and rows; numeric cells come back as floats, others as strings."""
    text = Path(path).read_text().splitlines()
    if not text:
        raise ValueError(f"{path} is empty")
    cols = text[0].split("\t")
    rows = [[_parse(c) for c in line.split("\t")] for line in text[1:] if line]
    return cols, rows


def numeric_columns(columns, rows) -> tuple[list[str], np.ndarray]:
    """Only the all-numeric columns, as a float array."""
    keep = [j for j in range(len(columns)) if all(isinstance(r[j], float) for r in rows)]
    data = np.array([[r[j] for j in keep] for r in rows], dtype=float).reshape(len(rows), len(keep))
    return [columns[j] for j in keep], data
