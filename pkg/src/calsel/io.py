"""CSV and JSON artifact handling with embedded provenance.

Every output table starts with '#'-prefixed comment lines holding the fully
resolved run configuration as sorted-key JSON, then the header row, then data.
Floats are written with repr (shortest round-trip form) so a rerun with the
same configuration and seed reproduces the file byte for byte.  Readers skip
comment lines and report parse problems with 1-based physical line numbers.
"""

from __future__ import annotations

import json
import math
import os
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, ParameterError

__all__ = [
    "format_cell",
    "provenance_line",
    "write_table",
    "read_table",
    "read_returns",
    "read_forecast_table",
    "write_json",
]

COMMENT_PREFIX = "#"
FLAG_SEPARATOR = ";"


def format_cell(value) -> str:
    """Render one CSV cell deterministically (no locale, no padding)."""
    if isinstance(value, str):
        if "," in value or "\n" in value:
            raise ParameterError(f"cell value {value!r} needs quoting; not supported")
        return value
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None:
        return ""
    x = float(value)
    if math.isnan(x):
        return "nan"
    return repr(x)


def provenance_line(config: dict) -> str:
    return COMMENT_PREFIX + " " + json.dumps(config, sort_keys=True)


def write_table(
    path: str,
    header: Sequence[str],
    rows: Iterable[Sequence],
    provenance: Optional[dict] = None,
) -> None:
    lines: List[str] = []
    if provenance is not None:
        lines.append(provenance_line(provenance))
    lines.append(",".join(header))
    width = len(header)
    for row in rows:
        if len(row) != width:
            raise ParameterError(
                f"row width {len(row)} does not match header width {width}")
        lines.append(",".join(format_cell(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_table(path: str) -> Tuple[List[str], List[List[str]], List[str]]:
    """Read a CSV written by this package (or any plain comma table).

    Returns (header, rows, comment_lines).  '#'-prefixed lines anywhere before
    the header are treated as provenance comments.  Rows whose field count
    differs from the header raise a data error naming the physical line.
    """
    if not os.path.exists(path):
        raise DataError(f"{path}: no such file")
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    comments: List[str] = []
    header: Optional[List[str]] = None
    rows: List[List[str]] = []
    header_width = 0
    for lineno, line in enumerate(raw, start=1):
        if not line.strip():
            continue
        if line.startswith(COMMENT_PREFIX):
            comments.append(line)
            continue
        fields = [f.strip() for f in line.split(",")]
        if header is None:
            header = fields
            header_width = len(fields)
            continue
        if len(fields) != header_width:
            raise DataError(
                f"{path}: line {lineno}: expected {header_width} fields, "
                f"found {len(fields)}")
        rows.append(fields)
    if header is None:
        raise DataError(f"{path}: no header row found")
    return header, rows, comments


def _parse_float(path: str, lineno: int, col: str, text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataError(
            f"{path}: line {lineno}: column {col!r}: "
            f"could not parse {text!r} as a number")


def read_returns(path: str, col: str = "return") -> np.ndarray:
    """Load one numeric column from a headed CSV file.

    Values must be finite; the offending physical line is named otherwise.
    """
    header, rows, _ = read_table(path)
    if col not in header:
        raise DataError(
            f"{path}: column {col!r} not found (header has {header})")
    idx = header.index(col)
    # reconstruct physical line numbers: comments and blanks shift them,
    # so reread positions by scanning the raw file once more
    positions = _data_line_numbers(path, len(rows))
    values = np.empty(len(rows))
    for i, fields in enumerate(rows):
        x = _parse_float(path, positions[i], col, fields[idx])
        if not math.isfinite(x):
            raise DataError(
                f"{path}: line {positions[i]}: column {col!r}: "
                f"non-finite value {fields[idx]!r}")
        values[i] = x
    if values.size == 0:
        raise DataError(f"{path}: no data rows")
    return values


def _data_line_numbers(path: str, n_rows: int) -> List[int]:
    numbers: List[int] = []
    seen_header = False
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith(COMMENT_PREFIX):
                continue
            if not seen_header:
                seen_header = True
                continue
            numbers.append(lineno)
    if len(numbers) != n_rows:
        numbers = list(range(1, n_rows + 1))
    return numbers


def read_forecast_table(path: str) -> Dict[str, object]:
    """Load a forecast CSV into arrays keyed by column name.

    Numeric columns come back as float arrays (empty cells as nan); the
    'flags' column, when present, comes back as a list of tuples split on
    ';'.  Also returns the raw provenance comment lines under '_comments'.
    """
    header, rows, comments = read_table(path)
    out: Dict[str, object] = {"_comments": comments}
    positions = _data_line_numbers(path, len(rows))
    for j, col in enumerate(header):
        cells = [r[j] for r in rows]
        if col == "flags":
            out[col] = [tuple(c.split(FLAG_SEPARATOR)) if c else () for c in cells]
            continue
        arr = np.empty(len(cells))
        for i, text in enumerate(cells):
            if text == "":
                arr[i] = np.nan
            else:
                arr[i] = _parse_float(path, positions[i], col, text)
        out[col] = arr
    return out


def write_json(path: str, obj: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=2) + "\n")
