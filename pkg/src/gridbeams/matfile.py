"""Plain-text complex matrix files.

Layout::

    <header fields separated by spaces>
    re:im re:im ... re:im     (one line per matrix row)

Floats are written with ``repr`` so a save/load cycle is bit-exact.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np


class MatrixFileError(ValueError):
    """Raised for malformed matrix files."""


def _fmt(x: float) -> str:
    return repr(float(x))


def write_matrix(path: str | os.PathLike, header: list, A: np.ndarray) -> None:
    A = np.asarray(A, dtype=complex)
    lines = [" ".join(_fmt(h) if isinstance(h, float) else str(h) for h in header)]
    for row in A:
        lines.append(" ".join(f"{_fmt(z.real)}:{_fmt(z.imag)}" for z in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii", newline="\n")


def _parse_entry(tok: str) -> complex:
    parts = tok.split(":")
    if len(parts) != 2:
        raise MatrixFileError(f"bad entry {tok!r}, expected re:im")
    try:
        return complex(float(parts[0]), float(parts[1]))
    except ValueError as exc:
        raise MatrixFileError(f"bad entry {tok!r}") from exc


def read_matrix(path: str | os.PathLike, n_header: int) -> tuple[list[str], np.ndarray]:
    """Return the raw header tokens and the matrix.

    The row count is taken from the first header field and the column count
    from the second.
    """
    try:
        text = Path(path).read_text(encoding="ascii")
    except FileNotFoundError:
        raise
    except (OSError, UnicodeDecodeError) as exc:
        raise MatrixFileError(str(exc)) from exc
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise MatrixFileError("empty file")
    header = lines[0].split()
    if len(header) != n_header:
        raise MatrixFileError(f"expected {n_header} header fields, got {len(header)}")
    try:
        rows, cols = int(header[0]), int(header[1])
    except ValueError as exc:
        raise MatrixFileError("non-integer dimensions in header") from exc
    if rows < 1 or cols < 1:
        raise MatrixFileError("dimensions must be positive")
    body = lines[1:]
    if len(body) != rows:
        raise MatrixFileError(f"expected {rows} rows, got {len(body)}")
    A = np.empty((rows, cols), dtype=complex)
    for i, ln in enumerate(body):
        toks = ln.split()
        if len(toks) != cols:
            raise MatrixFileError(f"row {i}: expected {cols} entries, got {len(toks)}")
        A[i] = [_parse_entry(t) for t in toks]
    return header, A
