"""Readers for the CSV families the simulation CLI writes.

Three file shapes cover everything: path/grid tables with a ``# key=value``
comment block above the column header, key/value summaries, and the plain
``manifest.txt`` that every run directory carries.  All readers are strictly
read-only and raise early with the offending file and column named, so a
bad ``--in`` argument fails before any figure is drawn.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


class SchemaError(ValueError):
    """An input CSV is missing a column or key the figure needs."""


class ProvenanceError(FileNotFoundError):
    """An input sits in a directory without a run manifest."""


def read_comment_header(path):
    """Parse the leading ``# key=value`` lines of a CSV into a dict.

    Lines may carry several space-separated pairs (grid files do); values
    stay strings and the caller converts what it needs.
    """
    meta = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            tokens = body.split()
            if tokens and all("=" in tok for tok in tokens):
                for tok in tokens:
                    key, _, value = tok.partition("=")
                    meta[key] = value
    return meta


def read_table(path, required=()):
    """Read a column-oriented CSV, returning (comments, columns).

    ``columns`` maps each header name to a float array; non-numeric
    columns fall back to string arrays.  Any name in ``required`` that is
    absent raises :class:`SchemaError` naming the column and the file.
    """
    path = Path(path)
    comments = read_comment_header(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row and not row[0].startswith("#")]
    if not rows:
        raise SchemaError(f"{path.name}: no header row found")
    header, data = rows[0], rows[1:]
    missing = [name for name in required if name not in header]
    if missing:
        raise SchemaError(
            f"{path.name}: missing column(s) {', '.join(missing)}; "
            f"found {', '.join(header)}"
        )
    columns = {}
    for j, name in enumerate(header):
        raw = [row[j] for row in data]
        try:
            columns[name] = np.array([float(v) for v in raw])
        except ValueError:
            columns[name] = np.array(raw)
    return comments, columns


def read_summary(path):
    """Read a key,value summary CSV into (comments, dict).

    Values are floats where they parse as such and strings otherwise.
    """
    comments, columns = read_table(path, required=("key", "value"))
    summary = {}
    for key, value in zip(columns["key"], columns["value"]):
        try:
            summary[str(key)] = float(value)
        except ValueError:
            summary[str(key)] = str(value)
    return comments, summary


def read_manifest(run_dir):
    """Parse the ``key = value`` block at the top of a run manifest."""
    meta = {}
    text = (Path(run_dir) / "manifest.txt").read_text(encoding="utf-8")
    for line in text.splitlines():
        line = line.strip()
        if line.startswith("["):
            break
        if not line or line.startswith("#") or "=" not in line:
            continue
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    return meta


def require_manifest(input_path):
    """Return the manifest for the run directory holding ``input_path``.

    Refuses to proceed when none exists: a figure drawn from an
    unattributed CSV cannot be traced back to the run that produced it.
    """
    input_path = Path(input_path)
    run_dir = input_path.resolve().parent
    if not (run_dir / "manifest.txt").is_file():
        raise ProvenanceError(
            f"no manifest.txt next to {input_path.name} in {run_dir}; "
            "refusing to plot an unattributed CSV"
        )
    return read_manifest(run_dir)
