"""Readers for the simulator's documented CSV interface.

Every input file starts with a `# <schema>` tag line; the supported
versions are pinned here. A tag mismatch is a hard error naming both
sides, never a silent attempt to parse anyway.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

OBSERVABLES_SCHEMA = "skinmc-observables-v1"
SCALING_SCHEMA = "skinmc-scaling-v1"
FITS_SCHEMA = "skinmc-fits-v1"
COLLAPSE_SCHEMA = "skinmc-collapse-v1"


class SchemaError(ValueError):
    """Input file does not carry the expected schema tag."""


def read_table(path: Path, expected_schema: str) -> "list[dict]":
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"input file not found: {path}")
    with path.open() as fh:
        tag = fh.readline().strip()
        if tag != f"# {expected_schema}":
            raise SchemaError(
                f"{path}: found {tag!r}, this renderer needs '# {expected_schema}'"
            )
        rows = list(csv.DictReader(fh))
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def observable_series(path: Path, observable: str):
    """(times, index, mean) arrays for one observable, sorted by (t, index)."""
    rows = read_table(path, OBSERVABLES_SCHEMA)
    picked = [
        (float(r["time"]), float(r["index"]), float(r["mean"]))
        for r in rows
        if r["observable"] == observable
    ]
    if not picked:
        have = sorted({r["observable"] for r in rows})
        raise SchemaError(
            f"{path}: no rows for observable {observable!r} (file has {have})"
        )
    picked.sort()
    t, idx, mean = (np.asarray(col) for col in zip(*picked))
    return t, idx, mean


def observable_matrix(path: Path, observable: str):
    """Reshape a sited observable into (times, matrix[t, site])."""
    t, idx, mean = observable_series(path, observable)
    times = np.unique(t)
    sites = np.unique(idx)
    if times.size * sites.size != mean.size:
        raise SchemaError(f"{path}: ragged {observable} table")
    return times, sites, mean.reshape(times.size, sites.size)


def scaling_records(path: Path) -> "list[dict]":
    rows = read_table(path, SCALING_SCHEMA)
    return [
        {k: float(r[k]) for k in r}
        for r in rows
    ]


def fit_records(path: Path) -> "list[dict]":
    return [{k: float(r[k]) for k in r} for r in read_table(path, FITS_SCHEMA)]


def collapse_records(path: Path) -> "list[dict]":
    return [{k: float(r[k]) for k in r} for r in read_table(path, COLLAPSE_SCHEMA)]
