"""On-disk run artifacts: observable CSVs and JSON manifests.

The observables file is long-format with a fixed header and a schema tag
on the first comment line. Site and bond indices are 1-based here (docs
convention); momentum rows use the signed mode number m with k = 2 pi m/L.
Floats are written with repr-level precision so that re-running a
manifest reproduces the file byte for byte.
"""

from __future__ import annotations

import csv
import json
import subprocess
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .trajectory import EnsembleStats

OBSERVABLES_SCHEMA = "skinmc-observables-v1"
OBSERVABLES_HEADER = ["time", "observable", "index", "mean", "stderr"]
SCALING_SCHEMA = "skinmc-scaling-v1"
SCALING_HEADER = [
    "theta", "gamma", "L", "scl_mean", "scl_stderr",
    "cut_entropy_mean", "cut_entropy_stderr", "n_traj", "steady_slope",
]
FITS_SCHEMA = "skinmc-fits-v1"
FITS_HEADER = ["theta", "c", "c_err", "n_points"]
COLLAPSE_SCHEMA = "skinmc-collapse-v1"
COLLAPSE_HEADER = ["theta", "gamma", "L", "x", "y", "y_err"]


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path: Path, schema: str, header: list[str], rows) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# {schema}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([c if isinstance(c, str) else _fmt(c) for c in row])


def read_csv(path: Path, expected_schema: str) -> list[dict]:
    """Read a schema-tagged CSV back into a list of row dicts (strings)."""
    path = Path(path)
    with path.open() as fh:
        first = fh.readline().strip()
        if first != f"# {expected_schema}":
            raise ConfigError(
                f"{path}: schema tag {first!r} does not match {expected_schema!r}"
            )
        return list(csv.DictReader(fh))


def observable_rows(stats: EnsembleStats):
    """Flatten ensemble statistics into long-format CSV rows."""
    for ti, t in enumerate(stats.times):
        for site in range(stats.density_mean.shape[1]):
            yield (t, "density", site + 1,
                   stats.density_mean[ti, site], stats.density_stderr[ti, site])
        for ci, cut in enumerate(stats.cuts):
            yield (t, "cut_entropy", cut,
                   stats.cut_entropy_mean[ti, ci], stats.cut_entropy_stderr[ti, ci])
        yield (t, "scl_traj", 0, stats.scl_mean[ti], stats.scl_stderr[ti])
        yield (t, "scl_avg", 0, stats.scl_avg[ti], np.nan)
        for b in range(stats.jumps_mean.shape[1]):
            yield (t, "jumps", b + 1,
                   stats.jumps_mean[ti, b], stats.jumps_stderr[ti, b])
        if stats.nk_mean is not None:
            L = stats.nk_mean.shape[1]
            for mi in range(L):
                m_signed = int(round(stats.k[mi] * L / (2.0 * np.pi)))
                yield (t, "nk", m_signed,
                       stats.nk_mean[ti, mi], stats.nk_stderr[ti, mi])
            yield (t, "current", 0,
                   stats.current_mean[ti], stats.current_stderr[ti])


def write_observables(path: Path, stats: EnsembleStats) -> None:
    write_csv(path, OBSERVABLES_SCHEMA, OBSERVABLES_HEADER, observable_rows(stats))


def read_observables(path: Path) -> dict:
    """Group an observables CSV by observable name.

    Returns {name: (times, index, mean, stderr)} as float arrays, sorted
    by time then index.
    """
    rows = read_csv(path, OBSERVABLES_SCHEMA)
    out = {}
    for row in rows:
        out.setdefault(row["observable"], []).append(
            (float(row["time"]), float(row["index"]),
             float(row["mean"]), float(row["stderr"]))
        )
    return {
        name: tuple(np.asarray(col) for col in zip(*sorted(vals)))
        for name, vals in out.items()
    }


def version_string() -> str:
    """Package version plus the VCS commit when available."""
    from . import __version__

    try:
        sha = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).resolve().parent,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        sha = ""
    return f"{__version__}+g{sha}" if sha else __version__


def write_manifest(path: Path, *, config: dict, n_traj: int, base_seed: int,
                   wall_time_s: float, extra: "dict | None" = None) -> None:
    payload = {
        "schema": "skinmc-manifest-v1",
        "csv_schema": OBSERVABLES_SCHEMA,
        "version": version_string(),
        "config": config,
        "n_traj": n_traj,
        "base_seed": base_seed,
        "seeds": [base_seed + 1, base_seed + n_traj],
        "wall_time_s": wall_time_s,
    }
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_manifest(path: Path) -> dict:
    payload = json.loads(Path(path).read_text())
    if payload.get("schema") != "skinmc-manifest-v1":
        raise ConfigError(f"{path}: not a skinmc manifest")
    return payload
