"""Command line front end: config parsing, engine dispatch, artifacts.

Configs are INI files with a versioned schema. Unknown sections or keys
are hard errors. Every run writes a long-format observables CSV plus a
JSON manifest that embeds the effective config; pointing --config at a
manifest reproduces the CSV byte for byte.

Environment variables of the form SKINMC_<SECTION>_<KEY> override file
values (e.g. SKINMC_RUN_N_TRAJ=4), which is how CI shrinks the presets.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis, ed, io
from .errors import ConfigError, GuardError, NumericError, SkinmcError
from .model import LatticeConfig
from .trajectory import StepProtocol, default_t_max, initial_sites, run_ensemble

CONFIG_SCHEMA = "skinmc-config-v1"

_SECTION_KEYS = {
    "meta": {"schema", "description", "expected_runtime"},
    "lattice": {"L", "bc", "gamma", "theta", "g"},
    "protocol": {"dt", "t_max", "record_every", "record_times"},
    "run": {
        "engine", "n_traj", "base_seed", "initial_state", "occupied",
        "n_particles", "cuts", "record_momentum", "jump_order",
    },
    "output": {"dir"},
    "sweep": {"axis", "values", "axis2", "values2", "steady_frac"},
}

ENGINES = ("gaussian", "dense", "lindblad")

_NUM_EXPR = re.compile(r"^[0-9pi+\-*/. ()]+$")


def _eval_number(text: str, field: str) -> float:
    """Parse a numeric config value, allowing pi arithmetic like 0.7*pi."""
    text = text.strip()
    if not _NUM_EXPR.match(text):
        raise ConfigError(f"{field}: cannot parse number {text!r}")
    try:
        return float(eval(text, {"__builtins__": {}}, {"pi": math.pi}))
    except Exception as exc:
        raise ConfigError(f"{field}: cannot parse number {text!r}") from exc


def _eval_int(text: str, field: str) -> int:
    val = _eval_number(text, field)
    if val != int(val):
        raise ConfigError(f"{field}: expected integer, got {text!r}")
    return int(val)


def _eval_bool(text: str, field: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{field}: expected boolean, got {text!r}")


def _split_list(text: str) -> list[str]:
    return [item for item in (s.strip() for s in text.split(",")) if item]


def load_config(path: Path) -> dict:
    """Read an INI config (or a run manifest) into a {section: {key: str}} map."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if text.lstrip().startswith("{"):
        payload = io.read_manifest(path)
        return {s: dict(kv) for s, kv in payload["config"].items()}

    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case (L vs l)
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = {s: dict(parser.items(s)) for s in parser.sections()}
    schema = cfg.get("meta", {}).get("schema")
    if schema != CONFIG_SCHEMA:
        raise ConfigError(
            f"{path}: [meta] schema = {schema!r}, expected {CONFIG_SCHEMA!r}"
        )
    return cfg


def apply_env_overrides(cfg: dict, environ=None) -> dict:
    """Fold SKINMC_<SECTION>_<KEY> environment variables into the config."""
    environ = os.environ if environ is None else environ
    out = {s: dict(kv) for s, kv in cfg.items()}
    for name, value in environ.items():
        if not name.startswith("SKINMC_"):
            continue
        try:
            _, section, key = name.split("_", 2)
        except ValueError:
            raise ConfigError(f"malformed override variable {name}")
        section = section.lower()
        matched = None
        if section in _SECTION_KEYS:
            for known in _SECTION_KEYS[section]:
                if known.lower() == key.lower():
                    matched = known
                    break
        if matched is None:
            raise ConfigError(f"override {name} does not name a known config key")
        out.setdefault(section, {})[matched] = value
    return out


def validate_sections(cfg: dict) -> None:
    for section, kv in cfg.items():
        if section not in _SECTION_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        for key in kv:
            if key not in _SECTION_KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")


class RunConfig:
    """Validated run parameters assembled from one config map."""

    def __init__(self, cfg: dict):
        validate_sections(cfg)
        lat = cfg.get("lattice", {})
        if "L" not in lat:
            raise ConfigError("lattice.L is required")
        gamma = _eval_number(lat.get("gamma", "0"), "lattice.gamma")
        theta = _eval_number(lat.get("theta", "pi"), "lattice.theta")
        self.lattice = LatticeConfig(
            L=_eval_int(lat["L"], "lattice.L"),
            bc=lat.get("bc", "open"),
            gamma=gamma,
            theta=theta % (2 * math.pi),
            g=_eval_number(lat.get("g", "0"), "lattice.g"),
        )

        proto = cfg.get("protocol", {})
        t_max = (
            _eval_number(proto["t_max"], "protocol.t_max")
            if "t_max" in proto
            else default_t_max(gamma)
        )
        kwargs = {}
        if "record_times" in proto:
            kwargs["record_times"] = tuple(
                _eval_number(v, "protocol.record_times")
                for v in _split_list(proto["record_times"])
            )
        else:
            kwargs["record_every"] = _eval_number(
                proto.get("record_every", "1.0"), "protocol.record_every"
            )
        self.protocol = StepProtocol(
            dt=_eval_number(proto.get("dt", "0.05"), "protocol.dt"),
            t_max=t_max,
            **kwargs,
        )

        run = cfg.get("run", {})
        self.engine = run.get("engine", "gaussian")
        if self.engine not in ENGINES:
            raise ConfigError(
                f"run.engine must be one of {', '.join(ENGINES)}; got {self.engine!r}"
            )
        self.n_traj = _eval_int(run.get("n_traj", "100"), "run.n_traj")
        if self.n_traj < 1:
            raise ConfigError("run.n_traj must be >= 1")
        self.base_seed = _eval_int(run.get("base_seed", "0"), "run.base_seed")
        self.initial_state = run.get("initial_state", "default")
        self.occupied = (
            [_eval_int(v, "run.occupied") for v in _split_list(run["occupied"])]
            if "occupied" in run
            else None
        )
        self.cuts = self._parse_cuts(run.get("cuts", "L/4"))
        self.record_momentum = _eval_bool(
            run.get("record_momentum", "false"), "run.record_momentum"
        )
        self.jump_order = run.get("jump_order", "ascending")
        if "n_particles" in run:
            self.n_particles = _eval_int(run["n_particles"], "run.n_particles")
        elif self.occupied is not None:
            self.n_particles = len(self.occupied)
        else:
            self.n_particles = len(initial_sites(self.lattice, self.initial_state))

        self.out_dir = Path(cfg.get("output", {}).get("dir", "runs/out"))
        self.sweep = cfg.get("sweep", {})
        self.raw = cfg

    def _parse_cuts(self, text: str) -> tuple[int, ...]:
        cuts = []
        for item in _split_list(text):
            if item.startswith("L/"):
                cuts.append(self.lattice.L // _eval_int(item[2:], "run.cuts"))
            else:
                cuts.append(_eval_int(item, "run.cuts"))
        for c in cuts:
            if not 0 < c < self.lattice.L:
                raise ConfigError(f"run.cuts: cut {c} outside 1..L-1")
        return tuple(cuts)


# ------------------------------------------------------------------ engines


def _lindblad_stats(rc: RunConfig):
    """Run the averaged master equation and emit observable rows directly."""
    res = ed.integrate_lindblad(
        rc.lattice,
        rc.n_particles,
        rc.protocol.t_max,
        record_times=[s * rc.protocol.dt for s in rc.protocol.record_steps()],
    )
    rows = []
    for ti, t in enumerate(res.times):
        dens = res.densities[ti]
        for site, n in enumerate(dens):
            rows.append((t, "density", site + 1, n, math.nan))
        rows.append(
            (t, "scl_avg", 0, analysis.classical_entropy(dens), math.nan)
        )
    return rows


def execute_run(rc: RunConfig, out_dir: Path, *, threads: int, force: bool) -> Path:
    """Run one configured ensemble and write its artifacts.

    Returns the output directory. Refuses to overwrite existing artifacts
    unless force is set.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    obs_path = out_dir / "observables.csv"
    man_path = out_dir / "manifest.json"
    for p in (obs_path, man_path):
        if p.exists() and not force:
            raise ConfigError(f"{p} exists; pass --force to overwrite")

    t0 = time.perf_counter()
    if rc.engine == "lindblad":
        rows = _lindblad_stats(rc)
        io.write_csv(obs_path, io.OBSERVABLES_SCHEMA, io.OBSERVABLES_HEADER, rows)
    else:
        common = dict(
            occupied=rc.occupied,
            initial_state=rc.initial_state,
            cuts=rc.cuts,
            record_momentum=rc.record_momentum,
            jump_order=rc.jump_order,
        )
        if rc.engine == "gaussian":
            stats = run_ensemble(
                rc.lattice, rc.protocol, rc.n_traj, rc.base_seed,
                n_jobs=threads, **common,
            )
        else:
            stats = ed.run_dense_ensemble(
                rc.lattice, rc.n_particles, rc.protocol, rc.n_traj,
                rc.base_seed, n_jobs=threads, **common,
            )
        io.write_observables(obs_path, stats)

    io.write_manifest(
        man_path,
        config=rc.raw,
        n_traj=rc.n_traj,
        base_seed=rc.base_seed,
        wall_time_s=round(time.perf_counter() - t0, 3),
        extra={"engine": rc.engine},
    )
    return out_dir


# ------------------------------------------------------------------- sweeps

_AXES = {"gamma": "lattice", "L": "lattice", "theta": "lattice"}


def _sweep_points(rc: RunConfig) -> list[dict]:
    """Expand the [sweep] section into per-point config maps."""
    sweep = rc.sweep
    if not sweep or "axis" not in sweep:
        return [rc.raw]

    def axis_values(axis_key: str, values_key: str):
        axis = sweep[axis_key]
        if axis not in _AXES:
            raise ConfigError(
                f"sweep.{axis_key} must be one of {', '.join(_AXES)}; got {axis!r}"
            )
        if values_key not in sweep:
            raise ConfigError(f"sweep.{values_key} is required with sweep.{axis_key}")
        vals = _split_list(sweep[values_key])
        if not vals:
            raise ConfigError(f"sweep.{values_key} is empty")
        return axis, vals

    axis, vals = axis_values("axis", "values")
    grids = [[(axis, v) for v in vals]]
    if "axis2" in sweep:
        axis2, vals2 = axis_values("axis2", "values2")
        if axis2 == axis:
            raise ConfigError("sweep.axis2 must differ from sweep.axis")
        grids.append([(axis2, v) for v in vals2])

    points = []
    for first in grids[0]:
        for rest in grids[1] if len(grids) > 1 else [None]:
            cfg = {s: dict(kv) for s, kv in rc.raw.items()}
            cfg.pop("sweep", None)
            assignments = [first] + ([rest] if rest else [])
            for key, val in assignments:
                cfg[_AXES[key]][key] = val
            points.append(cfg)
    return points


def _point_label(cfg: dict, index: int) -> str:
    lat = cfg["lattice"]
    return (
        f"point_{index:03d}_L{lat['L']}_g{lat.get('gamma', '0')}"
        f"_th{lat.get('theta', 'pi')}".replace("*", "").replace(" ", "")
        .replace("/", "-")
    )


def execute_sweep(rc: RunConfig, out_dir: Path, *, threads: int, force: bool) -> Path:
    """Run every grid point, then write combined scaling/fit/collapse CSVs.

    A failing point is recorded in the sweep manifest and skipped; the
    sweep itself still succeeds if at least one point completed.
    """
    if rc.engine == "lindblad":
        raise ConfigError("sweep needs a trajectory engine (gaussian or dense)")
    points = _sweep_points(rc)
    steady_frac = _eval_number(
        rc.sweep.get("steady_frac", "0.33334"), "sweep.steady_frac"
    ) if rc.sweep else 1 / 3
    if not 0 < steady_frac <= 1:
        raise ConfigError("sweep.steady_frac must lie in (0, 1]")

    out_dir.mkdir(parents=True, exist_ok=True)
    scaling_path = out_dir / "scaling.csv"
    if scaling_path.exists() and not force:
        raise ConfigError(f"{scaling_path} exists; pass --force to overwrite")
    statuses = []
    scaling_rows = []
    scaling_points = []
    t0 = time.perf_counter()
    for i, cfg in enumerate(points):
        label = _point_label(cfg, i)
        sub_rc = RunConfig(cfg)
        try:
            execute_run(sub_rc, out_dir / label, threads=threads, force=force)
            table = io.read_observables(out_dir / label / "observables.csv")
            times, _, scl, scl_err = table["scl_traj"]
            s_mean, s_err = analysis.steady_mean(times, scl, steady_frac)
            try:
                slope = analysis.steady_slope(
                    times, scl, window=(times[-1] - times[0]) * steady_frac
                )
            except ConfigError:
                slope = math.nan  # recording grid too coarse for a drift check
            ct, ci, cent, _ = table["cut_entropy"]
            first = ci == ci.min()  # steady value of the primary cut only
            c_mean, c_err = analysis.steady_mean(ct[first], cent[first], steady_frac)
            lat = sub_rc.lattice
            scaling_rows.append(
                (lat.theta, lat.gamma, lat.L, s_mean, s_err,
                 c_mean, c_err, sub_rc.n_traj, slope)
            )
            scaling_points.append(
                analysis.ScalingPoint(lat.theta, lat.gamma, lat.L, s_mean, s_err)
            )
            statuses.append({"point": label, "status": "ok"})
        except SkinmcError as exc:
            statuses.append({"point": label, "status": f"failed: {exc}"})
    if not scaling_rows:
        raise NumericError("every sweep point failed")

    io.write_csv(scaling_path, io.SCALING_SCHEMA, io.SCALING_HEADER, scaling_rows)
    fit_rows = []
    for theta in sorted({p.theta for p in scaling_points}):
        group = [p for p in scaling_points if p.theta == theta]
        try:
            fits = analysis.fit_asymptote(group)
        except ConfigError:
            continue  # fewer than 3 gamma values at this theta
        fit_rows.extend((f.theta, f.c, f.c_err, f.n_points) for f in fits)
    if fit_rows:
        io.write_csv(out_dir / "fits.csv", io.FITS_SCHEMA, io.FITS_HEADER, fit_rows)
    if len({p.L for p in scaling_points}) >= 2:
        col = analysis.scaling_collapse(scaling_points)
        io.write_csv(
            out_dir / "collapse.csv", io.COLLAPSE_SCHEMA, io.COLLAPSE_HEADER,
            [(rc.lattice.theta, g, L, x, y, math.nan)
             for g, L, x, y in zip(col.gamma, col.L, col.x, col.y)],
        )
    io.write_manifest(
        out_dir / "manifest.json",
        config=rc.raw,
        n_traj=rc.n_traj,
        base_seed=rc.base_seed,
        wall_time_s=round(time.perf_counter() - t0, 3),
        extra={"engine": rc.engine, "points": statuses},
    )
    return out_dir


# -------------------------------------------------------------------- main


def preset_path(name: str) -> Path:
    path = Path(__file__).resolve().parent / "presets" / f"{name}.ini"
    if not path.exists():
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(list_presets())}"
        )
    return path


def list_presets() -> list[str]:
    pdir = Path(__file__).resolve().parent / "presets"
    return sorted(p.stem for p in pdir.glob("*.ini"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skinmc",
        description="Trajectory simulations of monitored fermion chains "
        "with feedback.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("run", "run one configured ensemble"),
        ("sweep", "run a parameter grid and combine the results"),
    ):
        p = sub.add_parser(name, help=helptext)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", type=Path, help="INI config or manifest.json")
        src.add_argument("--preset", help="name of a packaged recipe")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        p.add_argument("--seed", type=int, help="override run.base_seed")
        p.add_argument("--out", type=Path, help="override output.dir")
        p.add_argument("--force", action="store_true",
                       help="overwrite existing artifacts")
    sub.add_parser("presets", help="list packaged recipe names")
    return parser


def _load_run_config(args) -> RunConfig:
    path = preset_path(args.preset) if args.preset else args.config
    cfg = apply_env_overrides(load_config(path))
    if args.seed is not None:
        cfg.setdefault("run", {})["base_seed"] = str(args.seed)
    if args.out is not None:
        cfg.setdefault("output", {})["dir"] = str(args.out)
    return RunConfig(cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "presets":
            for name in list_presets():
                print(name)
            return 0
        rc = _load_run_config(args)
        if args.command == "run":
            out = execute_run(rc, rc.out_dir, threads=args.threads,
                              force=args.force)
        else:
            out = execute_sweep(rc, rc.out_dir, threads=args.threads,
                                force=args.force)
        print(f"wrote {out}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except GuardError as exc:
        print(f"guard refusal: {exc}", file=sys.stderr)
        return 4
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
