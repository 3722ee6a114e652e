"""Build real simulator artifacts once, through the CLI only."""

import os
import subprocess
import sys

import pytest


def run_cli(args, overrides, cwd):
    env = dict(os.environ)
    env.update(overrides)
    proc = subprocess.run(
        [sys.executable, "-m", "skinmc.cli", *args],
        env=env, cwd=cwd, capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    return proc


@pytest.fixture(scope="session")
def artifacts(tmp_path_factory):
    """Scaled-down preset outputs: heatmap run, scaling sweep, momentum sweep."""
    root = tmp_path_factory.mktemp("artifacts")

    wall = root / "wall"
    run_cli(
        ["run", "--preset", "fig2b", "--out", str(wall)],
        {
            "SKINMC_LATTICE_L": "32",
            "SKINMC_PROTOCOL_T_MAX": "60",
            "SKINMC_RUN_N_TRAJ": "8",
            "SKINMC_RUN_INITIAL_STATE": "half_left",
        },
        cwd=root,
    )

    grid = root / "grid"
    run_cli(
        ["sweep", "--preset", "fig3b", "--out", str(grid)],
        {
            "SKINMC_PROTOCOL_T_MAX": "30",
            "SKINMC_RUN_N_TRAJ": "3",
            "SKINMC_SWEEP_VALUES2": "8, 16",
        },
        cwd=root,
    )

    ring = root / "ring"
    run_cli(
        ["sweep", "--preset", "fig3d", "--out", str(ring)],
        {
            "SKINMC_LATTICE_L": "16",
            "SKINMC_PROTOCOL_T_MAX": "30",
            "SKINMC_RUN_N_TRAJ": "3",
            "SKINMC_SWEEP_VALUES": "0.1, 0.5",
        },
        cwd=root,
    )
    ring_points = sorted(p / "observables.csv" for p in ring.iterdir() if p.is_dir())

    return {
        "wall_obs": wall / "observables.csv",
        "scaling": grid / "scaling.csv",
        "fits": grid / "fits.csv",
        "collapse": grid / "collapse.csv",
        "ring_points": ring_points,
        "root": root,
    }
