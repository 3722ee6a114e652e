"""Rendering behavior against real simulator output."""

import hashlib

import matplotlib.pyplot as plt
import numpy as np
import pytest

from skinmc_plots import FigureSpec, SchemaError, render
from skinmc_plots import entry


def _spec(kind, inputs, out, **kw):
    return FigureSpec(kind=kind, inputs=tuple(inputs), output=out, **kw)


def test_all_kinds_render_nonempty_images(artifacts, tmp_path):
    jobs = [
        ("heatmap", [artifacts["wall_obs"]]),
        ("scaling", [artifacts["scaling"]]),
        ("loglog", [artifacts["scaling"], artifacts["fits"]]),
        ("collapse", [artifacts["collapse"]]),
        ("momentum", artifacts["ring_points"]),
    ]
    for kind, inputs in jobs:
        out = tmp_path / f"{kind}.png"
        render(_spec(kind, inputs, out))
        assert out.exists() and out.stat().st_size > 2000
        img = plt.imread(out)
        assert img.std() > 0.01  # not a blank canvas


def test_heatmap_column_means_show_frozen_domains(artifacts, tmp_path):
    out = tmp_path / "wall.png"
    times, sites, dens = render(_spec("heatmap", [artifacts["wall_obs"]], out))
    steady = dens[times >= times[-1] / 2]
    cols = steady.mean(axis=0)
    assert cols[0] > 0.95 and cols[1] > 0.9
    assert cols[-1] < 0.05 and cols[-2] < 0.1
    assert cols[0] - cols[-1] > 0.9

    # the image itself: occupied left edge renders lighter than empty right
    img = plt.imread(out)
    lum = img[..., :3].mean(axis=2)
    h, w = lum.shape
    band = slice(int(0.25 * h), int(0.70 * h))
    left = lum[band, int(0.17 * w):int(0.25 * w)].mean()
    right = lum[band, int(0.62 * w):int(0.70 * w)].mean()
    assert left > right + 0.2


def test_momentum_curves_prefer_left_movers(artifacts, tmp_path):
    out = tmp_path / "nk.png"
    drawn = render(_spec("momentum", artifacts["ring_points"], out))
    for k, nk in drawn:
        assert nk[k < 0].mean() > nk[k > 0].mean()


def test_render_is_deterministic_and_does_not_touch_inputs(artifacts, tmp_path):
    src = artifacts["wall_obs"]
    before = hashlib.sha256(src.read_bytes()).hexdigest()
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    render(_spec("heatmap", [src], a))
    render(_spec("heatmap", [src], b))
    assert a.read_bytes() == b.read_bytes()
    assert hashlib.sha256(src.read_bytes()).hexdigest() == before


def test_schema_mismatch_is_explicit(artifacts, tmp_path):
    with pytest.raises(SchemaError, match="skinmc-observables-v1"):
        render(_spec("heatmap", [artifacts["scaling"]], tmp_path / "x.png"))

    stale = tmp_path / "stale.csv"
    lines = artifacts["scaling"].read_text().splitlines()
    stale.write_text("\n".join(["# skinmc-scaling-v9"] + lines[1:]) + "\n")
    with pytest.raises(SchemaError, match="skinmc-scaling-v9"):
        render(_spec("scaling", [stale], tmp_path / "y.png"))


def test_empty_series_is_an_error_not_a_blank_figure(artifacts, tmp_path):
    # the wall run records no momentum data
    out = tmp_path / "none.png"
    with pytest.raises(SchemaError, match="nk"):
        render(_spec("momentum", [artifacts["wall_obs"]], out))
    assert not out.exists()

    headers_only = tmp_path / "empty.csv"
    headers_only.write_text(
        "# skinmc-observables-v1\ntime,observable,index,mean,stderr\n"
    )
    with pytest.raises(SchemaError, match="no data rows"):
        render(_spec("heatmap", [headers_only], tmp_path / "z.png"))


def test_render_validates_kind_and_arity(artifacts, tmp_path):
    with pytest.raises(SchemaError, match="kind"):
        render(_spec("pie", [artifacts["scaling"]], tmp_path / "p.png"))
    with pytest.raises(SchemaError):
        render(FigureSpec(kind="heatmap", inputs=(), output=tmp_path / "q.png"))
    with pytest.raises(SchemaError):
        render(_spec("heatmap", [artifacts["wall_obs"]] * 2, tmp_path / "r.png"))


def test_entry_points(artifacts, tmp_path, capsys):
    out = tmp_path / "cli.png"
    code = entry.heatmap_main(
        ["--in", str(artifacts["wall_obs"]), "--out", str(out),
         "--title", "density wall"]
    )
    assert code == 0 and out.exists()

    code = entry.momentum_main(
        ["--in", str(artifacts["wall_obs"]), "--out", str(tmp_path / "no.png")]
    )
    assert code == 2
    assert "nk" in capsys.readouterr().err


def test_axis_limit_passthrough(artifacts, tmp_path):
    out = tmp_path / "lim.png"
    render(_spec("scaling", [artifacts["scaling"]], out, ylim=(0.0, 5.0)))
    assert out.exists()
