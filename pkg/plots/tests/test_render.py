"""Rendering of every figure kind from real driver outputs."""

import csv
import json
import math

import numpy as np
import pytest

from traceplots import (
    FIGURE_KINDS,
    EmptySelectionError,
    FigureSpec,
    FigureSpecError,
    SchemaMismatchError,
    build_figure,
    render,
    smooth_curve,
)
from traceplots.cli import main

KIND_INPUT = {
    "entropy_fan": "sweep.csv",
    "spectrum_scatter": "spectrum.csv",
    "ergotropy_curves": "sweep.csv",
    "variance_fan": "variance_runs.csv",
    "jackknife_overlay": "variance_summary.csv",
    "variance_bound": "variance_profile.csv",
}


def make_spec(products_dir, tmp_path, kind, **extra):
    return FigureSpec(
        kind=kind,
        inputs=(str(products_dir / KIND_INPUT[kind]),),
        output=str(tmp_path / f"{kind}.png"),
        **extra,
    )


@pytest.mark.parametrize("kind", FIGURE_KINDS)
def test_renders_every_kind(products_dir, tmp_path, kind):
    out = render(make_spec(products_dir, tmp_path, kind))
    data = out.read_bytes()
    assert data[:8] == b"\x89PNG\r\n\x1a\n"
    assert len(data) > 2000


@pytest.mark.parametrize("kind", ["entropy_fan", "variance_bound"])
def test_rendering_is_deterministic(products_dir, tmp_path, kind):
    spec_a = make_spec(products_dir, tmp_path / "a", kind)
    spec_b = make_spec(products_dir, tmp_path / "b", kind)
    assert render(spec_a).read_bytes() == render(spec_b).read_bytes()


def test_entropy_fan_beta_zero_reference_line(products_dir, tmp_path):
    fig = build_figure(make_spec(products_dir, tmp_path, "entropy_fan"))
    ax = fig.axes[0]
    with open(products_dir / "sweep.csv", newline="") as fh:
        d_s = 2 ** int(next(csv.DictReader(fh))["n_sys_sites"])
    ref = [line for line in ax.get_lines()
           if len(line.get_ydata()) == 2
           and np.allclose(line.get_ydata(), math.log(d_s))]
    assert ref, "expected a horizontal ln(d_s) reference line"


def test_variance_fan_has_one_curve_per_run_and_level(products_dir, tmp_path):
    with open(products_dir / "variance_runs.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    cells = sorted({(r["k"], r["m"]) for r in rows})
    runs = {int(r["run"]) for r in rows}
    eigs = {int(r["eig_index"]) for r in rows}
    fig = build_figure(make_spec(products_dir, tmp_path, "variance_fan"))
    populated = [ax for ax in fig.axes if ax.get_lines()]
    assert len(populated) == len(cells)
    for ax in populated:
        assert len(ax.get_lines()) == len(runs) * len(eigs)


def test_smoothing_policy_regimes():
    rng = np.random.default_rng(0)
    x = np.linspace(0.0, 1.0, 12)
    y = rng.standard_normal(12)
    # noisy regime: least-squares polynomial
    grid, fit = smooth_curve(x, y, beta=1.0, policy="auto")
    assert len(grid) == 200
    assert not np.allclose(fit[:12], y)  # degree-10 fit does not interpolate 12 points
    # intermediate regime: cubic spline interpolates the data
    grid, fit = smooth_curve(x, y, beta=50.0, policy="auto")
    idx = np.searchsorted(grid, x[5])
    assert math.isclose(np.interp(x[5], grid, fit), y[5], abs_tol=0.05)
    # very low temperature: raw data only
    assert smooth_curve(x, y, beta=1000.0, policy="auto") is None
    assert smooth_curve(x, y, beta=math.inf, policy="auto") is None
    # explicit policies override the thresholds
    assert smooth_curve(x, y, beta=1000.0, policy="spline") is not None
    assert smooth_curve(x, y, beta=1.0, policy="none") is None


def test_raw_dots_overlaid_with_smoothing(products_dir, tmp_path):
    fig = build_figure(make_spec(products_dir, tmp_path, "entropy_fan"))
    ax = fig.axes[0]
    dotted = [l for l in ax.get_lines() if l.get_marker() == "o"]
    assert dotted, "raw data must stay visible as dots"


def test_empty_selection_writes_nothing(products_dir, tmp_path):
    spec = make_spec(products_dir, tmp_path, "entropy_fan", h_filter=(123.456,))
    with pytest.raises(EmptySelectionError):
        render(spec)
    assert not (tmp_path / "entropy_fan.png").exists()


def test_schema_mismatch_rejected(products_dir, tmp_path):
    bad = tmp_path / "bad.csv"
    with open(products_dir / "sweep.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    rows[1][0] = "999"  # corrupt the schema_version of the first data row
    with open(bad, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    spec = FigureSpec(
        kind="entropy_fan", inputs=(str(bad),), output=str(tmp_path / "x.png"))
    with pytest.raises(SchemaMismatchError, match="999"):
        render(spec)

    # a CSV missing required columns is also a schema mismatch
    wrong = tmp_path / "wrong.csv"
    wrong.write_text("schema_version,foo\n1,2\n")
    spec = FigureSpec(
        kind="entropy_fan", inputs=(str(wrong),), output=str(tmp_path / "y.png"))
    with pytest.raises(SchemaMismatchError, match="missing columns"):
        render(spec)


def test_spec_validation():
    with pytest.raises(FigureSpecError):
        FigureSpec(kind="pie_chart", inputs=("a.csv",), output="x.png")
    with pytest.raises(FigureSpecError):
        FigureSpec(kind="entropy_fan", inputs=(), output="x.png")
    with pytest.raises(FigureSpecError):
        FigureSpec(kind="entropy_fan", inputs=("a.csv",), output="x.png",
                   smoothing={"polyfit": -3})
    with pytest.raises(FigureSpecError, match="unknown"):
        FigureSpec.from_json(json.dumps({
            "kind": "entropy_fan", "inputs": ["a.csv"], "output": "x.png",
            "colour_scheme": "viridis"}))
    with pytest.raises(FigureSpecError, match="missing"):
        FigureSpec.from_json(json.dumps({"kind": "entropy_fan"}))


def test_beta_filter_selects_rows(products_dir, tmp_path):
    with open(products_dir / "spectrum.csv", newline="") as fh:
        betas = sorted({float(r["beta"]) for r in csv.DictReader(fh)
                        if math.isfinite(float(r["beta"]))})
    spec = make_spec(products_dir, tmp_path, "spectrum_scatter",
                     beta_filter=(betas[-1],))
    out = render(spec)
    assert out.exists()


def test_cli_roundtrip(products_dir, tmp_path, capsys):
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps({
        "kind": "jackknife_overlay",
        "inputs": [str(products_dir / "variance_summary.csv")],
        "output": str(tmp_path / "overlay.png"),
    }))
    assert main(["render", "--spec", str(spec_path)]) == 0
    assert (tmp_path / "overlay.png").exists()

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"kind": "nope", "inputs": ["x"], "output": "y"}))
    assert main(["render", "--spec", str(bad)]) == 1
