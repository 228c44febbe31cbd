"""Figure construction from experiment CSV files.

Reads only the documented CSV products of the partial-trace experiment
driver (schema version 1) and writes image files; rendering is
deterministic, so identical inputs give identical bytes.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402
from scipy.interpolate import CubicSpline  # noqa: E402

SCHEMA_VERSION = "1"

#: beta/J thresholds separating the smoothing regimes
POLYFIT_BELOW = 5.0
SPLINE_BELOW = 500.0
POLYFIT_DEGREE = 10

FIGURE_KINDS = (
    "entropy_fan",
    "spectrum_scatter",
    "ergotropy_curves",
    "variance_fan",
    "jackknife_overlay",
    "variance_bound",
)

_REQUIRED_COLUMNS = {
    "entropy_fan": {"beta", "h", "entropy", "n_sys_sites"},
    "spectrum_scatter": {"beta", "h", "level_index", "level"},
    "ergotropy_curves": {"beta", "h", "ergotropy"},
    "variance_fan": {"k", "m", "run", "beta", "eig_index", "eigenvalue"},
    "jackknife_overlay": {"k", "m", "beta", "spread_rms", "jackknife_rms"},
    "variance_bound": {"beta", "k", "log10_bound"},
}


class FigureSpecError(ValueError):
    """Malformed figure specification."""


class SchemaMismatchError(ValueError):
    """Input CSV does not carry the expected schema version or columns."""


class EmptySelectionError(ValueError):
    """Filters removed every row; nothing to draw."""


@dataclass(frozen=True)
class FigureSpec:
    """What to draw: input CSVs, figure kind, smoothing policy, filters.

    ``smoothing`` is one of "auto" (polynomial fit below beta/J = 5, cubic
    spline up to 500, raw above), "none", "spline", or
    ``{"polyfit": degree}``.  Filters keep only rows whose beta/h match one
    of the listed values.
    """

    kind: str
    inputs: tuple[str, ...]
    output: str
    smoothing: object = "auto"
    beta_filter: tuple[float, ...] | None = None
    h_filter: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise FigureSpecError(
                f"kind must be one of {FIGURE_KINDS}, got {self.kind!r}")
        if not self.inputs:
            raise FigureSpecError("at least one input CSV is required")
        if not _valid_smoothing(self.smoothing):
            raise FigureSpecError(f"bad smoothing policy {self.smoothing!r}")

    @classmethod
    def from_json(cls, text: str) -> "FigureSpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FigureSpecError(f"spec is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise FigureSpecError("spec must be a JSON object")
        allowed = {"kind", "inputs", "output", "smoothing", "beta_filter", "h_filter"}
        unknown = set(doc) - allowed
        if unknown:
            raise FigureSpecError(f"unknown spec keys: {sorted(unknown)}")
        missing = {"kind", "inputs", "output"} - set(doc)
        if missing:
            raise FigureSpecError(f"missing spec keys: {sorted(missing)}")
        smoothing = doc.get("smoothing", "auto")
        if isinstance(smoothing, dict):
            smoothing = {k: v for k, v in smoothing.items()}
        return cls(
            kind=doc["kind"],
            inputs=tuple(str(p) for p in doc["inputs"]),
            output=str(doc["output"]),
            smoothing=smoothing,
            beta_filter=None if doc.get("beta_filter") is None
            else tuple(float(x) for x in doc["beta_filter"]),
            h_filter=None if doc.get("h_filter") is None
            else tuple(float(x) for x in doc["h_filter"]),
        )

    @classmethod
    def load(cls, path) -> "FigureSpec":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _valid_smoothing(policy) -> bool:
    if policy in ("auto", "none", "spline"):
        return True
    return (
        isinstance(policy, dict)
        and set(policy) == {"polyfit"}
        and isinstance(policy["polyfit"], int)
        and policy["polyfit"] >= 1
    )


# ---------------------------------------------------------------------------
# CSV loading
# ---------------------------------------------------------------------------

def _load_rows(spec: FigureSpec) -> list[dict]:
    required = _REQUIRED_COLUMNS[spec.kind]
    rows: list[dict] = []
    for path in spec.inputs:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            columns = set(reader.fieldnames or ())
            if "schema_version" not in columns:
                raise SchemaMismatchError(f"{path}: no schema_version column")
            missing = required - columns
            if missing:
                raise SchemaMismatchError(
                    f"{path}: missing columns {sorted(missing)} for {spec.kind}")
            for row in reader:
                if row["schema_version"] != SCHEMA_VERSION:
                    raise SchemaMismatchError(
                        f"{path}: schema version {row['schema_version']!r}, "
                        f"expected {SCHEMA_VERSION}")
                rows.append(row)
    rows = [r for r in rows if _keep(r, spec)]
    if not rows:
        raise EmptySelectionError("no rows left after applying filters")
    return rows


def _matches(value: float, wanted: tuple[float, ...]) -> bool:
    return any(
        math.isclose(value, w, rel_tol=1e-9, abs_tol=0.0) or value == w
        for w in wanted
    )


def _keep(row: dict, spec: FigureSpec) -> bool:
    if spec.beta_filter is not None and "beta" in row:
        if not _matches(float(row["beta"]), spec.beta_filter):
            return False
    if spec.h_filter is not None and "h" in row:
        if not _matches(float(row["h"]), spec.h_filter):
            return False
    return True


# ---------------------------------------------------------------------------
# smoothing
# ---------------------------------------------------------------------------

def _dedupe_sorted(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(x)
    x, y = x[order], y[order]
    xs, ys = [], []
    i = 0
    while i < len(x):
        j = i
        while j < len(x) and x[j] == x[i]:
            j += 1
        xs.append(x[i])
        ys.append(float(np.mean(y[i:j])))
        i = j
    return np.array(xs), np.array(ys)


def smooth_curve(x, y, beta: float, policy):
    """Smoothed (x, y) for one constant-beta curve, or None for raw-only.

    The "auto" policy follows the defaults: degree-10 least squares below
    beta/J = 5 (noisy regime), cubic spline between 5 and 500, and no
    smoothing above 500 where the data is already clean.
    """
    x, y = _dedupe_sorted(np.asarray(x, float), np.asarray(y, float))
    if len(x) < 2:
        return None
    if policy == "auto":
        if not math.isfinite(beta) or beta > SPLINE_BELOW:
            return None
        policy = {"polyfit": POLYFIT_DEGREE} if beta < POLYFIT_BELOW else "spline"
    if policy == "none":
        return None
    grid = np.linspace(x[0], x[-1], 200)
    if policy == "spline":
        if len(x) < 4:
            return None
        return grid, CubicSpline(x, y)(grid)
    degree = min(policy["polyfit"], len(x) - 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", np.exceptions.RankWarning)
        coeffs = np.polyfit(x, y, degree)
    return grid, np.polyval(coeffs, grid)


# ---------------------------------------------------------------------------
# figure builders
# ---------------------------------------------------------------------------

def _floats(rows, col):
    return np.array([float(r[col]) for r in rows])


def _beta_label(beta: float) -> str:
    return "inf" if math.isinf(beta) else f"{beta:g}"


def _curves_by_beta(rows, ycol, smoothing, ax, ylabel):
    betas = sorted({float(r["beta"]) for r in rows})
    for beta in betas:
        sel = [r for r in rows if float(r["beta"]) == beta]
        h = _floats(sel, "h")
        y = _floats(sel, ycol)
        order = np.argsort(h)
        ax.plot(h[order], y[order], "o", markersize=3,
                label=f"beta={_beta_label(beta)}")
        smoothed = smooth_curve(h, y, beta, smoothing)
        if smoothed is not None:
            ax.plot(smoothed[0], smoothed[1], "-", linewidth=1)
    ax.set_xlabel("h")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=6)


def _fig_entropy_fan(rows, spec):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    if any(float(r["beta"]) == 0.0 for r in rows):
        d_s = 2 ** int(rows[0]["n_sys_sites"])
        ax.axhline(math.log(d_s), color="gray", linestyle=":", linewidth=1,
                   label="ln d_s")
    _curves_by_beta(rows, "entropy", spec.smoothing, ax, "von Neumann entropy")
    ax.set_title("entropy vs field")
    return fig


def _fig_ergotropy_curves(rows, spec):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    _curves_by_beta(rows, "ergotropy", spec.smoothing, ax, "ergotropy")
    ax.set_title("ergotropy vs field")
    return fig


def _fig_spectrum_scatter(rows, spec):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    levels = sorted({int(r["level_index"]) for r in rows})
    for li in levels:
        sel = [r for r in rows if int(r["level_index"]) == li]
        ax.scatter(_floats(sel, "h"), _floats(sel, "level"), s=8,
                   label=f"level {li}")
    ax.set_xlabel("h")
    ax.set_ylabel("-ln p")
    ax.set_title("entanglement spectrum")
    ax.legend(fontsize=6)
    return fig


def _cells(rows):
    return sorted({(int(r["k"]), int(r["m"])) for r in rows})


def _cell_grid(fig_width, cells):
    ncols = min(len(cells), 3)
    nrows = (len(cells) + ncols - 1) // ncols
    return plt.subplots(
        nrows, ncols, figsize=(fig_width * ncols, 3.0 * nrows),
        squeeze=False)


def _fig_variance_fan(rows, spec):
    cells = _cells(rows)
    fig, axes = _cell_grid(4.0, cells)
    for idx, (k, m) in enumerate(cells):
        ax = axes[idx // axes.shape[1]][idx % axes.shape[1]]
        sel = [r for r in rows if int(r["k"]) == k and int(r["m"]) == m]
        runs = sorted({int(r["run"]) for r in sel})
        eigs = sorted({int(r["eig_index"]) for r in sel})
        for run in runs:
            for ei in eigs:
                pts = [r for r in sel
                       if int(r["run"]) == run and int(r["eig_index"]) == ei]
                beta = _floats(pts, "beta")
                val = _floats(pts, "eigenvalue")
                order = np.argsort(beta)
                ax.plot(beta[order], val[order], "-", linewidth=0.7, alpha=0.6)
        ax.set_xscale("log")
        ax.set_xlabel("beta")
        ax.set_ylabel("eigenvalues of reduced state")
        ax.set_title(f"k={k}, m={m}", fontsize=8)
    return fig


def _fig_jackknife_overlay(rows, spec):
    cells = _cells(rows)
    fig, axes = _cell_grid(4.0, cells)
    for idx, (k, m) in enumerate(cells):
        ax = axes[idx // axes.shape[1]][idx % axes.shape[1]]
        sel = sorted(
            (r for r in rows if int(r["k"]) == k and int(r["m"]) == m),
            key=lambda r: float(r["beta"]))
        beta = _floats(sel, "beta")
        ax.plot(beta, _floats(sel, "spread_rms"), "o-", markersize=3,
                label="empirical spread")
        ax.plot(beta, _floats(sel, "jackknife_rms"), "s--", markersize=3,
                label="jackknife estimate")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("beta")
        ax.set_ylabel("rms entry deviation")
        ax.set_title(f"k={k}, m={m}", fontsize=8)
        ax.legend(fontsize=6)
    return fig


def _fig_variance_bound(rows, spec):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ks = sorted({int(r["k"]) for r in rows})
    for k in ks:
        sel = sorted((r for r in rows if int(r["k"]) == k),
                     key=lambda r: float(r["beta"]))
        beta = _floats(sel, "beta")
        log_bound = _floats(sel, "log10_bound")
        finite = np.isfinite(log_bound)
        ax.plot(beta[finite], log_bound[finite], "o-", markersize=3,
                label=f"k={k}")
    ax.set_xscale("log")
    ax.set_xlabel("beta")
    ax.set_ylabel("log10 variance bound")
    ax.set_title("deflated variance bound")
    ax.legend(fontsize=6)
    return fig


_BUILDERS = {
    "entropy_fan": _fig_entropy_fan,
    "spectrum_scatter": _fig_spectrum_scatter,
    "ergotropy_curves": _fig_ergotropy_curves,
    "variance_fan": _fig_variance_fan,
    "jackknife_overlay": _fig_jackknife_overlay,
    "variance_bound": _fig_variance_bound,
}


def build_figure(spec: FigureSpec):
    """The matplotlib figure for a spec (exposed for introspection tests)."""
    rows = _load_rows(spec)
    fig = _BUILDERS[spec.kind](rows, spec)
    fig.set_layout_engine("tight")
    return fig


def render(spec: FigureSpec) -> Path:
    """Draw the figure and write the image file; returns the output path.

    Inputs are validated (and filters applied) before anything is written,
    so a failing spec leaves no partial file behind.
    """
    fig = build_figure(spec)
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        fig.savefig(out, dpi=120, metadata={"Software": None})
    finally:
        plt.close(fig)
    return out
