"""Experiment driver: parameter sweeps, variance studies, oracle validation,
bisection-based field grids, and variance-bound tables, all emitting CSV.

Output CSVs are deterministic byte-for-byte for a fixed seed (independent of
worker count); wall-clock timings are therefore written to a separate
``timing.csv`` that carries no scientific content.

Exit codes: 0 ok, 1 config error, 2 numerical contract violation,
3 validation failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from .krylov import (
    DeflationBasis,
    DepthSelectionError,
    EigensolverError,
    KrylovDegeneracyError,
    QuadratureDomainError,
    lowest_eigenpairs,
)
from .observables import (
    DensityMatrix,
    entanglement_spectrum,
    ergotropy,
    internal_energy,
    von_neumann_entropy,
)
from .oracle import dense_matrix, dense_partial_trace, dense_reduced_state, variance_profile
from .ptrace import (
    OrthonormalityError,
    ProbeConfig,
    estimate_deflated_dense,
    estimate_thermal,
    ground_state_reduced,
    partial_trace_rank1,
)
from .spinsys import (
    MAX_SITES,
    BipartiteSplit,
    CouplingSpec,
    LinOp,
    build_hamiltonian,
    chain_xx,
    kagome_strip,
    long_range_xx,
    subsystem_hamiltonian,
)

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid or malformed experiment configuration."""


class ContractViolationError(RuntimeError):
    """An always-on numerical accounting contract was violated."""


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------

def load_config(path: str | Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return doc


def _check_keys(doc: dict, required: set[str], optional: set[str], where: str) -> None:
    missing = required - set(doc)
    if missing:
        raise ConfigError(f"{where}: missing required keys {sorted(missing)}")
    unknown = set(doc) - required - optional
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def _as_number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _as_int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    return value


def parse_grid(value, where: str, allow_inf: bool = False) -> list[float]:
    """Grid given either as an explicit list (numbers, optionally the string
    "inf") or as {"start","stop","count"} / {"log10_start","log10_stop","count"}."""
    if isinstance(value, list):
        out = []
        for entry in value:
            if isinstance(entry, str):
                if allow_inf and entry in ("inf", "Infinity"):
                    out.append(math.inf)
                    continue
                raise ConfigError(f"{where}: bad grid entry {entry!r}")
            out.append(_as_number(entry, where))
        if not out:
            raise ConfigError(f"{where}: grid is empty")
        return out
    if isinstance(value, dict):
        if set(value) == {"start", "stop", "count"}:
            n = _as_int(value["count"], where)
            if n < 1:
                raise ConfigError(f"{where}: count must be >= 1")
            return [float(x) for x in np.linspace(
                _as_number(value["start"], where), _as_number(value["stop"], where), n)]
        if set(value) == {"log10_start", "log10_stop", "count"}:
            n = _as_int(value["count"], where)
            if n < 1:
                raise ConfigError(f"{where}: count must be >= 1")
            return [float(x) for x in np.logspace(
                _as_number(value["log10_start"], where),
                _as_number(value["log10_stop"], where), n)]
        raise ConfigError(
            f"{where}: grid object must have keys start/stop/count or "
            f"log10_start/log10_stop/count, got {sorted(value)}"
        )
    raise ConfigError(f"{where}: expected a list or grid object")


def build_system(doc, max_sites: int) -> tuple[CouplingSpec, str]:
    """Construct the base coupling spec (field applied later) from config."""
    if not isinstance(doc, dict):
        raise ConfigError("system: expected an object")
    kind = doc.get("kind")
    try:
        if kind == "chain_xx":
            _check_keys(doc, {"kind", "n_sites"}, {"j", "periodic"}, "system")
            spec = chain_xx(
                _as_int(doc["n_sites"], "system.n_sites"),
                float(doc.get("j", 1.0)),
                bool(doc.get("periodic", False)),
            )
        elif kind == "long_range_xx":
            _check_keys(doc, {"kind", "n_sites", "alpha"}, set(), "system")
            alpha = doc["alpha"]
            alpha = math.inf if alpha in ("inf", "Infinity") else _as_number(alpha, "system.alpha")
            spec = long_range_xx(_as_int(doc["n_sites"], "system.n_sites"), alpha)
        elif kind == "kagome_strip":
            _check_keys(doc, {"kind", "n_cells"}, {"j0", "j1", "j2", "periodic"}, "system")
            spec = kagome_strip(
                _as_int(doc["n_cells"], "system.n_cells"),
                float(doc.get("j0", 1.0)),
                float(doc.get("j1", 1.0)),
                float(doc.get("j2", 1.0)),
                bool(doc.get("periodic", False)),
            )
        else:
            if kind == "custom":
                _check_keys(doc, {"kind", "path"}, set(), "system")
                spec = CouplingSpec.load(doc["path"])
            else:
                raise ConfigError(
                    f"system.kind must be chain_xx | long_range_xx | kagome_strip | custom, "
                    f"got {kind!r}"
                )
    except (ValueError, OSError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"system: {exc}") from exc
    if spec.n_sites > max_sites:
        raise ConfigError(f"system has {spec.n_sites} sites > --max-n {max_sites}")
    return spec, str(kind)


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


class CsvWriter:
    """Single serialized writer per file; rows flushed as they are produced."""

    def __init__(self, path: Path, header: list[str]):
        self._fh = open(path, "w", encoding="utf-8", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(header)

    def row(self, values) -> None:
        self._writer.writerow([_fmt(v) for v in values])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

SWEEP_REQUIRED = {"system", "n_sys_sites", "h_grid", "betas", "k", "m", "seed"}
SWEEP_OPTIONAL = {"distribution", "depth", "depth_rel_tol", "depth_max", "reorth"}


def _probe_seed(base_seed: int, h_index: int) -> int:
    return int(np.random.SeedSequence((base_seed, h_index)).generate_state(1)[0])


def run_sweep(cfg: dict, out_dir: Path, threads: int = 1, max_sites: int = MAX_SITES) -> None:
    """Full (h, beta) sweep: reduced-state estimates, observables with
    jackknife error bars, spectra, and matvec accounting."""
    _check_keys(cfg, SWEEP_REQUIRED, SWEEP_OPTIONAL, "sweep config")
    base, system_name = build_system(cfg["system"], max_sites)
    split = BipartiteSplit(base.n_sites, _as_int(cfg["n_sys_sites"], "n_sys_sites"))
    h_grid = parse_grid(cfg["h_grid"], "h_grid")
    betas = parse_grid(cfg["betas"], "betas", allow_inf=True)
    k = _as_int(cfg["k"], "k")
    m = _as_int(cfg["m"], "m")
    seed = _as_int(cfg["seed"], "seed")
    distribution = cfg.get("distribution", "gaussian")
    depth = cfg.get("depth", "auto")
    if depth != "auto":
        depth = _as_int(depth, "depth")
    depth_rel_tol = float(cfg.get("depth_rel_tol", 1e-10))
    depth_max = _as_int(cfg.get("depth_max", 512), "depth_max")
    reorth = bool(cfg.get("reorth", False))

    if any(b < 0 for b in betas if math.isfinite(b)):
        raise ConfigError("betas must be >= 0")
    # beta = 0 and beta = inf have closed forms (maximally mixed state and
    # ground-state reduction); only the interior of the grid needs probes
    probe_betas = [b for b in betas if math.isfinite(b) and b > 0]
    has_zero = any(b == 0 for b in betas)
    has_inf = any(math.isinf(b) for b in betas)
    if has_inf and k < 1:
        raise ConfigError("beta = inf rows need k >= 1 (ground-state path)")

    out_dir.mkdir(parents=True, exist_ok=True)
    sweep_w = CsvWriter(out_dir / "sweep.csv", [
        "schema_version", "system", "n_sites", "n_sys_sites", "k", "m", "t",
        "seed", "distribution", "beta", "h",
        "entropy", "entropy_stderr", "ergotropy", "ergotropy_stderr",
        "internal_energy", "internal_energy_stderr",
        "log_scale", "asymmetry", "clamp",
        "matvecs_eig", "matvecs_pilot", "matvecs_estimator",
    ])
    spec_w = CsvWriter(out_dir / "spectrum.csv", [
        "schema_version", "h", "beta", "level_index", "level", "n_clamped",
    ])
    rho_w = CsvWriter(out_dir / "rho.csv", [
        "schema_version", "h", "beta", "k", "m", "t", "seed", "row", "col",
        "mean_value", "mean_stderr", "log_scale", "rho_value", "rho_stderr",
    ])
    timing_w = CsvWriter(out_dir / "timing.csv", [
        "h", "wall_ms_eig", "wall_ms_estimate", "wall_ms_total",
    ])

    try:
        for h_index, h in enumerate(h_grid):
            try:
                _sweep_point(
                    base, split, h, h_index, probe_betas, has_zero, has_inf,
                    k, m, seed, distribution, depth, depth_rel_tol, depth_max,
                    reorth, threads, max_sites, system_name,
                    sweep_w, spec_w, rho_w, timing_w,
                )
            except (KrylovDegeneracyError, EigensolverError, DepthSelectionError,
                    QuadratureDomainError, ValueError) as exc:
                # partial results stay flushed; report and continue
                print(f"sweep point h={h!r} failed: {exc}", file=sys.stderr)
    finally:
        for w in (sweep_w, spec_w, rho_w, timing_w):
            w.close()


def _sweep_point(
    base, split, h, h_index, probe_betas, has_zero, has_inf,
    k, m, seed, distribution, depth, depth_rel_tol, depth_max,
    reorth, threads, max_sites, system_name,
    sweep_w, spec_w, rho_w, timing_w,
):
    t_start = time.perf_counter()
    spec_h = base.with_field(h)
    op = build_hamiltonian(spec_h, max_sites)
    op.reset_applies()

    t0 = time.perf_counter()
    basis = lowest_eigenpairs(op, k) if k else DeflationBasis.empty(op.dim)
    mv_eig = op.applies
    ms_eig = 1e3 * (time.perf_counter() - t0)
    h_s = subsystem_hamiltonian(spec_h, split)

    t0 = time.perf_counter()
    therm = None
    mv_pilot = 0
    if probe_betas:
        probes = ProbeConfig(m, distribution, _probe_seed(seed, h_index), threads)
        therm = estimate_thermal(
            op, split, basis, probe_betas, probes,
            depth=depth, depth_rel_tol=depth_rel_tol, depth_max=depth_max,
            reorth=reorth,
        )
        expected = m * therm.depth * split.d_s
        if therm.matvecs != expected:
            raise ContractViolationError(
                f"estimator phase used {therm.matvecs} matvecs, expected "
                f"m*t*d_s = {expected}"
            )
        mv_pilot = op.applies - mv_eig - therm.matvecs
    ms_est = 1e3 * (time.perf_counter() - t0)

    def emit(beta, rho_mat, est, t_used, mv_est, exact=False):
        dm = DensityMatrix(rho_mat, negative_tol=None)
        if est is not None:
            entropy, entropy_err = est.jackknife_scalar(
                lambda r: von_neumann_entropy(DensityMatrix(r, negative_tol=None)))
            erg, erg_err = est.jackknife_scalar(
                lambda r: ergotropy(DensityMatrix(r, negative_tol=None), h_s))
            u, u_err = est.jackknife_scalar(
                lambda r: internal_energy(DensityMatrix(r, negative_tol=None), h_s))
            log_scale = est.mean.log_scale
            asym = est.asymmetry
            rho_err = est.normalized_stderr()
            mean_mat, mean_err = est.mean.mat, est.stderr
        else:
            # exact closed-form rows carry zero error; a single-sample
            # estimate has no jackknife information at all
            err0 = 0.0 if exact else math.nan
            entropy, entropy_err = von_neumann_entropy(dm), err0
            erg, erg_err = ergotropy(dm, h_s), err0
            u, u_err = internal_energy(dm, h_s), err0
            log_scale, asym = 0.0, 0.0
            rho_err = np.full_like(rho_mat, err0)
            mean_mat, mean_err = rho_mat, np.full_like(rho_mat, err0)
        sweep_w.row([
            SCHEMA_VERSION, system_name, split.n_sites, split.n_sys_sites,
            k, m, t_used, seed, distribution, beta, h,
            entropy, entropy_err, erg, erg_err, u, u_err,
            log_scale, asym, dm.clamp_magnitude,
            mv_eig, mv_pilot, mv_est,
        ])
        levels, n_clamped = entanglement_spectrum(dm)
        for li, level in enumerate(levels):
            spec_w.row([SCHEMA_VERSION, h, beta, li, level, n_clamped])
        for r in range(split.d_s):
            for c in range(split.d_s):
                rho_w.row([
                    SCHEMA_VERSION, h, beta, k, m, t_used, seed, r, c,
                    mean_mat[r, c], mean_err[r, c], log_scale,
                    rho_mat[r, c], rho_err[r, c],
                ])

    if has_zero:
        # exp(0 * H) = I: the reduced state is exactly maximally mixed
        emit(0.0, np.eye(split.d_s) / split.d_s, None, 0, 0, exact=True)
    if therm is not None:
        for beta, est in therm:
            if m >= 2:
                emit(beta, est.normalized(), est, therm.depth, therm.matvecs)
            else:
                emit(beta, est.normalized(), None, therm.depth, therm.matvecs)
    if has_inf:
        emit(math.inf, ground_state_reduced(basis, split), None, 0, 0, exact=True)

    timing_w.row([
        h, ms_eig, ms_est, 1e3 * (time.perf_counter() - t_start),
    ])


# ---------------------------------------------------------------------------
# variance study
# ---------------------------------------------------------------------------

STUDY_REQUIRED = {"system", "n_sys_sites", "h", "betas", "ks", "ms", "runs", "seed"}
STUDY_OPTIONAL = {"distribution", "depth", "depth_rel_tol", "depth_max", "reorth"}


def _run_seed(base_seed: int, k: int, m: int, run: int) -> int:
    return int(np.random.SeedSequence((base_seed, k, m, run)).generate_state(1)[0])


def run_variance_study(cfg: dict, out_dir: Path, threads: int = 1,
                       max_sites: int = MAX_SITES) -> dict:
    """Repeated independent estimator runs per (k, m) cell.

    Emits per-run eigenvalue trajectories of the reduced state across beta
    and, per cell and beta, the empirical spread over runs next to the mean
    jackknife prediction.  Returns the summary table keyed by (k, m, beta).
    """
    _check_keys(cfg, STUDY_REQUIRED, STUDY_OPTIONAL, "variance-study config")
    base, _ = build_system(cfg["system"], max_sites)
    split = BipartiteSplit(base.n_sites, _as_int(cfg["n_sys_sites"], "n_sys_sites"))
    h = _as_number(cfg["h"], "h")
    betas = parse_grid(cfg["betas"], "betas")
    ks = [_as_int(v, "ks") for v in cfg["ks"]]
    ms = [_as_int(v, "ms") for v in cfg["ms"]]
    runs = _as_int(cfg["runs"], "runs")
    seed = _as_int(cfg["seed"], "seed")
    distribution = cfg.get("distribution", "gaussian")
    depth = cfg.get("depth", "auto")
    if depth != "auto":
        depth = _as_int(depth, "depth")
    depth_rel_tol = float(cfg.get("depth_rel_tol", 1e-10))
    depth_max = _as_int(cfg.get("depth_max", 512), "depth_max")
    reorth = bool(cfg.get("reorth", False))
    if runs < 2:
        raise ConfigError("runs must be >= 2 for a spread estimate")
    if any(m < 2 for m in ms):
        raise ConfigError("all ms must be >= 2 (jackknife needs two samples)")

    op = build_hamiltonian(base.with_field(h), max_sites)
    bases = {k: (lowest_eigenpairs(op, k) if k else DeflationBasis.empty(op.dim))
             for k in sorted(set(ks))}

    out_dir.mkdir(parents=True, exist_ok=True)
    runs_w = CsvWriter(out_dir / "variance_runs.csv", [
        "schema_version", "k", "m", "run", "beta", "eig_index", "eigenvalue",
    ])
    summary_w = CsvWriter(out_dir / "variance_summary.csv", [
        "schema_version", "k", "m", "beta", "spread_rms", "jackknife_rms", "n_runs",
    ])
    summary: dict[tuple[int, int, float], tuple[float, float]] = {}
    try:
        for k in ks:
            for m in ms:
                rhos = np.empty((runs, len(betas), split.d_s, split.d_s))
                jk_rms = np.empty((runs, len(betas)))
                for run in range(runs):
                    probes = ProbeConfig(m, distribution, _run_seed(seed, k, m, run), threads)
                    therm = estimate_thermal(
                        op, split, bases[k], betas, probes, depth=depth,
                        depth_rel_tol=depth_rel_tol, depth_max=depth_max,
                        reorth=reorth,
                    )
                    for bi, (beta, est) in enumerate(therm):
                        rho = est.normalized()
                        rhos[run, bi] = rho
                        jk_rms[run, bi] = float(np.sqrt(np.mean(est.normalized_stderr() ** 2)))
                        for ei, ev in enumerate(np.linalg.eigvalsh(rho)):
                            runs_w.row([SCHEMA_VERSION, k, m, run, beta, ei, ev])
                for bi, beta in enumerate(betas):
                    spread = float(np.sqrt(np.mean(np.var(rhos[:, bi], axis=0, ddof=1))))
                    predicted = float(np.mean(jk_rms[:, bi]))
                    summary[(k, m, beta)] = (spread, predicted)
                    summary_w.row([SCHEMA_VERSION, k, m, beta, spread, predicted, runs])
    finally:
        runs_w.close()
        summary_w.close()
    return summary


# ---------------------------------------------------------------------------
# bisect-h
# ---------------------------------------------------------------------------

def chebyshev_nodes(lo: float, hi: float, n: int) -> list[float]:
    """Chebyshev nodes shifted and scaled to [lo, hi], in increasing order."""
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    nodes = [mid + half * math.cos((2 * j - 1) * math.pi / (2 * n)) for j in range(1, n + 1)]
    return sorted(nodes)


def locate_plateaus(
    fn,
    lo: float,
    hi: float,
    value_tol: float,
    x_tol: float,
    max_depth: int = 40,
    init_points: int = 9,
) -> tuple[list[float], bool]:
    """Boundaries of the plateaus of a piecewise-constant-looking function.

    Scans a coarse grid, then bisects every bracketing pair whose values
    differ by more than ``value_tol`` until the bracket is shorter than
    ``x_tol``.  Returns the sorted jump locations and whether the depth
    budget was exhausted (in which case the boundaries found so far are
    returned and a warning is printed).
    """
    if hi <= lo:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    if init_points < 2:
        raise ValueError("init_points must be >= 2")
    xs = list(np.linspace(lo, hi, init_points))
    vals = [fn(x) for x in xs]
    stack = [
        (xs[i], vals[i], xs[i + 1], vals[i + 1], 0)
        for i in range(len(xs) - 1)
    ]
    boundaries: list[float] = []
    exhausted = False
    while stack:
        a, fa, b, fb, depth = stack.pop()
        if abs(fb - fa) <= value_tol:
            continue
        if b - a <= x_tol:
            boundaries.append(0.5 * (a + b))
            continue
        if depth >= max_depth:
            exhausted = True
            boundaries.append(0.5 * (a + b))
            continue
        mid = 0.5 * (a + b)
        fm = fn(mid)
        stack.append((mid, fm, b, fb, depth + 1))
        stack.append((a, fa, mid, fm, depth + 1))
    if exhausted:
        print("bisection depth budget exhausted; boundaries are partial", file=sys.stderr)
    return sorted(boundaries), exhausted


BISECT_REQUIRED = {"system", "n_sys_sites", "h_min", "h_max"}
BISECT_OPTIONAL = {"value_tol", "h_tol", "max_depth", "nodes_per_interval", "init_points"}


def run_bisect_h(cfg: dict, out_dir: Path | None,
                 max_sites: int = MAX_SITES) -> list[float]:
    """Locate plateau boundaries of the ground-state entanglement entropy
    over a field range and return Chebyshev-node field values per interval."""
    _check_keys(cfg, BISECT_REQUIRED, BISECT_OPTIONAL, "bisect-h config")
    base, _ = build_system(cfg["system"], max_sites)
    split = BipartiteSplit(base.n_sites, _as_int(cfg["n_sys_sites"], "n_sys_sites"))
    h_min = _as_number(cfg["h_min"], "h_min")
    h_max = _as_number(cfg["h_max"], "h_max")
    value_tol = float(cfg.get("value_tol", 1e-3))
    h_tol = float(cfg.get("h_tol", 1e-6))
    max_depth = _as_int(cfg.get("max_depth", 40), "max_depth")
    nodes_per_interval = _as_int(cfg.get("nodes_per_interval", 8), "nodes_per_interval")
    init_points = _as_int(cfg.get("init_points", 9), "init_points")

    def ground_entropy(h: float) -> float:
        op = build_hamiltonian(base.with_field(h), max_sites)
        basis = lowest_eigenpairs(op, 1)
        rho = ground_state_reduced(basis, split)
        return von_neumann_entropy(DensityMatrix(rho, negative_tol=None))

    boundaries, _ = locate_plateaus(
        ground_entropy, h_min, h_max, value_tol, h_tol, max_depth, init_points)
    edges = [h_min] + boundaries + [h_max]
    h_values: list[float] = []
    rows = []
    for idx in range(len(edges) - 1):
        nodes = chebyshev_nodes(edges[idx], edges[idx + 1], nodes_per_interval)
        for ni, node in enumerate(nodes):
            rows.append((idx, edges[idx], edges[idx + 1], ni, node))
        h_values.extend(nodes)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        w = CsvWriter(out_dir / "hgrid.csv", [
            "schema_version", "interval_index", "h_lo", "h_hi", "node_index", "h",
        ])
        try:
            for row in rows:
                w.row([SCHEMA_VERSION, *row])
        finally:
            w.close()
    return h_values


# ---------------------------------------------------------------------------
# variance profile (oracle)
# ---------------------------------------------------------------------------

PROFILE_REQUIRED = {"system", "h", "betas", "ks"}
PROFILE_OPTIONAL = set()


def run_variance_profile(cfg: dict, out_dir: Path,
                         max_sites: int = MAX_SITES) -> None:
    _check_keys(cfg, PROFILE_REQUIRED, PROFILE_OPTIONAL, "variance-profile config")
    base, _ = build_system(cfg["system"], max_sites)
    h = _as_number(cfg["h"], "h")
    betas = parse_grid(cfg["betas"], "betas")
    ks = [_as_int(v, "ks") for v in cfg["ks"]]
    op = build_hamiltonian(base.with_field(h), max_sites)
    profile = variance_profile(op, betas, ks)
    out_dir.mkdir(parents=True, exist_ok=True)
    w = CsvWriter(out_dir / "variance_profile.csv", [
        "schema_version", "n_sites", "h", "beta", "k", "bound", "log10_bound",
    ])
    try:
        for beta, k, bound, log10_bound in profile.iter_rows():
            w.row([SCHEMA_VERSION, base.n_sites, h, beta, k, bound, log10_bound])
    finally:
        w.close()


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

DEFAULT_VALIDATE_CONFIG = {
    "system": {"kind": "chain_xx", "n_sites": 8, "j": 1.0, "periodic": False},
    "n_sys_sites": 2,
    "h": 0.3,
    "betas": [0.0, 0.1, 1.0, 10.0, 100.0],
    "k": 8,
    "m": 10,
    "seed": 20240,
    "distribution": "gaussian",
}

VALIDATE_REQUIRED = {"system", "n_sys_sites", "h", "betas", "k", "m", "seed"}
VALIDATE_OPTIONAL = {"distribution"}

#: entrywise statistical tolerance: |delta| <= 4*stderr + this floor
STAT_FLOOR = 1e-8


def run_validate(cfg: dict | None, out_dir: Path | None, threads: int = 1,
                 max_sites: int = MAX_SITES) -> int:
    """Run every estimator path against the dense oracle; print a pass/fail
    table and return a process exit code (0 ok, 3 on violation).

    With ``out_dir`` set, also emits the full set of CSV products (sweep,
    spectrum, rho, variance study, variance profile) for downstream figure
    rendering.
    """
    cfg = dict(DEFAULT_VALIDATE_CONFIG if cfg is None else cfg)
    _check_keys(cfg, VALIDATE_REQUIRED, VALIDATE_OPTIONAL, "validate config")
    base, _ = build_system(cfg["system"], max_sites)
    if base.n_sites > 12:
        raise ConfigError("validate needs n_sites <= 12 (dense oracle size guard)")
    split = BipartiteSplit(base.n_sites, _as_int(cfg["n_sys_sites"], "n_sys_sites"))
    h = _as_number(cfg["h"], "h")
    betas = sorted(parse_grid(cfg["betas"], "betas"))
    k = _as_int(cfg["k"], "k")
    if k < 1:
        raise ConfigError("validate needs k >= 1 (the beta = inf check uses q1)")
    m = _as_int(cfg["m"], "m")
    seed = _as_int(cfg["seed"], "seed")
    distribution = cfg.get("distribution", "gaussian")

    spec_h = base.with_field(h)
    op = build_hamiltonian(spec_h, max_sites)
    basis = lowest_eigenpairs(op, k)
    probes = ProbeConfig(m, distribution, seed, threads)
    therm = estimate_thermal(op, split, basis, betas, probes)

    checks: list[tuple[str, bool, str]] = []

    # 1. thermal estimates vs dense oracle, entrywise 4-sigma with floor
    worst = 0.0
    for beta, est in therm:
        target = dense_reduced_state(op, beta, split)
        delta = np.abs(est.normalized() - target)
        tolerance = 4.0 * est.normalized_stderr() + STAT_FLOOR
        worst = max(worst, float(np.max(delta / tolerance)))
    checks.append((
        "thermal_vs_oracle", worst <= 1.0,
        f"max |delta|/(4*stderr + {STAT_FLOOR:g}) = {worst:.3f}",
    ))

    # 2. deflation-dominated regime: absolute Frobenius agreement
    w_all = np.linalg.eigvalsh(op.to_array())
    beta_max = betas[-1]
    if k >= 1 and k < op.dim and beta_max * (w_all[k] - w_all[0]) >= 40.0:
        target = dense_reduced_state(op, beta_max, split)
        frob = float(np.linalg.norm(therm.estimates[-1].normalized() - target))
        checks.append((
            "deflation_dominated", frob <= 1e-8,
            f"Frobenius error at beta={beta_max:g} is {frob:.3e}",
        ))

    # 3. beta = 0 entropy is exactly ln(d_s) with sphere probes, k = 0
    exact0 = estimate_thermal(
        op, split, DeflationBasis.empty(op.dim), [0.0],
        ProbeConfig(2, "sphere", seed, threads), depth=1,
    )
    s0 = von_neumann_entropy(DensityMatrix(exact0.estimates[0].normalized()))
    checks.append((
        "beta0_entropy", abs(s0 - math.log(split.d_s)) <= 1e-10,
        f"|S - ln d_s| = {abs(s0 - math.log(split.d_s)):.2e}",
    ))

    # 4. beta = inf path equals the exact rank-1 partial trace of q1
    rho_inf = ground_state_reduced(basis, split)
    ref = partial_trace_rank1(basis.q[:, 0], split)
    checks.append((
        "beta_inf_ground_state", bool(np.array_equal(rho_inf, ref)),
        "tr_b(q1 q1^T) reproduced exactly",
    ))

    # 5. full deflation (k = d_t) is exact on a small dense case
    small = build_hamiltonian(chain_xx(6, 1.0).with_field(h))
    small_split = BipartiteSplit(6, 2)
    a_small = dense_matrix(small)
    _, uq = np.linalg.eigh(a_small)
    full = estimate_deflated_dense(
        LinOp.from_dense(a_small), uq, small_split, ProbeConfig(2, "gaussian", seed))
    err_full = float(np.max(np.abs(
        full.mean.to_dense() - dense_partial_trace(a_small, small_split))))
    checks.append((
        "full_deflation_exact", err_full <= 1e-10,
        f"max entry error {err_full:.2e}",
    ))

    # 6. matvec accounting: m*t*d_s for the thermal run, k + m*d_s dense
    ok_thermal = therm.matvecs == m * therm.depth * split.d_s
    op_small = LinOp.from_dense(a_small)
    op_small.reset_applies()
    estimate_deflated_dense(op_small, uq[:, :3], small_split, ProbeConfig(4, "gaussian", seed))
    ok_dense = op_small.applies == 3 + 4 * small_split.d_s
    checks.append((
        "matvec_accounting", ok_thermal and ok_dense,
        f"thermal {therm.matvecs} == m*t*d_s, dense path k + m*d_s",
    ))

    # 7. the orthonormality guard fires on a corrupted projection block
    bad_q = basis.q.copy()
    bad_q[:, 0] *= 1.5
    try:
        estimate_deflated_dense(op, bad_q, split, ProbeConfig(2, "gaussian", seed))
        guard_ok = False
    except OrthonormalityError:
        guard_ok = True
    checks.append(("orthonormality_guard", guard_ok, "contract error raised"))

    width = max(len(name) for name, _, _ in checks)
    failures = 0
    for name, ok, detail in checks:
        status = "PASS" if ok else "FAIL"
        print(f"[{status}] {name:<{width}}  {detail}")
        failures += 0 if ok else 1

    if out_dir is not None:
        _emit_validation_products(cfg, base, split, out_dir, threads, max_sites)

    return 0 if failures == 0 else 3


def _emit_validation_products(cfg, base, split, out_dir: Path, threads: int,
                              max_sites: int) -> None:
    """CSV products for figure rendering, derived from the validate config."""
    h = float(cfg["h"])
    seed = int(cfg["seed"])
    betas = [b for b in parse_grid(cfg["betas"], "betas") if b > 0]
    sweep_cfg = {
        "system": cfg["system"],
        "n_sys_sites": cfg["n_sys_sites"],
        "h_grid": [float(x) for x in np.linspace(0.25 * h, 4.0 * h, 6)],
        "betas": [0.0] + betas + ["inf"],
        "k": cfg["k"],
        "m": cfg["m"],
        "seed": seed,
        "distribution": cfg.get("distribution", "gaussian"),
    }
    run_sweep(sweep_cfg, out_dir, threads, max_sites)
    study_cfg = {
        "system": cfg["system"],
        "n_sys_sites": cfg["n_sys_sites"],
        "h": h,
        "betas": betas,
        "ks": [0, min(4, int(cfg["k"]))],
        "ms": [2, 5],
        "runs": 4,
        "seed": seed,
    }
    run_variance_study(study_cfg, out_dir, threads, max_sites)
    profile_cfg = {
        "system": cfg["system"],
        "h": h,
        "betas": {"log10_start": -1, "log10_stop": 2, "count": 25},
        "ks": [0, 1, 4, 16],
    }
    run_variance_profile(profile_cfg, out_dir, max_sites)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="partrace",
        description="Deflated stochastic partial-trace experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_config in [
        ("sweep", True),
        ("variance-study", True),
        ("validate", False),
        ("bisect-h", True),
        ("variance-profile", True),
    ]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=needs_config,
                       help="JSON experiment configuration")
        p.add_argument("--out-dir", default=None, help="output directory for CSVs")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--threads", type=int, default=1, help="probe worker threads")
        p.add_argument("--max-n", type=int, default=MAX_SITES,
                       help="refuse systems larger than this many sites")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else None
        if cfg is not None and args.seed is not None:
            cfg["seed"] = args.seed
        out_dir = Path(args.out_dir) if args.out_dir else None

        if args.command == "sweep":
            if out_dir is None:
                raise ConfigError("sweep requires --out-dir")
            run_sweep(cfg, out_dir, args.threads, args.max_n)
            return 0
        if args.command == "variance-study":
            if out_dir is None:
                raise ConfigError("variance-study requires --out-dir")
            run_variance_study(cfg, out_dir, args.threads, args.max_n)
            return 0
        if args.command == "validate":
            return run_validate(cfg, out_dir, args.threads, args.max_n)
        if args.command == "bisect-h":
            h_values = run_bisect_h(cfg, out_dir, args.max_n)
            for h in h_values:
                print(_fmt(h))
            return 0
        if args.command == "variance-profile":
            if out_dir is None:
                raise ConfigError("variance-profile requires --out-dir")
            run_variance_profile(cfg, out_dir, args.max_n)
            return 0
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (OrthonormalityError, KrylovDegeneracyError, EigensolverError,
            DepthSelectionError, QuadratureDomainError, ContractViolationError,
            FloatingPointError) as exc:
        print(f"numerical contract violation: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # invalid values reaching domain constructors are configuration errors
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
