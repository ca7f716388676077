"""Experiment drivers: reference solutions, offline compression, online runs,
spectra, rank sweeps, and the homogenization check.

Every driver takes an :class:`~rteschwarz.config.ExperimentConfig`, writes CSV
files (and numpy arrays for fields) under the configured output directory, and
returns its results programmatically.  Wall times are written to separate
``*_timing.csv`` files so the primary CSV outputs are byte-deterministic under
a fixed seed.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from .cache import MapCache, load_cache, save_cache
from .config import ConfigError, ExperimentConfig, Problem, build_problem
from .discretization import (
    BoundaryTrace,
    build_decomposition,
    inflow_trace,
    trace_weights,
)
from .rsvd import AdjointConsistencyError, LowRankMap, RsvdConfig, rsvd_operator
from .schwarz import (
    FullSolveBackend,
    LowRankBackend,
    SchwarzRun,
    assemble_global,
    build_partition,
    relative_error,
    run_schwarz,
)
from .transport import (
    LocalSystem,
    SolverSettings,
    apply_P,
    apply_S_s_adjoint,
    assemble_local,
    flux_profile,
    interior_weight_matrix,
    probe_matrix,
    restrict_interior,
    solve_local,
)

SPECTRUM_DIMENSION_CAP = 10_000


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def boundary_values(quad) -> tuple[np.ndarray, np.ndarray]:
    """Standard inflow data: 10 + sin(2 pi v) on the left, 1 + sin(2 pi v) on the right."""
    v = quad.nodes
    left = 10.0 + np.sin(2.0 * np.pi * v[quad.pos])
    right = 1.0 + np.sin(2.0 * np.pi * v[quad.neg])
    return left, right


def make_systems(problem: Problem, method: str = "gmres",
                 tol: float = 1e-10) -> list[LocalSystem]:
    settings = SolverSettings(tol=tol, method=method)
    return [
        assemble_local(problem.geometry, m, problem.media, problem.grid, problem.quad, settings)
        for m in range(1, problem.geometry.m_count + 1)
    ]


def monolithic_direct_field(problem: Problem) -> np.ndarray:
    """Direct global solve on the undecomposed domain (cross-check oracle)."""
    grid, quad, media = problem.grid, problem.quad, problem.media
    geom1 = build_decomposition(grid, 1)
    sys1 = assemble_local(geom1, 1, media, grid, quad, SolverSettings(method="direct"))
    left, right = boundary_values(quad)
    phi = inflow_trace(1, quad, left=left, right=right)
    u, _ = solve_local(sys1, phi)
    return u


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def write_csv(path: str, header: list[str], rows: list[tuple]) -> None:
    """Comma-separated, '.' decimal, header row, LF line ends; atomic write."""
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def write_plot_manifest(path: str, title: str, xlabel: str, ylabel: str,
                        series: list[tuple[str, str, str, str]], logy: bool = False) -> None:
    """Plain-text recipe (csv file, x column, y column, label) for external plotters."""
    lines = [f"title: {title}", f"x: {xlabel}", f"y: {ylabel}",
             f"yscale: {'log' if logy else 'linear'}", "series:"]
    lines += [f"  - file={f} x={x} y={y} label={lab}" for f, x, y, lab in series]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def _out(cfg: ExperimentConfig, name: str) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, name)


# ---------------------------------------------------------------------------
# Reference solutions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReferenceResult:
    field: np.ndarray
    iterations: int
    converged: bool
    trace_change: float
    direct_gap: float
    path: str


def _reference_path(cfg: ExperimentConfig, fingerprint: str) -> str:
    d = os.path.join(cfg.out_dir, "refs")
    os.makedirs(d, exist_ok=True)
    return os.path.join(d, f"{fingerprint}.npy")


def compute_reference(problem: Problem) -> SchwarzRun:
    """Converged Schwarz solve at tau_ref with factorization-backed local solves."""
    cfg = problem.config
    systems = make_systems(problem, method="direct")
    backend = FullSolveBackend(systems, problem.geometry)
    left, right = boundary_values(problem.quad)
    return run_schwarz(
        backend, systems, problem.geometry, problem.grid, problem.quad,
        left, right, tau=cfg.tau_ref, max_iters=max(cfg.max_iters, 2000),
    )


def get_reference(problem: Problem) -> np.ndarray:
    """Load the fingerprint-keyed reference field, computing it if absent."""
    path = _reference_path(problem.config, problem.fingerprint)
    if os.path.exists(path):
        return np.load(path)
    run = compute_reference(problem)
    np.save(path, run.global_field)
    return run.global_field


def cmd_reference(cfg: ExperimentConfig) -> ReferenceResult:
    """Reference solve plus a monolithic direct cross-check; persists the field."""
    problem = build_problem(cfg)
    run = compute_reference(problem)
    direct = monolithic_direct_field(problem)
    gap = relative_error(run.global_field, direct)
    path = _reference_path(cfg, problem.fingerprint)
    np.save(path, run.global_field)
    write_csv(
        _out(cfg, "reference_summary.csv"),
        ["iterations", "converged", "trace_change", "direct_gap", "fingerprint"],
        [(run.state.t, int(run.state.converged), run.state.error_history[-1], gap,
          problem.fingerprint)],
    )
    write_csv(
        _out(cfg, "reference_history.csv"),
        ["iteration", "trace_change"],
        [(t + 1, e) for t, e in enumerate(run.state.error_history)],
    )
    return ReferenceResult(
        field=run.global_field, iterations=run.state.t, converged=run.state.converged,
        trace_change=run.state.error_history[-1], direct_gap=gap, path=path,
    )


# ---------------------------------------------------------------------------
# Offline compression
# ---------------------------------------------------------------------------

def restricted_map_weights(problem: Problem, m: int) -> tuple[np.ndarray, np.ndarray]:
    """(domain, codomain) quadrature weights of the restricted solution map."""
    quad = problem.quad
    ns = problem.geometry.n_interior(m)
    w_dom = trace_weights("inflow", quad)
    w_cod = interior_weight_matrix(ns, problem.grid.dx, quad).reshape(-1)
    return w_dom, w_cod


def restricted_map_operators(problem: Problem, systems: list[LocalSystem], m: int):
    """Flat-vector forward/adjoint applications of the restricted solution map."""
    geometry, quad = problem.geometry, problem.quad
    sys = systems[m - 1]
    ns = geometry.n_interior(m)

    def apply(vec: np.ndarray) -> np.ndarray:
        phi = BoundaryTrace(owner=m, kind="inflow", values=vec)
        u = sys.solve_vector(sys.rhs_from_trace(phi)).reshape(sys.n_nodes, quad.n)
        return restrict_interior(u, geometry, m).reshape(-1)

    def apply_adjoint(vec: np.ndarray) -> np.ndarray:
        return apply_S_s_adjoint(sys, geometry, m, vec.reshape(ns, quad.n)).values

    return apply, apply_adjoint


#: Stage-I test inputs of the offline builds are raw nodal Gaussians.
DEFAULT_SAMPLING = "nodal"


def build_maps(problem: Problem, rank: int, oversample: int, seed: int,
               systems: list[LocalSystem] | None = None,
               sampling: str = DEFAULT_SAMPLING) -> list[LowRankMap]:
    """Compress the restricted solution map of every subdomain."""
    systems = systems or make_systems(problem, method="direct")
    maps = []
    for m in range(1, problem.geometry.m_count + 1):
        apply, apply_adjoint = restricted_map_operators(problem, systems, m)
        w_dom, w_cod = restricted_map_weights(problem, m)
        cfg = RsvdConfig(rank=rank, oversample=oversample, seed=seed)
        try:
            maps.append(rsvd_operator(
                apply, apply_adjoint, w_dom, w_cod, cfg,
                owner=m, fingerprint=problem.fingerprint,
                field_shape=(problem.geometry.n_interior(m), problem.quad.n),
                stream=m, sampling=sampling,
            ))
        except AdjointConsistencyError as e:
            raise AdjointConsistencyError(f"subdomain {m}: {e}") from e
    return maps


def cache_path(cfg: ExperimentConfig) -> str:
    return _out(cfg, "map_cache.lrsm")


def cmd_offline(cfg: ExperimentConfig) -> str:
    """Build and persist the compressed maps; log their singular values."""
    problem = build_problem(cfg)
    maps = build_maps(problem, cfg.rank, cfg.oversample, cfg.seed)
    path = cache_path(cfg)
    save_cache(path, MapCache(fingerprint=problem.fingerprint, maps=tuple(maps)))
    rows = [(mp.owner, i + 1, s) for mp in maps for i, s in enumerate(mp.sigma)]
    write_csv(_out(cfg, "offline_spectra.csv"), ["subdomain", "index", "sigma"], rows)
    return path


# ---------------------------------------------------------------------------
# Online runs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunResult:
    run: SchwarzRun
    rel_errors: tuple[float, ...]
    final_error: float


def _per_iteration_errors(problem: Problem, run: SchwarzRun, reference: np.ndarray,
                          diag_systems: list[LocalSystem]) -> tuple[float, ...]:
    """Relative error of the assembled field after each recorded iteration.

    Diagnostic solves are factorization-backed and kept out of the timed loop.
    """
    partition = build_partition(problem.geometry)
    errors = []
    for traces in run.trace_history:
        fields = [solve_local(diag_systems[m - 1], traces[m - 1])[0]
                  for m in range(1, problem.geometry.m_count + 1)]
        u = assemble_global(fields, partition, problem.geometry, problem.quad)
        errors.append(relative_error(u, reference))
    return tuple(errors)


def cmd_run(cfg: ExperimentConfig, backend_kind: str = "full",
            iterations: int | None = None) -> RunResult:
    """Online Schwarz run with per-iteration error history against the reference.

    backend_kind "full" solves every subdomain per iteration; "lowrank"
    requires a fingerprint-valid cache from :func:`cmd_offline`.  When
    ``iterations`` is given the run executes exactly that many steps.
    """
    problem = build_problem(cfg)
    left, right = boundary_values(problem.quad)
    diag_systems = make_systems(problem, method="direct")
    if backend_kind == "full":
        systems = make_systems(problem, method="gmres")
        backend = FullSolveBackend(systems, problem.geometry)
    elif backend_kind == "lowrank":
        cache = load_cache(cache_path(cfg), expected_fingerprint=problem.fingerprint)
        backend = LowRankBackend(list(cache.maps), problem.geometry, problem.quad,
                                 expected_fingerprint=problem.fingerprint)
        systems = diag_systems
    else:
        raise ConfigError(f"unknown backend {backend_kind!r}")

    tau = 0.0 if iterations is not None else cfg.tau
    max_iters = iterations if iterations is not None else cfg.max_iters
    run = run_schwarz(
        backend, systems, problem.geometry, problem.grid, problem.quad,
        left, right, tau=max(tau, 1e-300), max_iters=max_iters, record_history=True,
    )
    reference = get_reference(problem)
    rel_errors = _per_iteration_errors(problem, run, reference, diag_systems)
    final_error = relative_error(run.global_field, reference)

    tag = f"run_{backend_kind}"
    write_csv(
        _out(cfg, f"{tag}_history.csv"),
        ["iteration", "trace_change", "rel_error"],
        [(t + 1, run.state.error_history[t], rel_errors[t]) for t in range(run.state.t)],
    )
    write_csv(
        _out(cfg, f"{tag}_timing.csv"),
        ["iteration", "seconds"],
        [(t + 1, s) for t, s in enumerate(run.step_seconds)],
    )
    np.save(_out(cfg, f"{tag}_field.npy"), run.global_field)
    write_plot_manifest(
        _out(cfg, f"{tag}_history.plot.txt"),
        title="relative error per iteration", xlabel="iteration", ylabel="relative error",
        series=[(f"{tag}_history.csv", "iteration", "rel_error", backend_kind)], logy=True,
    )
    return RunResult(run=run, rel_errors=rel_errors, final_error=final_error)


# ---------------------------------------------------------------------------
# Spectra
# ---------------------------------------------------------------------------

def probed_operator_matrix(problem: Problem, which: str, m: int,
                           systems: list[LocalSystem] | None = None) -> np.ndarray:
    """Dense matrix of a local map in the rescaled (weighted) coordinates.

    The domain basis vectors are e_j / sqrt(w_j); rows are rescaled by the
    square roots of the codomain weights, so a plain SVD of the result gives
    the singular values of the operator between the weighted spaces.
    """
    geometry, quad, grid = problem.geometry, problem.quad, problem.grid
    systems = systems or make_systems(problem, method="direct")
    sys = systems[m - 1]
    w_dom = trace_weights("inflow", quad)

    if which == "S":
        n_out = sys.n_nodes * quad.n
        w_cod = interior_weight_matrix(sys.n_nodes, grid.dx, quad).reshape(-1)

        def apply(vec):
            phi = BoundaryTrace(owner=m, kind="inflow", values=vec)
            return sys.solve_vector(sys.rhs_from_trace(phi))
    elif which == "Ss":
        ns = geometry.n_interior(m)
        n_out = ns * quad.n
        w_cod = interior_weight_matrix(ns, grid.dx, quad).reshape(-1)

        def apply(vec):
            phi = BoundaryTrace(owner=m, kind="inflow", values=vec)
            u = sys.solve_vector(sys.rhs_from_trace(phi)).reshape(sys.n_nodes, quad.n)
            return restrict_interior(u, geometry, m).reshape(-1)
    elif which == "P":
        h = quad.half
        parts_w = []
        if geometry.has_prev(m):
            parts_w.append(trace_weights("to_prev", quad))
        if geometry.has_next(m):
            parts_w.append(trace_weights("to_next", quad))
        if not parts_w:
            raise ConfigError("a single subdomain has no exchange cross-sections")
        w_cod = np.concatenate(parts_w)
        n_out = w_cod.size

        def apply(vec):
            phi = BoundaryTrace(owner=m, kind="inflow", values=vec)
            down, up = apply_P(sys, geometry, m, phi)
            parts = []
            if down is not None:
                parts.append(down.values)
            if up is not None:
                parts.append(up.values)
            return np.concatenate(parts)
    else:
        raise ConfigError(f"unknown map selector {which!r}, expected S, Ss, or P")

    if n_out > SPECTRUM_DIMENSION_CAP:
        raise ConfigError(
            f"probed matrix dimension {n_out} exceeds the cap {SPECTRUM_DIMENSION_CAP}; "
            f"use a coarser grid or a smaller subdomain"
        )
    plain = probe_matrix(apply, quad.n, n_out)
    return np.sqrt(w_cod)[:, None] * plain / np.sqrt(w_dom)[None, :]


def operator_singular_values(problem: Problem, which: str, m: int,
                             systems: list[LocalSystem] | None = None) -> np.ndarray:
    return np.linalg.svd(probed_operator_matrix(problem, which, m, systems),
                         compute_uv=False)


def cmd_spectrum(cfg: ExperimentConfig, which: str, m: int) -> np.ndarray:
    """Write the normalized singular values sigma_i / sigma_1 of a local map."""
    problem = build_problem(cfg)
    if not (1 <= m <= cfg.m_count):
        raise ConfigError(f"subdomain {m} out of range 1..{cfg.m_count}")
    sv = operator_singular_values(problem, which, m)
    normalized = sv / sv[0] if sv[0] > 0 else sv
    name = f"spectrum_{which}_{m}.csv"
    write_csv(_out(cfg, name), ["index", "sigma_normalized"],
              [(i + 1, s) for i, s in enumerate(normalized)])
    write_plot_manifest(
        _out(cfg, f"spectrum_{which}_{m}.plot.txt"),
        title=f"normalized singular values of {which} on subdomain {m}",
        xlabel="index", ylabel="sigma / sigma_1",
        series=[(name, "index", "sigma_normalized", which)], logy=True,
    )
    return normalized


# ---------------------------------------------------------------------------
# Rank sweep
# ---------------------------------------------------------------------------

SWEEP_ITERATIONS = 50


def cmd_rank_sweep(cfg: ExperimentConfig, ranks: list[int]) -> list[tuple[int, float]]:
    """Offline build + fixed-iteration online run per rank, vs the reference."""
    problem = build_problem(cfg)
    left, right = boundary_values(problem.quad)
    systems = make_systems(problem, method="direct")
    reference = get_reference(problem)
    results = []
    timing = []
    for r in ranks:
        if r + cfg.oversample > cfg.n_v:
            raise ConfigError(f"rank {r} + oversample {cfg.oversample} exceeds n_v {cfg.n_v}")
        t0 = time.perf_counter()
        maps = build_maps(problem, r, cfg.oversample, cfg.seed, systems=systems)
        offline_s = time.perf_counter() - t0
        backend = LowRankBackend(maps, problem.geometry, problem.quad,
                                 expected_fingerprint=problem.fingerprint)
        t0 = time.perf_counter()
        run = run_schwarz(
            backend, systems, problem.geometry, problem.grid, problem.quad,
            left, right, tau=1e-300, max_iters=SWEEP_ITERATIONS,
        )
        online_s = time.perf_counter() - t0
        err = relative_error(run.global_field, reference)
        results.append((r, err))
        timing.append((r, offline_s, online_s))

    write_csv(_out(cfg, "rank_sweep.csv"), ["rank", "rel_error"], results)
    write_csv(_out(cfg, "rank_sweep_timing.csv"),
              ["rank", "offline_seconds", "online_seconds"], timing)
    write_plot_manifest(
        _out(cfg, "rank_sweep.plot.txt"),
        title="relative error vs rank", xlabel="rank", ylabel="relative error",
        series=[("rank_sweep.csv", "rank", "rel_error", "low-rank")], logy=True,
    )
    return results


# ---------------------------------------------------------------------------
# Homogenization check
# ---------------------------------------------------------------------------

def _global_velocity_average(problem: Problem) -> np.ndarray:
    u = monolithic_direct_field(problem)
    return u @ problem.quad.weights


def cmd_homog_check(cfg: ExperimentConfig, deltas: list[float]) -> list[tuple[float, float]]:
    """Velocity-averaged gap between oscillatory and homogenized solves per delta."""
    for d in deltas:
        if d <= 0:
            raise ConfigError(f"delta must be positive, got {d}")
        if cfg.n_cells * d < 4:
            raise ConfigError(
                f"delta {d} is not resolvable on {cfg.n_cells} cells "
                f"(fewer than 4 nodes per period)"
            )
    import dataclasses as _dc

    hom_cfg = _dc.replace(cfg, media="homogenized", sigma_table=None)
    hom_avg = _global_velocity_average(build_problem(hom_cfg))
    denom = float(np.linalg.norm(hom_avg))
    rows = []
    for d in deltas:
        osc_cfg = _dc.replace(cfg, media="oscillatory", delta=d, sigma_table=None)
        osc_avg = _global_velocity_average(build_problem(osc_cfg))
        rows.append((d, float(np.linalg.norm(osc_avg - hom_avg)) / denom))
    write_csv(_out(cfg, "homog_check.csv"), ["delta", "rel_diff"], rows)
    return rows


# ---------------------------------------------------------------------------
# Flux diagnostics
# ---------------------------------------------------------------------------

def flux_constancy_deviation(problem: Problem) -> float:
    """Max relative deviation of the net flux across the converged global field."""
    u = monolithic_direct_field(problem)
    j = flux_profile(u, problem.quad)
    return float(np.max(np.abs(j - j[0])) / abs(j[0]))
