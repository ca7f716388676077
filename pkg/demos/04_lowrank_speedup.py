"""Offline compression plus online low-rank iteration versus full solves.

Builds the compressed local maps once, runs the fixed-iteration online
stage, and compares accuracy and per-iteration cost against the full-solve
iteration with the production GMRES solver.
"""

import time

import numpy as np

from rteschwarz import ExperimentConfig, build_problem, relative_error
from rteschwarz.experiments import (
    boundary_values,
    build_maps,
    compute_reference,
    make_systems,
)
from rteschwarz.schwarz import FullSolveBackend, LowRankBackend, run_schwarz

cfg = ExperimentConfig(epsilon=1 / 81, delta=1 / 81, rank=6)
prob = build_problem(cfg)
direct_systems = make_systems(prob, "direct")
left, right = boundary_values(prob.quad)

print("computing the reference solution...")
reference = compute_reference(prob).global_field

t0 = time.perf_counter()
maps = build_maps(prob, cfg.rank, cfg.oversample, cfg.seed, systems=direct_systems)
offline_s = time.perf_counter() - t0
print("offline stage: %d maps of rank %d in %.2f s" % (len(maps), cfg.rank, offline_s))

backend = LowRankBackend(maps, prob.geometry, prob.quad)
t0 = time.perf_counter()
run_lr = run_schwarz(backend, direct_systems, prob.geometry, prob.grid, prob.quad,
                     left, right, tau=1e-300, max_iters=50)
online_s = time.perf_counter() - t0
err = relative_error(run_lr.global_field, reference)
per_iter_lr = float(np.mean(run_lr.step_seconds))
print("online stage: 50 iterations in %.3f s (%.1f us per iteration), error %.4f"
      % (online_s, 1e6 * per_iter_lr, err))

print("timing the full-solve iteration (GMRES local solves)...")
gmres_systems = make_systems(prob, "gmres")
run_full = run_schwarz(FullSolveBackend(gmres_systems, prob.geometry), gmres_systems,
                       prob.geometry, prob.grid, prob.quad, left, right,
                       tau=1e-300, max_iters=5)
per_iter_full = float(np.mean(run_full.step_seconds))
print("full-solve iteration: %.3f s per iteration" % per_iter_full)
print("online speedup per iteration: %.0fx" % (per_iter_full / per_iter_lr))
