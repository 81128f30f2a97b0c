"""Outer adaptive loop: indicator accumulation, fixed-fraction directional
marking in space and time, coarsening, and the solve-estimate-mark-refine
cycle with per-loop diagnostics."""

import math
import time
from dataclasses import dataclass

import numpy as np

from . import estimator as est_mod
from . import problem as prob_mod
from . import solver
from .dofs import DofHandler


@dataclass
class MarkingConfig:
    theta_space_ref: float = 0.2
    theta_space_co: float = 0.0
    theta_time_ref: float = 0.0
    theta_time_co: float = 0.0
    max_loops: int = 1
    tol: float = None

    def __post_init__(self):
        for name in ("theta_space_ref", "theta_space_co",
                     "theta_time_ref", "theta_time_co"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.theta_space_ref + self.theta_space_co > 1.0:
            raise ValueError("spatial refine + coarsen fractions exceed 1")
        if self.theta_time_ref + self.theta_time_co > 1.0:
            raise ValueError("temporal refine + coarsen fractions exceed 1")
        if self.max_loops < 1:
            raise ValueError("max_loops must be at least 1")


@dataclass
class LoopRecord:
    loop: int
    report: prob_mod.DiagnosticReport
    wall_time: float


def accumulate(indicators):
    """Slab-summed per-cell directional values and cell-summed slab values."""
    return indicators.cell_totals(), indicators.eta_tau_slab


def _ranked(values, ids):
    """Indices ordered by decreasing |value|, ties broken by id ascending."""
    return np.lexsort((np.asarray(ids), -np.abs(np.asarray(values))))


def mark(cell_vals, slab_vals, cell_ids, config, mode="aniso", loop=0):
    """Fixed-fraction marking.

    Returns (flags: dict cell id -> set of mesh flags, slab bisection marks,
    slab merge indices).
    """
    cell_vals = np.asarray(cell_vals)
    C = len(cell_vals)
    flags = {}

    def flag(pos, name):
        cid = cell_ids[pos]
        flags.setdefault(cid, set()).add(name)

    if mode == "uniform":
        for pos in range(C):
            flag(pos, "refine_x")
            flag(pos, "refine_y")
    elif mode == "iso":
        k = math.ceil(config.theta_space_ref * C)
        for pos in _ranked(cell_vals[:, 0] + cell_vals[:, 1], cell_ids)[:k]:
            flag(pos, "refine_x")
            flag(pos, "refine_y")
    elif mode == "aniso":
        k = math.ceil(config.theta_space_ref * C)
        for i, name in ((0, "refine_x"), (1, "refine_y")):
            for pos in _ranked(cell_vals[:, i], cell_ids)[:k]:
                flag(pos, name)
    else:
        raise ValueError(f"unknown refinement mode {mode!r}")

    if mode != "uniform":
        kco = math.floor(config.theta_space_co * C)
        if kco:
            size = np.abs(cell_vals[:, 0]) + np.abs(cell_vals[:, 1])
            order = np.lexsort((np.asarray(cell_ids), size))
            taken = 0
            for pos in order:
                if taken == kco:
                    break
                if cell_ids[pos] in flags:
                    continue
                flag(pos, "coarsen")
                taken += 1

    slab_vals = np.asarray(slab_vals)
    N = len(slab_vals)
    time_marks, time_merges = set(), []
    if N:
        if mode == "uniform":
            time_marks = set(range(N))
        else:
            kt = math.ceil(config.theta_time_ref * N)
            if kt:
                order = np.lexsort((np.arange(N), -np.abs(slab_vals)))
                time_marks = set(int(n) for n in order[:kt])
            ktc = math.floor(config.theta_time_co * N)
            if ktc:
                order = np.lexsort((np.arange(N), np.abs(slab_vals)))
                small = set(int(n) for n in order[:ktc]) - time_marks
                for n in sorted(small):
                    if n + 1 in small:
                        time_merges.append(n)
                        small.discard(n + 1)
    return flags, time_marks, time_merges


def diagnostics(problem, mesh_obj, partition, u_field, indicators, cache,
                r, measure_layer=False):
    """Fill a DiagnosticReport from one loop's solution and indicators."""
    ind = indicators
    hp = u_field.handler
    rep = prob_mod.DiagnosticReport(
        eta_tau=ind.eta_tau, eta_hx=ind.eta_hx, eta_hy=ind.eta_hy,
        eta_h=ind.eta_h, eta_hE=ind.eta_hE,
        ar_max=float(mesh_obj.aspect_ratios().max()),
        N_space=hp.n_dofs,
        N_time=1 if problem.stationary else partition.n_slabs)
    rep.N_tot = rep.N_space if problem.stationary \
        else rep.N_time * (r + 1) * rep.N_space
    goal = problem.goal
    if goal.variant == "l2l2" and problem.exact is not None:
        rep.error = solver.space_time_error_norm(cache, u_field, problem)
    elif goal.reference is not None:
        rep.error = goal.reference - prob_mod.goal_value(
            goal, u_field, problem, cache)
    if rep.error:
        rep.I_eff, rep.I_eff_a = est_mod.effectivity(rep)
    vals = np.concatenate([c.ravel() for c in u_field.coeffs])
    rep.overshoot, rep.undershoot = prob_mod.over_undershoot(vals)
    if measure_layer:
        pe = solver.PointEvaluator(mesh_obj, hp)
        final = u_field.final_value()
        rep.y_layer = prob_mod.layer_width(lambda pts: pe(final, pts))
    return rep


def dwr_loop(problem, mesh_obj, partition, config, mode="aniso",
             p=1, r=0, delta0=0.1, measure_layer=False, callback=None):
    """Solve / estimate / mark / refine until max_loops or tolerance.

    Returns the list of LoopRecord; the mesh is refined in place and the
    final partition is available on the last callback invocation.
    """
    records = []
    for loop in range(config.max_loops):
        t0 = time.perf_counter()
        hp = DofHandler(mesh_obj, p)
        hq = DofHandler(mesh_obj, 2 * p)
        cache = solver.SpaceCache(mesh_obj, problem, p, delta0)
        u = solver.solve_primal(problem, mesh_obj, partition, p=p, r=r,
                                delta0=delta0, cache=cache, handler=hp)
        z = solver.solve_adjoint(problem, mesh_obj, u.partition, u,
                                 problem.goal, p=p, r=r, delta0=delta0,
                                 cache=cache, handler_q=hq)
        ind = est_mod.Estimator(problem, u, z, cache).compute()
        rep = diagnostics(problem, mesh_obj, partition, u, ind, cache, r,
                          measure_layer=measure_layer)
        records.append(LoopRecord(loop, rep, time.perf_counter() - t0))
        if callback is not None:
            callback(loop=loop, mesh=mesh_obj, partition=partition,
                     u=u, z=z, indicators=ind, report=rep)
        done = loop == config.max_loops - 1
        if config.tol is not None and \
                abs(ind.eta_tau + ind.eta_hx + ind.eta_hy) <= config.tol:
            done = True
        if done:
            break
        cell_vals, slab_vals = accumulate(ind)
        flags, tmarks, tmerges = mark(cell_vals, slab_vals, ind.cell_ids,
                                      config, mode=mode, loop=loop)
        mesh_obj.refine(flags)
        if not problem.stationary and (tmarks or tmerges):
            partition = partition.bisect(tmarks, tmerges)
    return records
