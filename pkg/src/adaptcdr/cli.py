"""Batch front-end: run configuration parsing, benchmark execution with CSV
and VTK artifacts, and cross-run efficiency comparison."""

import argparse
import math
import os
import sys

import numpy as np

from . import adapt, mesh as mesh_mod, problem as prob_mod, solver


RESULT_COLUMNS = ["loop", "N_tot", "N_space", "N_time", "error", "EOC",
                  "eta_hx", "eta_hy", "eta_h", "eta_tau", "eta_tauh",
                  "Ieff_a", "ar_max"]

_BENCHMARKS = ("interior_layer", "hemker_stationary", "hemker_quadratic",
               "custom")
_MODES = {"anisotropic": "aniso", "isotropic": "iso", "uniform": "uniform",
          "aniso": "aniso", "iso": "iso"}


class ConfigError(ValueError):
    pass


class RunConfig:
    """Validated run description with defaults applied."""

    defaults = dict(
        benchmark="interior_layer",
        epsilon=1e-4,
        delta0=0.1,
        p=1,
        r=0,
        mode="anisotropic",
        theta_space_ref=0.2,
        theta_space_co=0.0,
        theta_time_ref=0.0,
        theta_time_co=0.0,
        max_loops=1,
        tolerance=None,
        output_dir="out",
        seed_mesh="structured",
        seed_nx=16,
        seed_ny=16,
        slabs=16,
        vtk=False,
        csv=True,
        indicators=False,
    )

    def __init__(self, **kw):
        for key, val in self.defaults.items():
            setattr(self, key, val)
        for key, val in kw.items():
            if key not in self.defaults:
                raise ConfigError(f"unknown key {key!r}")
            setattr(self, key, val)
        self.validate()

    def validate(self):
        if self.benchmark not in _BENCHMARKS:
            raise ConfigError(f"unknown benchmark {self.benchmark!r}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon={self.epsilon} must be positive")
        if self.mode not in _MODES:
            raise ConfigError(f"unknown refinement mode {self.mode!r}")
        for name in ("theta_space_ref", "theta_space_co",
                     "theta_time_ref", "theta_time_co"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name}={v} outside [0, 1]")
        if self.max_loops < 1:
            raise ConfigError("max_loops must be at least 1")
        if self.seed_mesh not in ("structured", "unstructured"):
            raise ConfigError(f"unknown seed_mesh {self.seed_mesh!r}")
        if self.p < 1 or self.r < 0:
            raise ConfigError("need p >= 1 and r >= 0")
        if self.seed_nx < 1 or self.seed_ny < 1 or self.slabs < 1:
            raise ConfigError("seed_nx, seed_ny, slabs must be positive")


def _parse_value(key, raw, lineno):
    proto = RunConfig.defaults[key]
    raw = raw.strip()
    if key == "tolerance":
        if raw.lower() in ("", "none"):
            return None
        proto = 0.0
    if isinstance(proto, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"line {lineno}: bad boolean {raw!r} for {key}")
    if isinstance(proto, int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad integer {raw!r} for {key}")
    if isinstance(proto, float):
        try:
            if "/" in raw:
                num, den = raw.split("/")
                return float(num) / float(den)
            return float(raw)
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"line {lineno}: bad number {raw!r} for {key}")
    return raw


def parse_config(text):
    """key=value per line; # starts a comment; fractions like 2/3 allowed."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in RunConfig.defaults:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw, lineno)
    try:
        return RunConfig(**values)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc))


# -- run execution -------------------------------------------------------------


def _build_case(config):
    """Problem, seed mesh and time partition for a benchmark config."""
    bm = config.benchmark
    if bm == "interior_layer":
        problem = prob_mod.interior_layer_problem(config.epsilon)
        structured = config.seed_mesh == "structured"
        m = mesh_mod.build_rect_mesh(((0.0, 1.0), (0.0, 1.0)),
                                     config.seed_nx, config.seed_ny,
                                     structured=structured)
        part = solver.TimePartition.uniform(problem.T, config.slabs)
        return problem, m, part
    if bm == "hemker_stationary":
        problem = prob_mod.hemker_problem(stationary=True,
                                          epsilon=config.epsilon)
        return problem, mesh_mod.build_hemker_mesh("circle"), None
    if bm == "hemker_quadratic":
        problem = prob_mod.hemker_problem(stationary=False, obstacle="square",
                                          epsilon=config.epsilon)
        m = mesh_mod.build_hemker_mesh("square")
        part = solver.TimePartition.uniform(problem.T, config.slabs)
        return problem, m, part
    raise ConfigError("custom benchmarks must be driven through the API")


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.16e}"


def _result_row(loop, rep, eoc, extra_cols):
    row = [loop, rep.N_tot, rep.N_space, rep.N_time, rep.error, eoc,
           rep.eta_hx, rep.eta_hy, rep.eta_h, rep.eta_tau, rep.eta_tauh,
           rep.I_eff_a, rep.ar_max]
    for col in extra_cols:
        row.append(getattr(rep, col))
    return ",".join(_fmt(v) for v in row)


def run(config, out_dir=None):
    """Execute one configured run; returns the list of per-loop records."""
    out = out_dir or config.output_dir
    os.makedirs(out, exist_ok=True)
    problem, m, part = _build_case(config)
    mode = _MODES[config.mode]
    mark_cfg = adapt.MarkingConfig(
        theta_space_ref=config.theta_space_ref,
        theta_space_co=config.theta_space_co,
        theta_time_ref=config.theta_time_ref,
        theta_time_co=config.theta_time_co,
        max_loops=config.max_loops,
        tol=config.tolerance)
    extra_cols = ["y_layer"] if config.benchmark == "hemker_stationary" else []
    rows = []
    errors = []
    ntots = []
    state = {"partition": part}

    def callback(loop, mesh=None, partition=None, u=None, indicators=None,
                 report=None, **kw):
        state["partition"] = partition
        eoc = None
        if report.error is not None:
            errors.append(abs(report.error))
            ntots.append(report.N_tot)
            if len(errors) > 1 and errors[-1] > 0 and errors[-2] > 0 \
                    and ntots[-1] != ntots[-2]:
                eoc = math.log(errors[-2] / errors[-1]) \
                    / math.log(ntots[-1] / ntots[-2])
        rows.append(_result_row(loop, report, eoc, extra_cols))
        if config.indicators:
            indicators.write_csv(os.path.join(out, f"indicators_{loop:03d}.csv"))
        if config.vtk:
            cell_vals = indicators.cell_totals()
            mesh_mod.write_vtk(
                mesh, os.path.join(out, f"mesh_{loop:03d}.vtk"),
                extra_cell_data={
                    "eta_hx": cell_vals[:, 0],
                    "eta_hy": cell_vals[:, 1],
                    "eta_tau": indicators.eta_tau_cell.sum(axis=0),
                })

    records = adapt.dwr_loop(
        problem, m, part, mark_cfg, mode=mode, p=config.p, r=config.r,
        delta0=config.delta0,
        measure_layer=config.benchmark == "hemker_stationary",
        callback=callback)

    if config.csv:
        header = ",".join(RESULT_COLUMNS + extra_cols)
        with open(os.path.join(out, "results.csv"), "w") as fh:
            fh.write(header + "\n")
            fh.write("\n".join(rows) + "\n")
    if config.benchmark == "hemker_quadratic" and state["partition"] is not None:
        final = state["partition"]
        with open(os.path.join(out, "timesteps.csv"), "w") as fh:
            fh.write("slab,t_start,t_end,tau\n")
            for n in range(final.n_slabs):
                t0, t1 = final.boundaries[n], final.boundaries[n + 1]
                fh.write(f"{n},{t0:.16g},{t1:.16g},{t1 - t0:.16g}\n")
    return records


# -- comparison ----------------------------------------------------------------


def _read_results(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ConfigError(f"{path}: empty results file")
    header = lines[0].split(",")
    if "error" not in header or "N_tot" not in header:
        raise ConfigError(f"{path}: missing error/N_tot columns")
    ie, iN = header.index("error"), header.index("N_tot")
    err, ntot = [], []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(header):
            raise ConfigError(f"{path}: malformed row {ln!r}")
        if parts[ie] == "":
            continue
        err.append(abs(float(parts[ie])))
        ntot.append(float(parts[iN]))
    if not err:
        raise ConfigError(f"{path}: no rows with an error value")
    return np.array(ntot), np.array(err)


def _dofs_at_error(ntot, err, level):
    """Log-log interpolated N_tot where the run first reaches `level`."""
    for k in range(len(err)):
        if err[k] <= level:
            if k == 0 or err[k - 1] <= err[k]:
                return ntot[k]
            frac = math.log(err[k - 1] / level) / math.log(err[k - 1] / err[k])
            return ntot[k - 1] * (ntot[k] / ntot[k - 1]) ** frac
    return None


def compare_runs(paths, out=None):
    """Joined error-vs-N_tot table plus DoF ratios at the matched error."""
    if out is None:
        out = sys.stdout
    runs = [(p, *_read_results(p)) for p in paths]
    if len(runs) < 2:
        raise ConfigError("need at least two results files to compare")
    out.write("run,loop_rows,N_tot_final,error_final\n")
    for path, ntot, err in runs:
        out.write(f"{path},{len(err)},{int(ntot[-1])},{err[-1]:.6e}\n")
    # matched level: the worst final error any run achieved
    level = max(err[-1] for _, _, err in runs)
    ref_path, ref_n, ref_e = runs[0]
    ref_dofs = _dofs_at_error(ref_n, ref_e, level)
    out.write(f"matched_error,{level:.6e}\n")
    out.write("run,N_tot_at_matched,dof_ratio_first_over_this\n")
    ratios = {}
    for path, ntot, err in runs:
        dofs = _dofs_at_error(ntot, err, level)
        ratio = None if (dofs is None or ref_dofs is None) else ref_dofs / dofs
        ratios[path] = ratio
        out.write(f"{path},{'' if dofs is None else int(round(dofs))},"
                  f"{'' if ratio is None else f'{ratio:.4f}'}\n")
    return ratios


# -- entry point ---------------------------------------------------------------


def _apply_threads():
    threads = os.environ.get("THREADS", "1")
    try:
        n = max(1, int(threads))
    except ValueError:
        n = 1
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, str(n))
    return n


def main(argv=None):
    _apply_threads()
    parser = argparse.ArgumentParser(prog="adaptcdr")
    sub = parser.add_subparsers(dest="command", required=True)
    ps = sub.add_parser("solve", help="run a configured benchmark")
    ps.add_argument("config")
    ps.add_argument("--out", default=None)
    ps.add_argument("--loops", type=int, default=None)
    ps.add_argument("--mode", choices=("aniso", "iso", "uniform"),
                    default=None)
    pc = sub.add_parser("compare", help="compare results.csv files")
    pc.add_argument("csvs", nargs="+")
    args = parser.parse_args(argv)

    try:
        if args.command == "solve":
            with open(args.config) as fh:
                config = parse_config(fh.read())
            if args.loops is not None:
                config.max_loops = args.loops
            if args.mode is not None:
                config.mode = args.mode
            config.validate()
            run(config, out_dir=args.out)
            return 0
        compare_runs(args.csvs)
        return 0
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:   # solver failure
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
