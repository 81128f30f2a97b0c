"""End-to-end acceptance suite.

The expensive adaptive runs are shared across tests through module-scoped
fixtures; every estimator evaluation inside them is also checked for the
exact directional splitting identity.
"""

import numpy as np
import pytest

from adaptcdr import adapt, cli, elements, estimator, mesh, problem, solver, \
    transfer
from adaptcdr.dofs import DofHandler
from adaptcdr.problem import DiagnosticReport


class RunTrace:
    def __init__(self):
        self.reports = []
        self.splitting = []        # (residual, |eta_h|) per loop

    def callback(self, indicators=None, report=None, **kw):
        self.reports.append(report)
        self.splitting.append((indicators.splitting_residual(),
                               abs(indicators.eta_h)))


def adaptive_run(eps, mode, loops, seed=16, slabs=16,
                 theta=(1.0 / 5.0, 1.0 / 100.0, 2.0 / 3.0, 0.0)):
    prob = problem.interior_layer_problem(eps)
    m = mesh.build_rect_mesh(((0.0, 1.0), (0.0, 1.0)), seed, seed)
    part = solver.TimePartition.uniform(prob.T, slabs)
    tr, tc, tt, ttc = theta
    cfg = adapt.MarkingConfig(theta_space_ref=tr, theta_space_co=tc,
                              theta_time_ref=tt if mode != "uniform" else 0.0,
                              theta_time_co=ttc, max_loops=loops)
    trace = RunTrace()
    adapt.dwr_loop(prob, m, part, cfg, mode=mode, p=1, r=0,
                   callback=trace.callback)
    return trace


@pytest.fixture(scope="module")
def aniso_1e4():
    """Criterion-4 configuration: scaled interior layer, 8 loops."""
    return adaptive_run(1e-4, "aniso", 8)


@pytest.fixture(scope="module")
def uniform_1e4():
    return adaptive_run(1e-4, "uniform", 3)


@pytest.fixture(scope="module")
def trio_1e5():
    """Efficiency-ordering runs: sharper layer so the uniform baseline's
    reachable error sits where directional refinement pays off."""
    return {"uniform": adaptive_run(1e-5, "uniform", 4),
            "aniso": adaptive_run(1e-5, "aniso", 6),
            "iso": adaptive_run(1e-5, "iso", 6)}


@pytest.fixture(scope="module")
def hemker_run():
    prob = problem.hemker_problem(stationary=True, epsilon=1e-3)
    m = mesh.build_hemker_mesh("circle")
    cfg = adapt.MarkingConfig(theta_space_ref=1.0 / 5.0, max_loops=12)
    trace = RunTrace()
    adapt.dwr_loop(prob, m, None, cfg, mode="aniso", p=1, r=0,
                   measure_layer=True, callback=trace.callback)
    return trace


# -- 1: exact directional splitting on every estimator evaluation ---------------

def test_a1_splitting_identity(aniso_1e4, uniform_1e4, trio_1e5, hemker_run):
    traces = [aniso_1e4, uniform_1e4, hemker_run] + list(trio_1e5.values())
    for trace in traces:
        for residual, eta_h in trace.splitting:
            assert residual <= 1e-12 * max(eta_h, 1e-30)


# -- 2: remainder closed form and cell-size bound -------------------------------

def test_a2_remainder_closed_form_and_bound():
    rng = np.random.default_rng(123)
    e = elements.make_element(2, 2)
    lxx = e.lag[0].eval_deriv(np.array([0.5]), 2)[0]
    lyy = e.lag[1].eval_deriv(np.array([0.5]), 2)[0]
    pts = rng.random((25, 2))
    bubble = pts[:, 0] * pts[:, 1] * (1 - pts[:, 0]) * (1 - pts[:, 1])
    for _ in range(200):
        v = transfer.LocalField(e, rng.standard_normal(9))
        d4 = float(lyy @ v.coefficients.reshape(3, 3) @ lxx)
        np.testing.assert_allclose(transfer.remainder(v)(pts),
                                   0.25 * d4 * bubble, atol=1e-12)
    grid = elements.gauss_rule(12).points
    for _ in range(100):
        v = transfer.LocalField(e, rng.standard_normal(9))
        d4 = float(lyy @ v.coefficients.reshape(3, 3) @ lxx)
        h1, h2 = rng.uniform(0.01, 2.0, size=2)
        emax = np.abs(transfer.remainder(v)(grid)).max()
        # physical fourth derivative of the pulled-back field is d4/(h1 h2)^2
        bound = (1.0 / 16.0) * abs(d4 / (h1 ** 2 * h2 ** 2)) * h1 ** 2 * h2 ** 2
        assert emax <= bound


# -- 3: Galerkin orthogonality on all three benchmarks --------------------------

def _benchmark_case(name):
    if name == "interior_layer":
        prob = problem.interior_layer_problem(1e-3)
        m = mesh.build_rect_mesh(((0.0, 1.0), (0.0, 1.0)), 6, 6)
        part = solver.TimePartition.uniform(1.0, 3)
    elif name == "hemker_stationary":
        prob = problem.hemker_problem(stationary=True, epsilon=1e-2)
        m = mesh.build_hemker_mesh("circle")
        part = None
    else:
        prob = problem.hemker_problem(stationary=False, obstacle="square",
                                      epsilon=1e-2, T=2.0)
        m = mesh.build_hemker_mesh("square")
        part = solver.TimePartition.uniform(2.0, 2)
    return prob, m, part


@pytest.mark.parametrize("name", ["interior_layer", "hemker_stationary",
                                  "hemker_quadratic"])
def test_a3_galerkin_orthogonality(name):
    rng = np.random.default_rng(99)
    prob, m, part = _benchmark_case(name)
    hp, hq = DofHandler(m, 1), DofHandler(m, 2)
    cache = solver.SpaceCache(m, prob, 1, 0.1)
    u = solver.solve_primal(prob, m, part, cache=cache, handler=hp)
    z = solver.solve_adjoint(prob, m, u.partition, u, prob.goal,
                             cache=cache, handler_q=hq)
    est = estimator.Estimator(prob, u, z, cache)
    part = u.partition

    def field(handler, constrained):
        coeffs = []
        for _ in range(part.n_slabs):
            if constrained:
                coeffs.append(handler.expand(
                    rng.standard_normal(handler.n_free))[None, :])
            else:
                coeffs.append(rng.standard_normal((1, handler.n_dofs)))
        return solver.SpaceTimeFunction(handler, part, [1.0], coeffs,
                                        initial=None)

    scale_p = max(abs(est.primal_residual(field(hp, False))), 1e-3)
    scale_a = max(abs(est.adjoint_residual(field(hq, False))), 1e-3)
    for _ in range(3):
        assert abs(est.primal_residual(field(hp, True))) <= 1e-8 * scale_p
        assert abs(est.adjoint_residual(field(hq, True))) <= 1e-8 * scale_a


# -- 4: scaled interior layer -----------------------------------------------------

def test_a4_interior_layer_adaptivity(aniso_1e4):
    reps = [t for t in aniso_1e4.reports]
    assert len(reps) >= 8
    errs = [abs(r.error) for r in reps]
    assert errs[-1] <= errs[1] / 20.0
    for r in reps[3:]:
        assert 0.2 <= r.I_eff_a <= 2.0
    assert max(r.ar_max for r in reps[:9]) >= 8.0


# -- 5: efficiency ordering -------------------------------------------------------

def first_below(reports, target):
    for r in reports:
        if abs(r.error) <= target:
            return r
    return None


def test_a5_efficiency_ordering(trio_1e5):
    uni = trio_1e5["uniform"].reports
    target = abs(uni[-1].error)
    an = first_below(trio_1e5["aniso"].reports, target)
    iso = first_below(trio_1e5["iso"].reports, target)
    assert an is not None and iso is not None
    assert an.N_tot <= 0.6 * uni[-1].N_tot
    assert an.N_tot <= 0.9 * iso.N_tot


# -- 6: oscillation control at matched spatial DoFs -------------------------------

def test_a6_oscillation_control(aniso_1e4, uniform_1e4):
    uni = uniform_1e4.reports[-1]
    osc_uni = max(uni.overshoot, uni.undershoot)
    # anisotropic loop with the closest spatial DoF count
    an = min(aniso_1e4.reports, key=lambda r: abs(r.N_space - uni.N_space))
    assert 0.5 * uni.N_space <= an.N_space <= 2.0 * uni.N_space
    osc_an = max(an.overshoot, an.undershoot)
    assert osc_an <= 0.2 * osc_uni


# -- 7: stationary flow past an obstacle ------------------------------------------

def test_a7_hemker_layer_width(hemker_run):
    widths = [r.y_layer for r in hemker_run.reports]
    assert all(w is not None for w in widths)
    # once the boundary layer is resolved the width decreases monotonically
    tail = widths[-5:]
    assert all(a > b for a, b in zip(tail, tail[1:]))
    assert abs(tail[-1] - tail[-2]) < 0.05 * tail[-2]


@pytest.mark.slow
def test_a7_hemker_reference_width_slow():
    prob = problem.hemker_problem(stationary=True, epsilon=1e-4)
    m = mesh.build_hemker_mesh("circle")
    cfg = adapt.MarkingConfig(theta_space_ref=1.0 / 5.0, max_loops=16)
    trace = RunTrace()
    adapt.dwr_loop(prob, m, None, cfg, mode="aniso", p=1, r=0,
                   measure_layer=True, callback=trace.callback)
    y = trace.reports[-1].y_layer
    assert abs(y - 0.0723) <= 0.1 * 0.0723


# -- 8: effectivity arithmetic ------------------------------------------------------

def test_a8_effectivity_reproduction():
    rep = DiagnosticReport(error=5.333e-2, eta_hx=6.143e-3, eta_hy=9.954e-3,
                           eta_tau=2.584e-3)
    _, ieff_a = estimator.effectivity(rep)
    assert abs(ieff_a - 0.35) <= 0.005


# -- 9: determinism -----------------------------------------------------------------

def test_a9_determinism(tmp_path):
    cfg_text = ("benchmark=interior_layer\nepsilon=1e-3\nseed_nx=6\n"
                "seed_ny=6\nslabs=4\ntheta_space_ref=1/5\n"
                "theta_time_ref=1/2\nmax_loops=3\nindicators=true\n")
    cfg_path = tmp_path / "det.cfg"
    cfg_path.write_text(cfg_text)
    outs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        assert cli.main(["solve", str(cfg_path), "--out", str(out)]) == 0
        outs.append(out)
    for fname in ("results.csv", "indicators_000.csv", "indicators_002.csv"):
        assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()
