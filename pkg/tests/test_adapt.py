import numpy as np
import pytest

from adaptcdr import adapt, mesh, problem, solver
from adaptcdr.estimator import IndicatorField


def make_indicators(eta_dir, eta_tau_cell=None):
    eta_dir = np.asarray(eta_dir, dtype=float)
    N, C, _ = eta_dir.shape
    if eta_tau_cell is None:
        eta_tau_cell = np.zeros((N, C))
    eta_iso = eta_dir.sum(axis=2)
    eta_rem = np.zeros((N, C))
    return IndicatorField(np.asarray(eta_tau_cell, dtype=float), eta_dir,
                          eta_iso, eta_rem, list(range(C)))


def test_accumulate_single_slab_identity():
    vals = np.array([[[1.0, 2.0], [3.0, -4.0]]])       # 1 slab, 2 cells
    ind = make_indicators(vals, [[0.5, -0.5]])
    cell_vals, slab_vals = adapt.accumulate(ind)
    np.testing.assert_allclose(cell_vals, vals[0])
    np.testing.assert_allclose(slab_vals, [0.0])


def test_accumulate_two_slabs_doubles():
    one = np.array([[1.0, 2.0], [3.0, -4.0]])
    ind = make_indicators([one, one], [[0.5, 0.25], [0.5, 0.25]])
    cell_vals, slab_vals = adapt.accumulate(ind)
    np.testing.assert_allclose(cell_vals, 2 * one)
    np.testing.assert_allclose(slab_vals, [0.75, 0.75])


def test_marking_config_validation():
    with pytest.raises(ValueError):
        adapt.MarkingConfig(theta_space_ref=1.5)
    with pytest.raises(ValueError):
        adapt.MarkingConfig(theta_space_ref=0.7, theta_space_co=0.5)
    with pytest.raises(ValueError):
        adapt.MarkingConfig(max_loops=0)
    adapt.MarkingConfig(theta_space_ref=1.0 / 5.0, theta_time_ref=2.0 / 3.0)


def test_mark_directional_strip():
    # strong direction-1 indicators on a strip, negligible elsewhere:
    # anisotropic marking must flag refine_x exactly on the strip
    C = 10
    vals = np.zeros((C, 2))
    strip = [2, 3, 4]
    vals[strip, 0] = 5.0
    vals[:, 1] = 1e-12
    cfg = adapt.MarkingConfig(theta_space_ref=0.3)
    flags, tmarks, _ = adapt.mark(vals, np.zeros(1), list(range(C)), cfg,
                                  mode="aniso")
    x_marked = sorted(cid for cid, fs in flags.items() if "refine_x" in fs)
    assert x_marked == strip
    assert not tmarks


def test_mark_uniform_flags_everything():
    vals = np.random.default_rng(0).standard_normal((6, 2))
    cfg = adapt.MarkingConfig()
    flags, tmarks, _ = adapt.mark(vals, np.ones(4), list(range(6)), cfg,
                                  mode="uniform")
    assert set(flags) == set(range(6))
    for fs in flags.values():
        assert fs == {"refine_x", "refine_y"}
    assert tmarks == set(range(4))


def test_mark_iso_combines_directions():
    vals = np.array([[3.0, 3.0], [0.1, 0.1], [0.0, 0.0], [0.0, 0.0]])
    cfg = adapt.MarkingConfig(theta_space_ref=0.25)
    flags, _, _ = adapt.mark(vals, np.zeros(1), list(range(4)), cfg,
                             mode="iso")
    assert flags == {0: {"refine_x", "refine_y"}}


def test_mark_time_fraction():
    vals = np.zeros((2, 2))
    slab_vals = np.array([0.1, 5.0, 0.2])
    cfg = adapt.MarkingConfig(theta_time_ref=1.0 / 3.0)
    _, tmarks, _ = adapt.mark(vals, slab_vals, [0, 1], cfg, mode="aniso")
    assert tmarks == {1}


def test_coarsening_skips_refined_cells():
    vals = np.array([[5.0, 0.0], [4.0, 0.0], [1e-8, 0.0], [1e-9, 0.0]])
    cfg = adapt.MarkingConfig(theta_space_ref=0.5, theta_space_co=0.25)
    flags, _, _ = adapt.mark(vals, np.zeros(1), list(range(4)), cfg,
                             mode="aniso")
    assert "coarsen" in flags[3]
    assert "refine_x" in flags[0] and "refine_x" in flags[1]


def test_dwr_loop_single_record():
    prob = problem.interior_layer_problem(1e-2)
    m = mesh.build_rect_mesh(((0.0, 1.0), (0.0, 1.0)), 4, 4)
    part = solver.TimePartition.uniform(1.0, 2)
    cfg = adapt.MarkingConfig(max_loops=1)
    records = adapt.dwr_loop(prob, m, part, cfg)
    assert len(records) == 1
    assert len(m.leaves()) == 16          # no refinement after the last loop
    rep = records[0].report
    assert rep.error > 0
    assert rep.N_space == 25
    assert rep.N_time == 2
    assert rep.eta_tauh == pytest.approx(rep.eta_tau + rep.eta_h)


def test_dwr_loop_refines_and_reports():
    prob = problem.interior_layer_problem(1e-2)
    m = mesh.build_rect_mesh(((0.0, 1.0), (0.0, 1.0)), 4, 4)
    part = solver.TimePartition.uniform(1.0, 2)
    cfg = adapt.MarkingConfig(theta_space_ref=0.2, theta_time_ref=0.5,
                              max_loops=3)
    seen = []
    records = adapt.dwr_loop(prob, m, part, cfg, mode="aniso",
                             callback=lambda **kw: seen.append(kw["loop"]))
    assert seen == [0, 1, 2]
    assert len(records) == 3
    errs = [r.report.error for r in records]
    assert errs[-1] < errs[0]
    assert records[-1].report.N_space > records[0].report.N_space
