import numpy as np
import pytest
from scipy.integrate import quad

from adaptcdr import mesh, problem, solver
from adaptcdr.dofs import DofHandler


def test_interior_layer_source_term_sympy():
    # independent symbolic oracle: substitute the exact solution into
    # du/dt - eps lap(u) + b.grad(u) + u and compare against the coded f
    import sympy as sy

    eps = 1e-4
    x, y, t = sy.symbols("x y t")
    width = sy.sqrt(5 * sy.Float(eps))
    u = sy.exp(3 * (t - 1)) / 2 * (1 - sy.tanh((2 * x - y - sy.Rational(1, 2)) / width))
    b = (1 / sy.sqrt(5), 2 / sy.sqrt(5))
    f_sym = (sy.diff(u, t) - eps * (sy.diff(u, x, 2) + sy.diff(u, y, 2))
             + b[0] * sy.diff(u, x) + b[1] * sy.diff(u, y) + u)
    f_num = sy.lambdify((x, y, t), sy.simplify(f_sym), "numpy")

    prob = problem.interior_layer_problem(eps)
    rng = np.random.default_rng(11)
    pts = rng.random((100, 3))
    want = f_num(pts[:, 0], pts[:, 1], pts[:, 2])
    got = prob.f(pts[:, 0], pts[:, 1], pts[:, 2])
    np.testing.assert_allclose(got, want, atol=1e-8, rtol=1e-8)


def test_interior_layer_convection_tangential():
    # the convection is aligned with the layer: b.grad u = 0
    prob = problem.interior_layer_problem(1e-3)
    rng = np.random.default_rng(5)
    pts = rng.random((50, 2))
    h = 1e-6
    dudx = (prob.exact(pts[:, 0] + h, pts[:, 1], 0.7)
            - prob.exact(pts[:, 0] - h, pts[:, 1], 0.7)) / (2 * h)
    dudy = (prob.exact(pts[:, 0], pts[:, 1] + h, 0.7)
            - prob.exact(pts[:, 0], pts[:, 1] - h, 0.7)) / (2 * h)
    np.testing.assert_allclose(prob.b[0] * dudx + prob.b[1] * dudy, 0.0,
                               atol=1e-4)


def test_regularized_dirac_normalization():
    s = 0.5
    w = problem.regularized_dirac((0.0, 0.0), s)
    # radial oracle with adaptive quadrature
    mass, _ = quad(lambda r: 2 * np.pi * r * np.exp(1 - 1 / (1 - (r / s) ** 2)),
                   0.0, s * (1 - 1e-12))
    assert abs(w(0.0, 0.0) * mass - 1.0) < 1e-6
    # total mass of the coded weight is 1 (2D tensor quadrature oracle)
    g = np.linspace(-s, s, 1201)
    X, Y = np.meshgrid(g, g)
    total = w(X, Y).sum() * (g[1] - g[0]) ** 2
    assert abs(total - 1.0) < 1e-3
    assert w(s, 0.0) == 0.0 and w(2 * s, 2 * s) == 0.0


def test_layer_width_synthetic_tanh():
    # profile 0.5(1 + tanh((1.5 - y)/d)) crosses 0.9 and 0.1 at
    # y = 1.5 -/+ d*atanh(0.8); width = 2 d atanh(0.8)
    d = 0.07

    def sample(pts):
        return 0.5 * (1.0 + np.tanh((1.5 - pts[:, 1]) / d))

    got = problem.layer_width(sample, x=4.0, y_range=(0.0, 3.0), n=200000)
    want = 2 * d * np.arctanh(0.8)
    assert abs(got - want) < 1e-4


def test_over_undershoot():
    assert problem.over_undershoot(np.array([0.0, 0.5, 1.0])) == (0.0, 0.0)
    over, under = problem.over_undershoot(np.array([-0.25, 0.3, 1.1]))
    assert over == pytest.approx(0.1)
    assert under == pytest.approx(0.25)


def test_mean_goal_of_one_is_domain_area():
    # Hemker domain (-3,8)x(-3,3) minus the 2x2 square obstacle: area 62
    prob = problem.hemker_problem(stationary=True, obstacle="square")
    m = mesh.build_hemker_mesh("square")
    h = DofHandler(m, 1)
    ones = np.ones(h.n_dofs)
    field = solver.SpaceTimeFunction(h, solver.TimePartition([0.0, 1.0]),
                                     [1.0], [ones[None, :]], initial=ones)
    cache = solver.SpaceCache(m, prob, 1)
    val = problem.goal_value(prob.goal, field, prob, cache)
    assert val == pytest.approx(62.0, rel=1e-12)


def test_l2l2_goal_zero_for_exact_interpolant():
    prob = problem.interior_layer_problem(1e-2)
    # exact-solution values make the error functional the error norm itself,
    # which is zero when u_field matches the exact solution identically
    prob2 = problem.ProblemSpec(
        epsilon=1.0, b=np.array([0.0, 0.0]), alpha=0.0,
        f=lambda x, y, t: 0 * np.asarray(x),
        u0=lambda x, y: 0 * np.asarray(x),
        boundary={"dirichlet": 0.0}, T=1.0,
        exact=lambda x, y, t: 0 * np.asarray(x),
        goal=problem.GoalFunctional("l2l2"))
    m = mesh.build_rect_mesh(((0.0, 1.0), (0.0, 1.0)), 2, 2)
    h = DofHandler(m, 1)
    part = solver.TimePartition.uniform(1.0, 2)
    z = np.zeros(h.n_dofs)
    field = solver.SpaceTimeFunction(h, part, [1.0],
                                     [z[None, :], z[None, :]], initial=z)
    assert problem.goal_value(prob2.goal, field, prob2) == 0.0
    assert prob.goal.variant == "l2l2"


def test_problem_validation():
    with pytest.raises(ValueError):
        problem.ProblemSpec(epsilon=0.0, b=(1, 0), alpha=0.0)
    assert problem.hemker_problem(stationary=True).stationary
    assert not problem.hemker_problem(stationary=False).stationary
