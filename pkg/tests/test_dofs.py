import numpy as np

from adaptcdr import mesh
from adaptcdr.dofs import DofHandler


def test_conforming_mesh_no_constraints():
    m = mesh.build_rect_mesh(((0.0, 1.0), (0.0, 1.0)), 3, 3)
    for p in (1, 2):
        h = DofHandler(m, p)
        assert h.constraint_list() == []


def test_dof_counts_structured():
    m = mesh.build_rect_mesh(((0.0, 1.0), (0.0, 1.0)), 4, 4)
    assert DofHandler(m, 1).n_dofs == 25
    # Q2: (2*4+1)^2 on a 4x4 grid
    assert DofHandler(m, 2).n_dofs == 81


def test_hanging_weights_quadratic():
    # one y-split next to an unsplit neighbor: the fine edge node at
    # coarse-edge parameter 1/4 carries quadratic Lagrange weights
    # evaluated at 1/4 on {0, 1/2, 1}: (3/8, 3/4, -1/8)
    m = mesh.build_rect_mesh(((0.0, 2.0), (0.0, 1.0)), 2, 1)
    m.refine({0: {"refine_y"}})
    h = DofHandler(m, 2)
    cons = h.constraint_list()
    assert cons
    expected = sorted([3.0 / 8.0, 3.0 / 4.0, -1.0 / 8.0])
    found = any(len(c.weights) == 3
                and np.allclose(sorted(c.weights), expected, atol=1e-13)
                for c in cons)
    assert found


def test_hanging_constraints_preserve_polynomials():
    # each hanging dof must interpolate any coarse-edge polynomial of the
    # space exactly from its masters
    m = mesh.build_rect_mesh(((0.0, 1.0), (0.0, 1.0)), 2, 2)
    m.refine({0: {"refine_x", "refine_y"}})
    for p in (1, 2):
        h = DofHandler(m, p)

        def poly(x, y):
            return 1.0 + 2.0 * x - 0.7 * y + (x * y if p > 1 else 0.0)

        target = poly(h.positions[:, 0], h.positions[:, 1])
        cons = h.constraint_list()
        assert cons
        for c in cons:
            got = sum(w * target[mstr] for w, mstr in zip(c.weights, c.masters))
            assert abs(got - target[c.dof]) < 1e-12


def test_expand_zero_dirichlet():
    m = mesh.build_rect_mesh(((0.0, 1.0), (0.0, 1.0)), 2, 2)
    h = DofHandler(m, 1)
    full = h.expand(np.ones(h.n_free))
    # boundary dofs are all Dirichlet on this mesh and default to zero
    on_bnd = (np.isclose(h.positions[:, 0], 0) | np.isclose(h.positions[:, 0], 1)
              | np.isclose(h.positions[:, 1], 0) | np.isclose(h.positions[:, 1], 1))
    assert np.all(full[on_bnd] == 0.0)
    assert np.all(full[~on_bnd] == 1.0)
