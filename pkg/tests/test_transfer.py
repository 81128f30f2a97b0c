import numpy as np

from adaptcdr import elements, mesh, transfer
from adaptcdr.dofs import DofHandler
from adaptcdr.mesh import PatchDescriptor


def q2_field(fn):
    e = elements.make_element(2, 2)
    return transfer.LocalField(e, fn(e.nodes[:, 0], e.nodes[:, 1]))


def mixed_fourth(v):
    """Constant d^4 v / dx^2 dy^2 of a Q2 reference field."""
    lx = v.element.lag[0].eval_deriv(np.array([0.5]), 2)[0]
    ly = v.element.lag[1].eval_deriv(np.array([0.5]), 2)[0]
    c = v.coefficients.reshape(3, 3)
    return float(ly @ c @ lx)


RNG = np.random.default_rng(42)
PTS = RNG.random((25, 2))


def test_restrict_iso_x_squared():
    v = q2_field(lambda x, y: x ** 2)
    r = transfer.restrict_iso(v)
    np.testing.assert_allclose(r(PTS), PTS[:, 0], atol=1e-13)


def test_restrict_iso_x2y2():
    v = q2_field(lambda x, y: x ** 2 * y ** 2)
    r = transfer.restrict_iso(v)
    np.testing.assert_allclose(r(PTS), PTS[:, 0] * PTS[:, 1], atol=1e-13)


def test_restrict_dir_x2y2():
    v = q2_field(lambda x, y: x ** 2 * y ** 2)
    r1 = transfer.restrict_dir(1, v)
    r2 = transfer.restrict_dir(2, v)
    np.testing.assert_allclose(r1(PTS), PTS[:, 0] ** 2 * PTS[:, 1], atol=1e-13)
    np.testing.assert_allclose(r2(PTS), PTS[:, 0] * PTS[:, 1] ** 2, atol=1e-13)


def test_remainder_x2y2():
    v = q2_field(lambda x, y: x ** 2 * y ** 2)
    E = transfer.remainder(v)
    x, y = PTS[:, 0], PTS[:, 1]
    np.testing.assert_allclose(E(PTS), x * y * (1 - x) * (1 - y), atol=1e-13)
    np.testing.assert_allclose(E(np.array([[0.5, 0.5]]))[0], 1.0 / 16.0)


def test_remainder_closed_form_random_fields():
    e = elements.make_element(2, 2)
    x, y = PTS[:, 0], PTS[:, 1]
    bubble = x * y * (1 - x) * (1 - y)
    for _ in range(200):
        v = transfer.LocalField(e, RNG.standard_normal(9))
        closed = 0.25 * mixed_fourth(v) * bubble
        np.testing.assert_allclose(transfer.remainder(v)(PTS), closed,
                                   atol=1e-12)


def test_splitting_identity_random_fields():
    e = elements.make_element(2, 2)
    for _ in range(200):
        v = transfer.LocalField(e, RNG.standard_normal(9))
        lhs = (v(PTS) + transfer.restrict_iso(v)(PTS)
               - transfer.restrict_dir(1, v)(PTS)
               - transfer.restrict_dir(2, v)(PTS)
               - transfer.remainder(v)(PTS))
        np.testing.assert_allclose(lhs, 0.0, atol=1e-13)


def test_remainder_bound_on_random_cells():
    # pulled back to a h1 x h2 cell the physical mixed fourth derivative is
    # d4_ref / (h1^2 h2^2); the bound (1/16) sup|d4_phys| h1^2 h2^2 must hold
    # exactly (no tolerance)
    e = elements.make_element(2, 2)
    grid = elements.gauss_rule(12).points
    for _ in range(100):
        v = transfer.LocalField(e, RNG.standard_normal(9))
        h1, h2 = RNG.uniform(0.01, 2.0, size=2)
        emax = np.abs(transfer.remainder(v)(grid)).max()
        bound = (1.0 / 16.0) * abs(mixed_fourth(v) / (h1 ** 2 * h2 ** 2)) \
            * h1 ** 2 * h2 ** 2
        assert emax <= bound + 1e-15 * abs(bound)


def test_remainder_vanishes_without_mixed_term():
    # any field with zero mixed fourth derivative has zero remainder
    v = q2_field(lambda x, y: 1 + x + y ** 2 + x ** 2 * y + 3 * x * y)
    np.testing.assert_allclose(transfer.remainder(v)(PTS), 0.0, atol=1e-12)


def child_lattice_values(fn, p):
    ep = elements.make_element(p, p)
    offsets = np.array([(0, 0), (1, 0), (1, 1), (0, 1)], dtype=float)
    return [fn(*(0.5 * (ep.nodes + off)).T) for off in offsets]


def test_patch_interpolate_reproduces_q1():
    desc = PatchDescriptor("iso", (0, 1, 2, 3), 0)
    patch = transfer.PatchField(desc, child_lattice_values(
        lambda x, y: 1 + 2 * x - 3 * y, 1))
    rec = transfer.patch_interpolate(patch)
    np.testing.assert_allclose(
        rec(PTS), 1 + 2 * PTS[:, 0] - 3 * PTS[:, 1], atol=1e-12)


def test_patch_interpolate_x2y2_lattice():
    desc = PatchDescriptor("iso", (0, 1, 2, 3), 0)
    patch = transfer.PatchField(desc, child_lattice_values(
        lambda x, y: x ** 2 * y ** 2, 1))
    rec = transfer.patch_interpolate(patch)
    np.testing.assert_allclose(rec(PTS), PTS[:, 0] ** 2 * PTS[:, 1] ** 2,
                               atol=1e-12)
    r1 = transfer.patch_interpolate_dir(1, patch)
    np.testing.assert_allclose(r1(PTS), PTS[:, 0] ** 2 * PTS[:, 1],
                               atol=1e-12)


def test_directional_splitting_on_patch_data():
    # (I - R_1) I v + (I - R_2) I v - E I v = I v - R I v
    desc = PatchDescriptor("iso", (0, 1, 2, 3), 0)
    patch = transfer.PatchField(desc, child_lattice_values(
        lambda x, y: np.sin(x) * np.cos(2 * y), 1))
    v = transfer.patch_interpolate(patch)
    lhs = ((v(PTS) - transfer.restrict_dir(1, v)(PTS))
           + (v(PTS) - transfer.restrict_dir(2, v)(PTS))
           - transfer.remainder(v)(PTS))
    rhs = v(PTS) - transfer.restrict_iso(v)(PTS)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_recovery_operator_reproduces_global_linears():
    m = mesh.build_rect_mesh(((0.0, 1.0), (0.0, 1.0)), 4, 4)
    m.refine({0: {"refine_x", "refine_y"}, 5: {"refine_x"}})
    hp = DofHandler(m, 1)
    hq = DofHandler(m, 2)
    R = transfer.recovery_operator(m, hp, hq)
    vals = 1 + 0.3 * hp.positions[:, 0] - 0.8 * hp.positions[:, 1]
    rec = (R @ vals).reshape(len(m.leaves()), hq.elem.ndof)
    # recovered per-cell Q2 coefficients must equal the linear itself
    for k, leaf in enumerate(m.leaves()):
        pts = hq.positions[hq.cell_dofs[k]]
        np.testing.assert_allclose(
            rec[k], 1 + 0.3 * pts[:, 0] - 0.8 * pts[:, 1], atol=1e-10)
