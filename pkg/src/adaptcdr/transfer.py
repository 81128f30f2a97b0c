"""Interpolation and restriction calculus between Q_p and Q_2p spaces.

Isotropic and directional restrictions, patch-wise higher-order recovery,
and the anisotropic remainder operator.  All operators act on coefficient
vectors over the degree-2p Gauss-Lobatto lattice of the reference square;
`recovery_operator` assembles the mesh-global sparse recovery map used by
the error estimator.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import elements


@dataclass
class LocalField:
    element: elements.ReferenceElement
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if len(self.coefficients) != self.element.ndof:
            raise ValueError("coefficient length does not match element")

    def __call__(self, points):
        val, _, _ = self.element.tabulate(points)
        return self.coefficients @ val


@dataclass
class PatchField:
    descriptor: object          # mesh.PatchDescriptor
    child_coeffs: list          # per child, degree-p coefficient vectors


def _interp_matrix(elem_from, elem_to):
    """Rows: elem_to lattice nodes evaluated in elem_from's basis."""
    val, _, _ = elem_from.tabulate(elem_to.nodes)
    return val.T                # (ndof_to, ndof_from)


@lru_cache(maxsize=None)
def restriction_matrix(p):
    """R: Q_2p coefs -> Q_2p coefs of the Q_p sublattice interpolant."""
    eq = elements.make_element(2 * p, 2 * p)
    ep = elements.make_element(p, p)
    sample = _interp_matrix(eq, ep)       # values on p lattice
    back = _interp_matrix(ep, eq)         # Q_p interpolant on q lattice
    return back @ sample


@lru_cache(maxsize=None)
def restriction_matrix_dir(p, i):
    """R_i: full degree 2p kept in direction i, reduced to p in the other."""
    eq = elements.make_element(2 * p, 2 * p)
    em = elements.make_element(2 * p, p) if i == 1 else elements.make_element(p, 2 * p)
    sample = _interp_matrix(eq, em)
    back = _interp_matrix(em, eq)
    return back @ sample


@lru_cache(maxsize=None)
def remainder_matrix(p):
    """E = I + R - R_1 - R_2 on the Q_2p lattice."""
    n = elements.make_element(2 * p, 2 * p).ndof
    return (np.eye(n) + restriction_matrix(p)
            - restriction_matrix_dir(p, 1) - restriction_matrix_dir(p, 2))


@lru_cache(maxsize=None)
def embedding_matrix(p):
    """Q_p coefficients -> the same function's Q_2p coefficients."""
    eq = elements.make_element(2 * p, 2 * p)
    ep = elements.make_element(p, p)
    return _interp_matrix(ep, eq)


# -- LocalField front ends ---------------------------------------------------

def restrict_iso(v):
    """Interpolate onto Q_p at the Gauss-Lobatto sublattice (result in Q_p)."""
    p2 = v.element.degrees[0]
    assert v.element.degrees == (p2, p2) and p2 % 2 == 0
    p = p2 // 2
    ep = elements.make_element(p, p)
    vals = v(ep.nodes)
    return LocalField(ep, vals)


def restrict_dir(i, v):
    p2 = v.element.degrees[0]
    p = p2 // 2
    em = elements.make_element(p2, p) if i == 1 else elements.make_element(p, p2)
    return LocalField(em, v(em.nodes))


def remainder(v):
    """E v = v + R v - R_1 v - R_2 v, expressed in the Q_2p basis."""
    p = v.element.degrees[0] // 2
    return LocalField(v.element, remainder_matrix(p) @ v.coefficients)


@lru_cache(maxsize=None)
def _iso_child_setup(p):
    """Least-squares solve operator of the 4-child patch interpolation.

    Returns (pinv, child_eval) where pinv maps stacked child nodal values
    (child-major, 4*(p+1)^2) to parent Q_2p coefficients and child_eval[j]
    evaluates a parent Q_2p field on child j's own Q_2p lattice.
    """
    eq = elements.make_element(2 * p, 2 * p)
    ep = elements.make_element(p, p)
    offsets = np.array([(0, 0), (1, 0), (1, 1), (0, 1)], dtype=float)
    rows = []
    for off in offsets:
        pts = 0.5 * (ep.nodes + off)
        val, _, _ = eq.tabulate(pts)
        rows.append(val.T)
    V = np.vstack(rows)                         # (4 np, nq)
    pinv = np.linalg.pinv(V)
    child_eval = []
    for off in offsets:
        pts = 0.5 * (eq.nodes + off)
        val, _, _ = eq.tabulate(pts)
        child_eval.append(val.T)                # (nq, nq)
    return pinv, child_eval


def patch_interpolate(patch):
    """Q_2p recovery on the parent from a 4-child isotropic patch."""
    if patch.descriptor.kind != "iso":
        raise ValueError("patch_interpolate needs an isotropic 4-child patch")
    coeffs = np.concatenate(patch.child_coeffs)
    nploc = len(patch.child_coeffs[0])
    p = int(np.sqrt(nploc)) - 1
    pinv, _ = _iso_child_setup(p)
    eq = elements.make_element(2 * p, 2 * p)
    return LocalField(eq, pinv @ coeffs)


def patch_interpolate_dir(i, patch):
    return restrict_dir(i, patch_interpolate(patch))


# -- mesh-global recovery ------------------------------------------------------

def recovery_operator(mesh_obj, hp, hq):
    """Sparse map from global degree-p coefficients to per-cell recovered
    Q_2p coefficients (C * n_qloc rows, cell-major in leaf order).

    Children of isotropic splits use exact patch interpolation; everything
    else falls back to least-squares recovery from the cell plus its facet
    neighbors; isolated cells degrade to plain embedding.
    """
    p = hp.p
    leaves = mesh_obj.leaves()
    index = {c.id: k for k, c in enumerate(leaves)}
    nq = hq.elem.ndof
    eq = hq.elem
    pinv4, child_eval = _iso_child_setup(p)
    embed = embedding_matrix(p)
    # vertex adjacency: the full ring of cells sharing a corner, so that on
    # structured regions the sample set is a tensor grid (a least-squares fit
    # of direction-independent data then stays direction-independent), plus
    # facet twins and hanging coarse/fine pairs for nonconforming interfaces
    adj = {c.id: set() for c in leaves}
    by_vertex = {}
    for c in leaves:
        for v in c.verts:
            by_vertex.setdefault(v, []).append(c.id)
    for ids in by_vertex.values():
        for a in ids:
            for b in ids:
                if a != b:
                    adj[a].add(b)
    for key, entries in mesh_obj.facet_map().items():
        if len(entries) == 2:
            a, b = entries[0][0].id, entries[1][0].id
            adj[a].add(b)
            adj[b].add(a)
    for (coarse, _f), _mid, fine in mesh_obj.hanging_relations():
        for bc, _bf in fine:
            adj[coarse.id].add(bc.id)
            adj[bc.id].add(coarse.id)

    rows, cols, vals = [], [], []

    def emit(k, op, dofs):
        r = np.repeat(np.arange(k * nq, (k + 1) * nq), len(dofs))
        c = np.tile(dofs, nq)
        rows.append(r)
        cols.append(c)
        vals.append(op.ravel())

    for k, leaf in enumerate(leaves):
        patch = mesh_obj.patch_of(leaf.id)
        if patch.kind == "iso" and all(mesh_obj.cells[ch].is_leaf
                                       for ch in patch.cells):
            pos = patch.cells.index(leaf.id)
            op = child_eval[pos] @ pinv4          # (nq, 4 nploc)
            dofs = np.concatenate([hp.cell_dofs[index[ch]] for ch in patch.cells])
            emit(k, op, dofs)
            continue
        nbrs = sorted(adj[leaf.id])
        if not nbrs:
            emit(k, embed, hp.cell_dofs[k])
            continue
        dofs = [hp.cell_dofs[k]]
        dofs += [hp.cell_dofs[index[n]] for n in nbrs]
        dofs = np.unique(np.concatenate(dofs))
        pts = elements.inverse_bilinear(mesh_obj.cell_corners(leaf),
                                        hp.positions[dofs])
        val, _, _ = eq.tabulate(pts)
        V = val.T                                  # (nsrc, nq)
        op = np.linalg.pinv(V)
        emit(k, op, dofs)

    n_rows = len(leaves) * nq
    R = sp.csr_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n_rows, hp.n_dofs))
    return R
