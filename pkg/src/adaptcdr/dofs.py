"""Global degree-of-freedom management on a leaf mesh.

Continuous Q_p numbering (vertices, edge interiors, cell interiors), hanging
node constraints from the mesh's one-irregular facet relations, Dirichlet
bookkeeping, and the condensation operators used by the solver:

    u_full = P @ u_free + L @ u_dirichlet

with hanging rows of P/L carrying the coarse-edge interpolation weights.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import elements
from .mesh import DIRICHLET_TAGS, _FACET_VERTS, _ekey


@dataclass
class HangingConstraint:
    dof: int
    masters: tuple
    weights: tuple


class DofHandler:
    def __init__(self, mesh, p):
        self.mesh = mesh
        self.p = p
        self.elem = elements.make_element(p, p)
        self.leaves = mesh.leaves()
        self.gl = elements.gauss_lobatto_points(p)
        self._number()
        self._positions()
        self._constraints()
        self._dirichlet()
        self._operators()

    # -- numbering ------------------------------------------------------------

    def _number(self):
        p = self.p
        self.vdof = {}
        used = sorted({v for c in self.leaves for v in c.verts})
        for v in used:
            self.vdof[v] = len(self.vdof)
        n = len(self.vdof)
        self.edof = {}
        if p > 1:
            keys = sorted({_ekey(c.verts[a], c.verts[b])
                           for c in self.leaves for a, b in _FACET_VERTS})
            for k in keys:
                self.edof[k] = n
                n += p - 1
        self.cdof = {}
        if p > 1:
            for c in self.leaves:
                self.cdof[c.id] = n
                n += (p - 1) ** 2
        self.n_dofs = n
        self.cell_dofs = np.array([self._cell_dofs(c) for c in self.leaves],
                                  dtype=np.int64)

    def _edge_dof(self, va, vb, k):
        """Global dof of the k-th interior lattice node along the edge va->vb."""
        lo, hi = _ekey(va, vb)
        slot = k - 1 if va == lo else self.p - 1 - k
        return self.edof[(lo, hi)] + slot

    def _cell_dofs(self, cell):
        p = self.p
        v0, v1, v2, v3 = cell.verts
        dofs = np.empty((p + 1) * (p + 1), dtype=np.int64)
        for iy in range(p + 1):
            for ix in range(p + 1):
                idx = iy * (p + 1) + ix
                on_x = ix in (0, p)
                on_y = iy in (0, p)
                if on_x and on_y:
                    corner = {(0, 0): v0, (p, 0): v1, (p, p): v2, (0, p): v3}
                    dofs[idx] = self.vdof[corner[(ix, iy)]]
                elif on_y:     # horizontal edge
                    va, vb = (v0, v1) if iy == 0 else (v3, v2)
                    dofs[idx] = self._edge_dof(va, vb, ix)
                elif on_x:     # vertical edge
                    va, vb = (v0, v3) if ix == 0 else (v1, v2)
                    dofs[idx] = self._edge_dof(va, vb, iy)
                else:
                    dofs[idx] = self.cdof[cell.id] + (iy - 1) * (p - 1) + (ix - 1)
        return dofs

    def _positions(self):
        pos = np.zeros((self.n_dofs, 2))
        for v, d in self.vdof.items():
            pos[d] = self.mesh.vertices[v]
        for (lo, hi), base in self.edof.items():
            a, b = self.mesh.vertices[lo], self.mesh.vertices[hi]
            for k in range(1, self.p):
                pos[base + k - 1] = a + self.gl[k] * (b - a)
        for c in self.leaves:
            if c.id in self.cdof:
                corners = self.mesh.cell_corners(c)
                frame = elements.map_frame(
                    corners, _PointSet(self.elem.nodes))
                phys = frame.phys_points[0]
                dofs = self._cell_dofs(c)
                for iy in range(1, self.p):
                    for ix in range(1, self.p):
                        idx = iy * (self.p + 1) + ix
                        pos[dofs[idx]] = phys[idx]
        self.positions = pos

    # -- hanging constraints --------------------------------------------------

    def _constraints(self):
        p = self.p
        lag = elements.Lagrange1D(self.gl)
        raw = {}
        for (coarse, f), mid, fine in self.mesh.hanging_relations():
            a, b = _FACET_VERTS[f]
            va, vb = coarse.verts[a], coarse.verts[b]
            lo, hi = _ekey(va, vb)
            plo, phi = self.mesh.vertices[lo], self.mesh.vertices[hi]
            edge = phi - plo
            elen2 = edge @ edge
            masters = [self.vdof[lo]]
            masters += [self.edof[(lo, hi)] + k for k in range(p - 1)] if p > 1 else []
            masters += [self.vdof[hi]]

            def add(dof):
                t = float((self.positions[dof] - plo) @ edge / elen2)
                w = lag.eval([t])[0]
                raw[dof] = list(zip(masters, w))

            add(self.vdof[mid])
            for bc, bf in fine:
                ba, bb = _FACET_VERTS[bf]
                wa, wb = bc.verts[ba], bc.verts[bb]
                for k in range(1, p):
                    add(self._edge_dof(wa, wb, k))
        # resolve chains: masters must end up unconstrained
        for _ in range(20):
            dirty = False
            for dof, terms in raw.items():
                out = []
                for m, w in terms:
                    if m in raw and m != dof:
                        out.extend((mm, w * ww) for mm, ww in raw[m])
                        dirty = True
                    else:
                        out.append((m, w))
                raw[dof] = out
            if not dirty:
                break
        else:
            raise RuntimeError("hanging constraint chains did not resolve")
        self.constraints = {}
        for dof, terms in raw.items():
            acc = {}
            for m, w in terms:
                acc[m] = acc.get(m, 0.0) + w
            self.constraints[dof] = sorted(acc.items())

    def constraint_list(self):
        return [HangingConstraint(d, tuple(m for m, _ in t), tuple(w for _, w in t))
                for d, t in sorted(self.constraints.items())]

    # -- Dirichlet ------------------------------------------------------------

    def _dirichlet(self):
        tags = {}
        for c in self.leaves:
            for f, (a, b) in enumerate(_FACET_VERTS):
                tag = c.facet_tags[f]
                if tag not in DIRICHLET_TAGS:
                    continue
                va, vb = c.verts[a], c.verts[b]
                ds = [self.vdof[va], self.vdof[vb]]
                if self.p > 1:
                    ds += [self._edge_dof(va, vb, k) for k in range(1, self.p)]
                for d in ds:
                    if d not in tags or tag < tags[d]:
                        tags[d] = tag
        self.dirichlet_tags = tags
        self.dirichlet_dofs = np.array(sorted(tags), dtype=np.int64)

    # -- condensation operators -----------------------------------------------

    def _operators(self):
        n = self.n_dofs
        is_dir = np.zeros(n, dtype=bool)
        is_dir[self.dirichlet_dofs] = True
        is_hang = np.zeros(n, dtype=bool)
        for d in self.constraints:
            if is_dir[d]:
                raise RuntimeError("dof both hanging and Dirichlet")
            is_hang[d] = True
        free = np.where(~is_dir & ~is_hang)[0]
        self.free_dofs = free
        fcol = -np.ones(n, dtype=np.int64)
        fcol[free] = np.arange(len(free))
        dcol = -np.ones(n, dtype=np.int64)
        dcol[self.dirichlet_dofs] = np.arange(len(self.dirichlet_dofs))
        prows, pcols, pvals = list(free), list(range(len(free))), [1.0] * len(free)
        lrows, lcols, lvals = (list(self.dirichlet_dofs),
                               list(range(len(self.dirichlet_dofs))),
                               [1.0] * len(self.dirichlet_dofs))
        for d, terms in self.constraints.items():
            for m, w in terms:
                if is_dir[m]:
                    lrows.append(d); lcols.append(dcol[m]); lvals.append(w)
                else:
                    prows.append(d); pcols.append(fcol[m]); pvals.append(w)
        self.P = sp.csr_matrix((pvals, (prows, pcols)), shape=(n, len(free)))
        self.L = sp.csr_matrix((lvals, (lrows, lcols)),
                               shape=(n, len(self.dirichlet_dofs)))

    @property
    def n_free(self):
        return self.P.shape[1]

    def expand(self, u_free, dirichlet_values=None):
        full = self.P @ u_free
        if dirichlet_values is not None and self.L.shape[1]:
            full += self.L @ dirichlet_values
        return full

    def condense(self, A, b, dirichlet_values=None):
        """Galerkin condensation of constraints and Dirichlet lift."""
        if dirichlet_values is not None and self.L.shape[1]:
            b = b - A @ (self.L @ dirichlet_values)
        return (self.P.T @ A @ self.P).tocsc(), self.P.T @ b

    def dirichlet_values(self, fn, t=None):
        """Evaluate tag-dependent boundary data at the Dirichlet positions.

        fn: dict tag -> callable(x, y, t) or scalar; missing tags give 0.
        """
        vals = np.zeros(len(self.dirichlet_dofs))
        for i, d in enumerate(self.dirichlet_dofs):
            g = fn.get(self.dirichlet_tags[d]) if fn else None
            if g is None:
                continue
            if callable(g):
                x, y = self.positions[d]
                vals[i] = g(x, y, t)
            else:
                vals[i] = g
        return vals


class _PointSet:
    """Minimal quadrature-like wrapper for evaluating frames at given points."""

    def __init__(self, points):
        self.points = np.atleast_2d(points)
        self.weights = np.zeros(len(self.points))

    @property
    def n(self):
        return len(self.points)
