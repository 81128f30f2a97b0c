"""Hierarchical quadrilateral meshes with directional refinement.

Cells carry independent refinement levels per reference direction and may be
split in x, in y, or isotropically.  A closure pass keeps the mesh
one-irregular per direction (facet-adjacent leaves differ by at most one
level in each direction), which makes hanging-node constraints static.
"""

from dataclasses import dataclass, field

import numpy as np

from . import elements


DIRICHLET = "dirichlet"
DIRICHLET_INFLOW = "dirichlet_inflow"
DIRICHLET_OBSTACLE = "dirichlet_obstacle"
NEUMANN = "neumann"

DIRICHLET_TAGS = (DIRICHLET, DIRICHLET_INFLOW, DIRICHLET_OBSTACLE)

# facet f connects corner f and corner (f+1)%4; tangent direction in the
# cell's reference frame: bottom/top facets run along x, left/right along y
_FACET_VERTS = ((0, 1), (1, 2), (2, 3), (3, 0))
_FACET_TDIR = (0, 1, 0, 1)


@dataclass
class Cell:
    id: int
    verts: tuple            # 4 vertex ids, counterclockwise
    level_x: int = 0
    level_y: int = 0
    parent: int = None
    children: tuple = None
    split: str = None       # 'x' | 'y' | 'iso' for non-leaves
    facet_tags: list = field(default_factory=lambda: [None, None, None, None])
    removed: bool = False

    @property
    def is_leaf(self):
        return self.children is None and not self.removed

    def level(self, direction):
        return self.level_x if direction == 0 else self.level_y


@dataclass
class PatchDescriptor:
    kind: str               # 'iso' | 'x' | 'y' | None
    cells: tuple
    parent: int


def _ekey(a, b):
    return (a, b) if a < b else (b, a)


class Mesh:
    def __init__(self):
        self.vertices = []
        self.cells = []
        self.edge_mid = {}          # sorted vertex pair -> midpoint vertex id
        self.center_of = {}         # sorted 4-tuple of corner ids -> center id
        self.projector = None       # callable (2,)->(2,) for curved boundaries
        self.on_curve = set()       # vertex ids lying on the projected curve
        self.polar_blend = None     # (cx, cy, r_limit): curved annulus region

    # -- construction helpers -------------------------------------------------

    def add_vertex(self, xy):
        self.vertices.append(np.asarray(xy, dtype=float))
        return len(self.vertices) - 1

    def add_cell(self, verts, **kw):
        c = Cell(id=len(self.cells), verts=tuple(verts), **kw)
        self.cells.append(c)
        return c

    def coords(self, vids):
        return np.array([self.vertices[v] for v in vids])

    def cell_corners(self, cell):
        return self.coords(cell.verts)

    def leaves(self):
        return [c for c in self.cells if c.is_leaf]

    def leaf_corner_array(self, leaf_list=None):
        cells = self.leaves() if leaf_list is None else leaf_list
        return np.array([[self.vertices[v] for v in c.verts] for c in cells])

    # -- topology queries -----------------------------------------------------

    def _polar_mean(self, pts):
        """Curved-region vertex placement: mean radius, circular mean angle.

        Keeps refinement-created vertices on concentric arcs inside the
        blended annulus, so arbitrarily thin boundary-layer cells along the
        curved obstacle keep positive Jacobians (a straight chord midpoint
        would cross neighboring arcs once the radial size drops below the
        sagitta of the tangential arc).
        """
        cx, cy, _ = self.polar_blend
        rel = np.asarray(pts, dtype=float) - (cx, cy)
        radii = np.hypot(rel[:, 0], rel[:, 1])
        ang = np.arctan2(rel[:, 1], rel[:, 0])
        base = ang[0]
        wrapped = base + np.angle(np.exp(1j * (ang - base))).mean()
        r = radii.mean()
        return np.array([cx + r * np.cos(wrapped), cy + r * np.sin(wrapped)])

    def _in_blend(self, vids):
        if self.polar_blend is None:
            return False
        cx, cy, limit = self.polar_blend
        pts = self.coords(vids) - (cx, cy)
        return bool(np.all(np.hypot(pts[:, 0], pts[:, 1]) <= limit + 1e-12))

    def _midpoint(self, a, b):
        key = _ekey(a, b)
        m = self.edge_mid.get(key)
        if m is None:
            on_curve = self.projector is not None \
                and a in self.on_curve and b in self.on_curve
            if on_curve:
                xy = self.projector(0.5 * (self.vertices[a] + self.vertices[b]))
            elif self._in_blend((a, b)):
                xy = self._polar_mean(self.coords((a, b)))
            else:
                xy = 0.5 * (self.vertices[a] + self.vertices[b])
            m = self.add_vertex(xy)
            if on_curve:
                self.on_curve.add(m)
            self.edge_mid[key] = m
        return m

    def _center(self, verts):
        key = tuple(sorted(verts))
        m = self.center_of.get(key)
        if m is None:
            if self._in_blend(verts):
                xy = self._polar_mean(self.coords(verts))
            else:
                xy = self.coords(verts).mean(axis=0)
            m = self.add_vertex(xy)
            self.center_of[key] = m
        return m

    def split_cell(self, cell, kind):
        """Split a leaf in 'x', 'y' or 'iso'; returns the new children."""
        assert cell.is_leaf
        v0, v1, v2, v3 = cell.verts
        t = cell.facet_tags
        lx, ly = cell.level_x, cell.level_y
        base = dict(parent=cell.id)
        if kind == "x":
            mb, mt = self._midpoint(v0, v1), self._midpoint(v2, v3)
            kids = [
                self.add_cell((v0, mb, mt, v3), level_x=lx + 1, level_y=ly,
                              facet_tags=[t[0], None, t[2], t[3]], **base),
                self.add_cell((mb, v1, v2, mt), level_x=lx + 1, level_y=ly,
                              facet_tags=[t[0], t[1], t[2], None], **base),
            ]
        elif kind == "y":
            mr, ml = self._midpoint(v1, v2), self._midpoint(v3, v0)
            kids = [
                self.add_cell((v0, v1, mr, ml), level_x=lx, level_y=ly + 1,
                              facet_tags=[t[0], t[1], None, t[3]], **base),
                self.add_cell((ml, mr, v2, v3), level_x=lx, level_y=ly + 1,
                              facet_tags=[None, t[1], t[2], t[3]], **base),
            ]
        elif kind == "iso":
            mb, mr = self._midpoint(v0, v1), self._midpoint(v1, v2)
            mt, ml = self._midpoint(v2, v3), self._midpoint(v3, v0)
            cc = self._center(cell.verts)
            kids = [
                self.add_cell((v0, mb, cc, ml), level_x=lx + 1, level_y=ly + 1,
                              facet_tags=[t[0], None, None, t[3]], **base),
                self.add_cell((mb, v1, mr, cc), level_x=lx + 1, level_y=ly + 1,
                              facet_tags=[t[0], t[1], None, None], **base),
                self.add_cell((cc, mr, v2, mt), level_x=lx + 1, level_y=ly + 1,
                              facet_tags=[None, t[1], t[2], None], **base),
                self.add_cell((ml, cc, mt, v3), level_x=lx + 1, level_y=ly + 1,
                              facet_tags=[None, None, t[2], t[3]], **base),
            ]
        else:
            raise ValueError(f"unknown split kind {kind!r}")
        cell.children = tuple(k.id for k in kids)
        cell.split = kind
        return kids

    def facet_map(self):
        """Sorted edge key -> list of (cell, facet index) over leaf facets."""
        fm = {}
        for c in self.leaves():
            for f, (a, b) in enumerate(_FACET_VERTS):
                key = _ekey(c.verts[a], c.verts[b])
                fm.setdefault(key, []).append((c, f))
        return fm

    def _cover(self, a, b, fm, exclude, depth=0):
        """Leaf facets tiling segment (a,b), seen from a coarse facet.

        Returns list of (cell, facet, depth) or None if the segment cannot
        be covered by finer leaf facets.
        """
        entries = [e for e in fm.get(_ekey(a, b), []) if e[0].id != exclude]
        if entries:
            return [(entries[0][0], entries[0][1], depth)]
        m = self.edge_mid.get(_ekey(a, b))
        if m is None:
            return None
        left = self._cover(a, m, fm, exclude, depth + 1)
        right = self._cover(m, b, fm, exclude, depth + 1)
        if left is None or right is None:
            return None
        return left + right

    def hanging_relations(self):
        """List of (coarse (cell, facet), midpoint vid, fine [(cell, facet)]).

        Only depth-1 chains appear on a closed mesh.
        """
        fm = self.facet_map()
        rels = []
        fine_keys = set()
        orphans = []
        for c in self.leaves():
            for f, (a, b) in enumerate(_FACET_VERTS):
                if c.facet_tags[f] is not None:
                    continue
                va, vb = c.verts[a], c.verts[b]
                key = _ekey(va, vb)
                if len(fm[key]) > 1:
                    continue
                cov = self._cover(va, vb, fm, c.id)
                if cov is None:
                    orphans.append(key)   # fine side, must be covered below
                    continue
                if any(d > 1 for _, _, d in cov):
                    raise RuntimeError("mesh is not one-irregular")
                rels.append(((c, f), self.edge_mid[key],
                             [(bc, bf) for bc, bf, _ in cov]))
                for bc, bf, _ in cov:
                    ba, bb = _FACET_VERTS[bf]
                    fine_keys.add(_ekey(bc.verts[ba], bc.verts[bb]))
        unexplained = [k for k in orphans if k not in fine_keys]
        if unexplained:
            raise RuntimeError(f"orphan interior facets: {unexplained}")
        return rels

    # -- refinement -----------------------------------------------------------

    def _closure_flags(self):
        fm = self.facet_map()
        flags = {}

        def flag(cell, direction):
            flags.setdefault(cell.id, set()).add("x" if direction == 0 else "y")

        seen_pairs = set()
        for c in self.leaves():
            for f, (a, b) in enumerate(_FACET_VERTS):
                if c.facet_tags[f] is not None:
                    continue
                va, vb = c.verts[a], c.verts[b]
                key = _ekey(va, vb)
                entries = fm[key]
                tA, nA = _FACET_TDIR[f], 1 - _FACET_TDIR[f]
                if len(entries) > 1:
                    other = [e for e in entries if e[0].id != c.id][0]
                    pair = _ekey(c.id, other[0].id)
                    if pair in seen_pairs:
                        continue
                    seen_pairs.add(pair)
                    neighbors = [(other[0], other[1], 0)]
                else:
                    cov = self._cover(va, vb, fm, c.id)
                    if cov is None:
                        continue   # fine side of a hanging facet, or odd gap
                    neighbors = cov
                for bc, bf, depth in neighbors:
                    tB, nB = _FACET_TDIR[bf], 1 - _FACET_TDIR[bf]
                    if depth >= 2:
                        flag(c, tA)
                    if bc.level(tB) - c.level(tA) >= 2:
                        flag(c, tA)
                    elif c.level(tA) - bc.level(tB) >= 2:
                        flag(bc, tB)
                    if bc.level(nB) - c.level(nA) >= 2:
                        flag(c, nA)
                    elif c.level(nA) - bc.level(nB) >= 2:
                        flag(bc, nB)
        return flags

    def closure(self):
        """Re-establish one-irregularity per direction by refining."""
        for _ in range(1000):
            flags = self._closure_flags()
            if not flags:
                return
            for cid in sorted(flags):
                cell = self.cells[cid]
                if not cell.is_leaf:
                    continue
                dirs = flags[cid]
                kind = "iso" if len(dirs) == 2 else dirs.pop()
                self.split_cell(cell, kind)
        raise RuntimeError("closure did not terminate")

    def refine(self, flags):
        """Apply refinement flags and restore one-irregularity.

        flags: dict cell id -> subset of {'refine_x','refine_y','coarsen'}.
        """
        for cid, fs in flags.items():
            if not self.cells[cid].is_leaf:
                raise ValueError(f"flags on non-leaf cell {cid}")
            if "coarsen" in fs and (fs & {"refine_x", "refine_y"}):
                raise ValueError(f"coarsen and refine both set on cell {cid}")
        # whole-sibling-group merges first
        by_parent = {}
        for cid, fs in flags.items():
            if "coarsen" in fs:
                p = self.cells[cid].parent
                if p is not None:
                    by_parent.setdefault(p, set()).add(cid)
        for pid in sorted(by_parent):
            parent = self.cells[pid]
            kids = set(parent.children or ())
            if kids and kids == by_parent[pid] and \
                    all(self.cells[k].is_leaf for k in kids):
                for k in parent.children:
                    self.cells[k].removed = True
                parent.children = None
                parent.split = None
        # then splits
        for cid in sorted(flags):
            fs = flags[cid]
            cell = self.cells[cid]
            if not cell.is_leaf:
                continue
            want = {d for d in ("x", "y") if f"refine_{d}" in fs}
            if not want:
                continue
            kind = "iso" if len(want) == 2 else want.pop()
            self.split_cell(cell, kind)
        self.closure()
        return self

    # -- geometry queries -----------------------------------------------------

    def areas(self):
        frame = elements.map_frame(self.leaf_corner_array(), elements.gauss_rule(2))
        return frame.area()

    def aspect_ratios(self):
        """Per-leaf max singular value ratio of the mapping gradient."""
        frame = elements.map_frame(self.leaf_corner_array(), elements.gauss_rule(2))
        sv = np.linalg.svd(frame.jac, compute_uv=False)
        return (sv[..., 0] / sv[..., 1]).max(axis=1)

    def directional_sizes(self):
        """Midline lengths (h1, h2) per leaf cell."""
        corners = self.leaf_corner_array()
        mid_b = 0.5 * (corners[:, 0] + corners[:, 1])
        mid_t = 0.5 * (corners[:, 3] + corners[:, 2])
        mid_l = 0.5 * (corners[:, 0] + corners[:, 3])
        mid_r = 0.5 * (corners[:, 1] + corners[:, 2])
        h1 = np.linalg.norm(mid_r - mid_l, axis=1)
        h2 = np.linalg.norm(mid_t - mid_b, axis=1)
        return np.column_stack([h1, h2])

    def patch_of(self, cell_id):
        cell = self.cells[cell_id]
        if not cell.is_leaf:
            raise ValueError("patch_of expects a leaf")
        if cell.parent is None:
            return PatchDescriptor(None, (cell_id,), None)
        parent = self.cells[cell.parent]
        return PatchDescriptor(parent.split, parent.children, parent.id)

    def build_constraints(self, p):
        from .dofs import DofHandler
        handler = DofHandler(self, p)
        return handler.constraint_list()


def aspect_ratio_max(mesh):
    return float(mesh.aspect_ratios().max())


# -- mesh builders ------------------------------------------------------------

def build_rect_mesh(extents, nx, ny, structured=True):
    """Rectangle mesh; structured tensor grid or the 10-cell diagonal layout.

    extents: ((x0,x1),(y0,y1)). All boundary facets are tagged 'dirichlet'.
    """
    (x0, x1), (y0, y1) = extents
    if not (x1 > x0 and y1 > y0):
        raise ValueError("degenerate extents")
    if nx < 1 or ny < 1:
        raise ValueError("need at least one cell per direction")
    m = Mesh()
    if structured:
        xs = np.linspace(x0, x1, nx + 1)
        ys = np.linspace(y0, y1, ny + 1)
        return _grid_mesh(m, xs, ys, lambda f: DIRICHLET)
    return _diagonal_mesh(m, x0, x1, y0, y1)


def _grid_mesh(m, xs, ys, boundary_tag, hole=None):
    nx, ny = len(xs) - 1, len(ys) - 1
    vid = {}
    for j, y in enumerate(ys):
        for i, x in enumerate(xs):
            vid[i, j] = m.add_vertex((x, y))
    for j in range(ny):
        for i in range(nx):
            cx = 0.5 * (xs[i] + xs[i + 1])
            cy = 0.5 * (ys[j] + ys[j + 1])
            if hole is not None and hole(cx, cy):
                continue
            tags = [None] * 4
            for f, on_bnd in enumerate([j == 0, i == nx - 1, j == ny - 1, i == 0]):
                if on_bnd:
                    tags[f] = boundary_tag(f)
            if hole is not None:
                # facets facing the hole are obstacle boundary
                nbrs = [(i, j - 1), (i + 1, j), (i, j + 1), (i - 1, j)]
                for f, (ii, jj) in enumerate(nbrs):
                    if 0 <= ii < nx and 0 <= jj < ny:
                        ncx = 0.5 * (xs[ii] + xs[ii + 1])
                        ncy = 0.5 * (ys[jj] + ys[jj + 1])
                        if hole(ncx, ncy):
                            tags[f] = DIRICHLET_OBSTACLE
            m.add_cell((vid[i, j], vid[i + 1, j], vid[i + 1, j + 1], vid[i, j + 1]),
                       facet_tags=tags)
    return m


def _diagonal_mesh(m, x0, x1, y0, y1):
    """Coarse unstructured layout with a band of diagonal-aligned cells."""
    def pt(s, t):
        return (x0 + s * (x1 - x0), y0 + t * (y1 - y0))

    P = {}
    ref_pts = {
        "c00": (0, 0), "c10": (1, 0), "c11": (1, 1), "c01": (0, 1),
        "b1": (0.25, 0), "b2": (0.5, 0), "b3": (0.75, 0),
        "t1": (0.25, 1), "t2": (0.5, 1), "t3": (0.75, 1),
        "l": (0, 0.5), "r": (1, 0.5),
        "ml": (0.25, 0.5), "mr": (0.75, 0.5),
        "A": (5 / 12, 2 / 3), "B": (7 / 12, 1 / 3), "C": (0.5, 0.5),
    }
    for name, (s, t) in ref_pts.items():
        P[name] = m.add_vertex(pt(s, t))

    D = DIRICHLET
    cells = [
        # (vertices, tags bottom,right,top,left)
        (("c00", "b1", "ml", "l"), (D, None, None, D)),
        (("l", "ml", "t1", "c01"), (None, None, D, D)),
        (("b3", "c10", "r", "mr"), (D, D, None, None)),
        (("mr", "r", "c11", "t3"), (None, D, D, None)),
        (("b1", "b2", "B", "C"), (D, None, None, None)),
        (("b1", "C", "A", "ml"), (None, None, None, None)),
        (("b2", "b3", "mr", "B"), (D, None, None, None)),
        (("C", "B", "mr", "t3"), (None, None, None, None)),
        (("ml", "A", "t2", "t1"), (None, None, D, None)),
        (("A", "C", "t3", "t2"), (None, None, D, None)),
    ]
    for verts, tags in cells:
        m.add_cell(tuple(P[v] for v in verts), facet_tags=list(tags))
    return m


def build_hemker_mesh(obstacle="circle"):
    """Channel (-3,8)x(-3,3) around an obstacle at the origin.

    Boundary tags: x=-3 inflow Dirichlet, obstacle Dirichlet, rest Neumann.
    The circular obstacle attaches a radial projector so refinement-created
    boundary vertices land on the unit circle.
    """
    if obstacle == "square":
        m = Mesh()
        xs = np.array([-3.0, -1.0, 1.0, 3.0, 5.0, 8.0])
        ys = np.array([-3.0, -1.0, 1.0, 3.0])

        def tag(f):
            return DIRICHLET_INFLOW if f == 3 else NEUMANN

        return _grid_mesh(m, xs, ys, tag,
                          hole=lambda cx, cy: abs(cx) < 1 and abs(cy) < 1)
    if obstacle != "circle":
        raise ValueError("obstacle must be 'circle' or 'square'")

    m = Mesh()
    m.projector = lambda xy: np.asarray(xy) / np.linalg.norm(xy)
    # curve refinement-created vertices close to the obstacle so that thin
    # boundary-layer cells follow concentric arcs instead of chords
    m.polar_blend = (0.0, 0.0, 1.3)
    xs = np.array([-3.0, -2.0, 0.0, 2.0, 5.0, 8.0])
    ys = np.array([-3.0, -2.0, 0.0, 2.0, 3.0])

    def tag(f):
        return DIRICHLET_INFLOW if f == 3 else NEUMANN

    _grid_mesh(m, xs, ys, tag,
               hole=lambda cx, cy: abs(cx) < 2 and abs(cy) < 2)
    # fix tags: _grid_mesh marked hole-facing facets as obstacle, but for the
    # circle the ring cells below provide the true obstacle boundary
    for c in m.cells:
        for f in range(4):
            if c.facet_tags[f] == DIRICHLET_OBSTACLE:
                c.facet_tags[f] = None
    # ring between the unit circle and the square boundary of (-2,2)^2
    angles = np.arange(8) * (np.pi / 4)
    circ = [m.add_vertex((np.cos(a), np.sin(a))) for a in angles]
    m.on_curve.update(circ)
    square_pts = [(2, 0), (2, 2), (0, 2), (-2, 2), (-2, 0), (-2, -2), (0, -2), (2, -2)]
    # the square corners/midpoints already exist as grid vertices; look up
    coords = np.array(m.vertices)
    sq = []
    for p in square_pts:
        idx = np.where(np.all(np.isclose(coords, p), axis=1))[0]
        sq.append(int(idx[0]))
    for k in range(8):
        k1 = (k + 1) % 8
        m.add_cell((circ[k], sq[k], sq[k1], circ[k1]),
                   facet_tags=[None, None, None, DIRICHLET_OBSTACLE])
    return m


# -- VTK export ---------------------------------------------------------------

def write_vtk(mesh, path, point_data=None, extra_cell_data=None):
    """Legacy ASCII VTK unstructured grid of the leaf cells.

    Always writes cell data level_x, level_y, aspect_ratio; point_data maps
    name -> per-vertex array (indexed by mesh vertex id).
    """
    leaves = mesh.leaves()
    used = sorted({v for c in leaves for v in c.verts})
    remap = {v: i for i, v in enumerate(used)}
    ar = mesh.aspect_ratios()
    lines = ["# vtk DataFile Version 3.0", "adaptcdr mesh", "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {len(used)} double"]
    for v in used:
        x, y = mesh.vertices[v]
        lines.append(f"{x:.16g} {y:.16g} 0")
    lines.append(f"CELLS {len(leaves)} {5 * len(leaves)}")
    for c in leaves:
        lines.append("4 " + " ".join(str(remap[v]) for v in c.verts))
    lines.append(f"CELL_TYPES {len(leaves)}")
    lines.extend(["9"] * len(leaves))
    lines.append(f"CELL_DATA {len(leaves)}")
    cell_arrays = [("level_x", [c.level_x for c in leaves]),
                   ("level_y", [c.level_y for c in leaves]),
                   ("aspect_ratio", list(ar))]
    for name, arr in cell_arrays + list((extra_cell_data or {}).items()):
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(f"{float(v):.16g}" for v in arr)
    if point_data:
        lines.append(f"POINT_DATA {len(used)}")
        for name, arr in point_data.items():
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(f"{float(arr[v]):.16g}" for v in used)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
