"""Reference element algebra on the unit square.

Tensor-product Lagrange bases on Gauss-Lobatto lattices (possibly with
different degree per direction), Gauss-Legendre quadrature, and bilinear
cell mappings with first and second derivatives.  Everything lives on the
reference square [0,1]^2; MappedFrame pushes derivatives to physical cells.
"""

import numpy as np


def gauss_lobatto_points(p):
    """p+1 Gauss-Lobatto points on [0,1] (includes both endpoints for p>=1)."""
    if p == 0:
        return np.array([0.5])
    if p == 1:
        return np.array([0.0, 1.0])
    # interior nodes are the roots of P'_p (Legendre derivative) on (-1,1)
    coeffs = np.zeros(p + 1)
    coeffs[p] = 1.0
    interior = np.polynomial.legendre.legroots(np.polynomial.legendre.legder(coeffs))
    pts = np.concatenate(([-1.0], np.sort(interior.real), [1.0]))
    return 0.5 * (pts + 1.0)


def gauss_points_weights(n):
    """n-point Gauss-Legendre rule on [0,1]; weights sum to 1."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


class Lagrange1D:
    """Lagrange basis on arbitrary distinct nodes in [0,1].

    Evaluation uses the barycentric formula; derivatives go through the
    differentiation matrix, which is stable up to the degrees used here.
    """

    def __init__(self, nodes):
        self.nodes = np.asarray(nodes, dtype=float)
        self.n = len(self.nodes)
        diff = self.nodes[:, None] - self.nodes[None, :]
        np.fill_diagonal(diff, 1.0)
        self.bary = 1.0 / np.prod(diff, axis=1)
        # differentiation matrix D[i,j] = L_j'(x_i)
        D = np.empty((self.n, self.n))
        for i in range(self.n):
            for j in range(self.n):
                if i != j:
                    D[i, j] = (self.bary[j] / self.bary[i]) / (self.nodes[i] - self.nodes[j])
        np.fill_diagonal(D, 0.0)
        np.fill_diagonal(D, -D.sum(axis=1))
        self.D = D

    def eval(self, x):
        """Values of all basis functions at points x; shape (len(x), n)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty((len(x), self.n))
        for k, xv in enumerate(x):
            d = xv - self.nodes
            hit = np.isclose(d, 0.0, atol=1e-14)
            if hit.any():
                row = np.zeros(self.n)
                row[np.argmax(hit)] = 1.0
            else:
                t = self.bary / d
                row = t / t.sum()
            out[k] = row
        return out

    def eval_deriv(self, x, order=1):
        """Derivative values L_j^(order)(x); shape (len(x), n)."""
        vals = self.eval(x)
        for _ in range(order):
            # nodal derivative values of L_j are the j-th column of D;
            # re-expand in the basis: L_j'(x) = sum_i L_i(x) D[i,j]
            vals = vals @ self.D
        return vals


class ReferenceElement:
    """Q_{p1,p2} Lagrange element on the Gauss-Lobatto lattice of [0,1]^2.

    Node ordering is x-fastest: node (i,j) -> index j*(p1+1)+i.
    """

    def __init__(self, p1, p2):
        if p1 < 0 or p2 < 0:
            raise ValueError("degrees must be nonnegative")
        self.degrees = (p1, p2)
        self.lag = (Lagrange1D(gauss_lobatto_points(p1)),
                    Lagrange1D(gauss_lobatto_points(p2)))
        n1, n2 = p1 + 1, p2 + 1
        self.ndof = n1 * n2
        xx, yy = np.meshgrid(self.lag[0].nodes, self.lag[1].nodes)
        self.nodes = np.column_stack([xx.ravel(), yy.ravel()])

    def _tensor(self, vx, vy):
        # vx: (m, n1), vy: (m, n2) -> (ndof, m)
        return (vy[:, :, None] * vx[:, None, :]).reshape(len(vx), self.ndof).T

    def tabulate(self, points):
        """Tabulate values, gradients, second derivatives at reference points.

        Returns (val, grad, hess) with shapes (ndof, m), (ndof, m, 2),
        (ndof, m, 2, 2) for m points.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        x, y = pts[:, 0], pts[:, 1]
        vx, vy = self.lag[0].eval(x), self.lag[1].eval(y)
        dx, dy = self.lag[0].eval_deriv(x), self.lag[1].eval_deriv(y)
        dxx, dyy = self.lag[0].eval_deriv(x, 2), self.lag[1].eval_deriv(y, 2)
        m = len(pts)
        val = self._tensor(vx, vy)
        grad = np.empty((self.ndof, m, 2))
        grad[:, :, 0] = self._tensor(dx, vy)
        grad[:, :, 1] = self._tensor(vx, dy)
        hess = np.empty((self.ndof, m, 2, 2))
        hess[:, :, 0, 0] = self._tensor(dxx, vy)
        hess[:, :, 1, 1] = self._tensor(vx, dyy)
        hess[:, :, 0, 1] = hess[:, :, 1, 0] = self._tensor(dx, dy)
        return val, grad, hess


_element_cache = {}


def make_element(p1, p2):
    """Cached Q_{p1,p2} reference element."""
    key = (p1, p2)
    if key not in _element_cache:
        _element_cache[key] = ReferenceElement(p1, p2)
    return _element_cache[key]


def eval_basis(elem, point):
    """Basis values, gradients and second derivatives at one reference point."""
    val, grad, hess = elem.tabulate(np.asarray(point)[None, :])
    return val[:, 0], grad[:, 0, :], hess[:, 0, :, :]


class Quadrature:
    """Tensor Gauss-Legendre rule on the unit square."""

    def __init__(self, points, weights):
        self.points = points
        self.weights = weights

    @property
    def n(self):
        return len(self.weights)


_quad_cache = {}


def gauss_rule(n):
    """n x n tensor Gauss-Legendre quadrature on [0,1]^2."""
    if n < 1:
        raise ValueError("need at least one point per direction")
    if n not in _quad_cache:
        x, w = gauss_points_weights(n)
        xx, yy = np.meshgrid(x, x)
        ww = np.outer(w, w)
        _quad_cache[n] = Quadrature(
            np.column_stack([xx.ravel(), yy.ravel()]), ww.ravel())
    return _quad_cache[n]


class MappedFrame:
    """Bilinear mapping data for a batch of quadrilateral cells.

    corners: (C,4,2) counterclockwise vertex coordinates. All arrays carry a
    leading cell axis; a single cell may be passed as (4,2).

    The bilinear map is T(x,y) = v0(1-x)(1-y) + v1 x(1-y) + v2 xy + v3 (1-x)y.
    Its only nonvanishing reference second derivative is the constant mixed
    one, T_xy = v0 - v1 + v2 - v3, which feeds the curvature correction of
    mapped second derivatives.
    """

    def __init__(self, corners, quad):
        corners = np.asarray(corners, dtype=float)
        squeeze = corners.ndim == 2
        if squeeze:
            corners = corners[None]
        self.corners = corners
        self.quad = quad
        x, y = quad.points[:, 0], quad.points[:, 1]
        # shape functions of the bilinear map and their derivatives
        N = np.stack([(1 - x) * (1 - y), x * (1 - y), x * y, (1 - x) * y])   # (4,m)
        Nx = np.stack([-(1 - y), (1 - y), y, -y])
        Ny = np.stack([-(1 - x), -x, x, (1 - x)])
        self.phys_points = np.einsum('cvd,vm->cmd', corners, N)
        jac = np.empty((len(corners), quad.n, 2, 2))
        jac[..., 0] = np.einsum('cvd,vm->cmd', corners, Nx)   # dT/dx
        jac[..., 1] = np.einsum('cvd,vm->cmd', corners, Ny)   # dT/dy
        self.jac = jac
        self.det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
        if np.any(self.det <= 0):
            raise ValueError("non-positive mapping Jacobian")
        inv = np.empty_like(jac)
        inv[..., 0, 0] = jac[..., 1, 1]
        inv[..., 1, 1] = jac[..., 0, 0]
        inv[..., 0, 1] = -jac[..., 0, 1]
        inv[..., 1, 0] = -jac[..., 1, 0]
        self.inv = inv / self.det[..., None, None]
        # constant mixed second derivative of the map, per cell: (C,2)
        self.t_xy = corners[:, 0] - corners[:, 1] + corners[:, 2] - corners[:, 3]
        self.wdet = quad.weights[None, :] * self.det
        self._squeeze = squeeze

    def area(self):
        return self.wdet.sum(axis=1)

    def push_gradients(self, grad_ref):
        """Physical gradients from reference gradients (n, m, 2) -> (C, n, m, 2)."""
        return np.einsum('cmji,nmj->cnmi', self.inv, grad_ref)

    def push_hessians(self, hess_ref, grad_phys):
        """Physical second derivatives with mapping curvature correction.

        hess_ref: (n, m, 2, 2), grad_phys: (C, n, m, 2) -> (C, n, m, 2, 2).
        """
        # correction: subtract (second derivative of the map) . grad_phys,
        # only the mixed reference component is nonzero for bilinear maps
        corr = np.einsum('cd,cnmd->cnm', self.t_xy, grad_phys)
        h = np.broadcast_to(hess_ref[None], (len(self.corners),) + hess_ref.shape).copy()
        h[..., 0, 1] -= corr
        h[..., 1, 0] -= corr
        return np.einsum('cmai,cnmab,cmbj->cnmij', self.inv, h, self.inv)


def map_frame(corners, quad):
    """MappedFrame for one cell (4,2) or a batch (C,4,2)."""
    return MappedFrame(corners, quad)


def inverse_bilinear(corners, points):
    """Reference coordinates of physical points for one bilinear cell.

    corners: (4,2); points: (m,2). Newton iteration; also converges for
    points moderately outside the cell (used by least-squares recovery).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty_like(pts)
    corners = np.asarray(corners, dtype=float)
    for k, xy in enumerate(pts):
        ref = np.array([0.5, 0.5])
        for _ in range(50):
            x, y = ref
            N = np.array([(1 - x) * (1 - y), x * (1 - y), x * y, (1 - x) * y])
            res = N @ corners - xy
            if abs(res[0]) + abs(res[1]) < 1e-13:
                break
            Nx = np.array([-(1 - y), (1 - y), y, -y])
            Ny = np.array([-(1 - x), -x, x, (1 - x)])
            J = np.stack([Nx @ corners, Ny @ corners], axis=1)
            ref = ref - np.linalg.solve(J, res)
        out[k] = ref
    return out
