"""Space-time assembly and solution.

dG(r) time stepping on slabs for the SUPG-stabilized primal problem, the
backward adjoint march in the enriched space (degree q = 2p), constraint
condensation, direct sparse solves, and temporal reconstruction.

Convention: matrices are indexed [test, trial]; slab systems are mode-major
(coefficient vector stacks one spatial vector per time mode).
"""

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import elements, kernels
from .dofs import DofHandler, _PointSet


def radau_nodes(r):
    """Right Gauss-Radau points on [0,1] for dG(r), r in {0,1}."""
    if r == 0:
        return np.array([1.0])
    if r == 1:
        return np.array([1.0 / 3.0, 1.0])
    raise ValueError("only r in {0,1} supported")


class TimePartition:
    def __init__(self, boundaries):
        b = np.asarray(boundaries, dtype=float)
        if np.any(np.diff(b) <= 0):
            raise ValueError("slab boundaries must increase strictly")
        self.boundaries = b

    @classmethod
    def uniform(cls, T, n):
        return cls(np.linspace(0.0, T, n + 1))

    @property
    def n_slabs(self):
        return len(self.boundaries) - 1

    def tau(self, n):
        return self.boundaries[n + 1] - self.boundaries[n]

    @property
    def taus(self):
        return np.diff(self.boundaries)

    def times(self, n, xhat):
        return self.boundaries[n] + self.tau(n) * np.asarray(xhat)

    def bisect(self, marks, merges=()):
        """New partition with marked slabs halved and marked pairs merged.

        merges: iterable of slab indices n meaning slabs (n, n+1) merge; a
        slab can take part in at most one merge and not also be bisected.
        """
        marks = set(marks)
        merges = sorted(set(merges))
        drop = set()
        for n in merges:
            if n + 1 < self.n_slabs and n not in drop and (n + 1) not in drop \
                    and n not in marks and (n + 1) not in marks:
                drop.add(n + 1)   # boundary between n and n+1 disappears
        keep = [self.boundaries[0]]
        for n in range(self.n_slabs):
            if n in marks:
                keep.append(0.5 * (self.boundaries[n] + self.boundaries[n + 1]))
            if (n + 1) in drop:
                continue
            keep.append(self.boundaries[n + 1])
        return TimePartition(np.array(keep))


class SpaceTimeFunction:
    """Per-slab time-polynomial field with spatial coefficient vectors.

    coeffs[n] has shape (n_modes, n_dofs); the time basis is Lagrange on
    `nodes` in the reference slab [0,1].
    """

    def __init__(self, handler, partition, nodes, coeffs, initial=None):
        self.handler = handler
        self.partition = partition
        self.nodes = np.asarray(nodes, dtype=float)
        self.lag = elements.Lagrange1D(self.nodes)
        self.coeffs = coeffs
        self.initial = initial

    @property
    def n_modes(self):
        return len(self.nodes)

    def value_at(self, n, xhat):
        row = self.lag.eval([xhat])[0]
        return row @ self.coeffs[n]

    def left_value(self, n):
        return self.value_at(n, 0.0)

    def right_value(self, n):
        return self.value_at(n, 1.0)

    def final_value(self):
        return self.right_value(len(self.coeffs) - 1)


def reconstruct_in_time(field, anchor="left"):
    """Degree r+1 reconstruction preserving slab Gauss-node values.

    Continuity is anchored on one side: 'left' chains forward from the
    initial value, 'right' chains backward from the final trace (used for
    adjoint fields).
    """
    r = field.n_modes - 1
    g, _ = elements.gauss_points_weights(r + 1)
    if anchor == "left":
        nodes = np.concatenate(([0.0], g))
    else:
        nodes = np.concatenate((g, [1.0]))
    Eg = field.lag.eval(g)                    # old basis at Gauss nodes
    new_lag = elements.Lagrange1D(nodes)
    N = len(field.coeffs)
    coeffs = [None] * N
    if anchor == "left":
        row1 = new_lag.eval([1.0])[0]
        prev = field.initial
        for n in range(N):
            c = np.empty((r + 2, field.coeffs[n].shape[1]))
            c[0] = prev if prev is not None else Eg[0] @ field.coeffs[n]
            c[1:] = Eg @ field.coeffs[n]
            coeffs[n] = c
            prev = row1 @ c
    else:
        row0 = new_lag.eval([0.0])[0]
        nxt = field.right_value(N - 1)
        for n in range(N - 1, -1, -1):
            c = np.empty((r + 2, field.coeffs[n].shape[1]))
            c[:r + 1] = Eg @ field.coeffs[n]
            c[r + 1] = nxt
            coeffs[n] = c
            nxt = row0 @ c
    return SpaceTimeFunction(field.handler, field.partition, nodes, coeffs,
                             initial=field.initial)


# -- spatial cache and assembly -------------------------------------------

class SpaceCache:
    """Per-mesh tables shared by assembly and estimation.

    Tabulates basis values / physical gradients / physical Laplacians for
    the primal and adjoint degrees at a single quadrature rule, plus the
    coefficient fields and SUPG parameters at the quadrature points.
    """

    def __init__(self, mesh_obj, problem, p, delta0=0.1):
        self.mesh = mesh_obj
        self.problem = problem
        self.p, self.q = p, 2 * p
        self.delta0 = delta0
        self.quad = elements.gauss_rule(2 * p + 2)
        self.leaves = mesh_obj.leaves()
        self.corners = mesh_obj.leaf_corner_array(self.leaves)
        self.frame = elements.map_frame(self.corners, self.quad)
        self.xq = self.frame.phys_points          # (C,Q,2)
        self.wdet = self.frame.wdet               # (C,Q)
        self.area = self.frame.area()
        self.delta = delta0 * np.sqrt(self.area)  # (C,)
        self.tab = {}
        for deg in {p, 2 * p}:
            elem = elements.make_element(deg, deg)
            val, gref, href = elem.tabulate(self.quad.points)
            grad = self.frame.push_gradients(gref)
            hess = self.frame.push_hessians(href, grad)
            lap = hess[..., 0, 0] + hess[..., 1, 1]
            self.tab[deg] = (val, grad, lap)
        b = problem.b
        if callable(b):
            self.bq = np.asarray(b(self.xq[..., 0], self.xq[..., 1]))
        else:
            self.bq = np.asarray(b, dtype=float)   # (2,)
        a = problem.alpha
        self.alphaq = a(self.xq[..., 0], self.xq[..., 1]) if callable(a) else float(a)

    def b_dot_grad(self, grad):
        """(C, nloc, Q) = b . physical gradient tables."""
        if self.bq.ndim == 1:
            return grad @ self.bq
        return np.einsum('cnqd,cqd->cnq', grad, self.bq)

    # -- global matrices ----------------------------------------------------

    def matrices(self, handler):
        """Dict of global sparse operators on handler's space."""
        deg = handler.p
        val, grad, lap = self.tab[deg]
        C, nloc = grad.shape[0], grad.shape[1]
        w = self.wdet
        bg = self.b_dot_grad(grad)                      # (C,n,Q)
        vq = np.broadcast_to(val[None], (C, nloc, self.quad.n))

        def acc(A, B):
            # A,B given as (C, nloc, Q); kernel wants (C,Q,nloc)
            return kernels.pairwise_accumulate(
                np.ascontiguousarray(np.swapaxes(A, 1, 2)),
                np.ascontiguousarray(np.swapaxes(B, 1, 2)))

        wv = vq * w[:, None, :]
        M = acc(wv, vq)
        K = sum(acc(grad[..., d] * w[:, None, :], grad[..., d]) for d in range(2))
        Cc = acc(wv, bg)
        if np.isscalar(self.alphaq):
            R = self.alphaq * M
        else:
            R = acc(vq * (self.alphaq * w)[:, None, :], vq)
        sbg = bg * self.delta[:, None, None] * w[:, None, :]
        Sm = acc(sbg, vq)
        Lop = -self.problem.epsilon * lap + bg + \
            (self.alphaq if np.isscalar(self.alphaq)
             else self.alphaq[:, None, :]) * vq
        Sl = acc(sbg, Lop)

        dofs = handler.cell_dofs
        rows = np.repeat(dofs[:, :, None], nloc, axis=2).ravel()
        cols = np.repeat(dofs[:, None, :], nloc, axis=1).ravel()
        n = handler.n_dofs

        def glob(Mat):
            return sp.csr_matrix((Mat.ravel(), (rows, cols)), shape=(n, n))

        out = {"M": glob(M), "K": glob(K), "Sm": glob(Sm), "Sl": glob(Sl)}
        out["A0"] = self.problem.epsilon * out["K"] + glob(Cc) + glob(R)
        return out

    # -- load vectors ---------------------------------------------------------

    def load_vector(self, handler, gq, supg=True):
        """Assemble (g, phi_i) [+ delta (g, b.grad phi_i)] for gq (C,Q)."""
        val, grad, lap = self.tab[handler.p]
        w = self.wdet
        cellv = np.einsum('cq,nq,cq->cn', gq, val, w)
        if supg:
            bg = self.b_dot_grad(grad)
            cellv += self.delta[:, None] * np.einsum('cq,cnq,cq->cn', gq, bg, w)
        vec = np.zeros(handler.n_dofs)
        np.add.at(vec, handler.cell_dofs, cellv)
        return vec

    def integral_vector(self, handler):
        return self.load_vector(handler, np.ones_like(self.wdet), supg=False)

    def eval_coeffs(self, handler, vec_or_cellcoefs):
        """Gather cell-local coefficients (C, nloc) from a global vector."""
        return vec_or_cellcoefs[handler.cell_dofs]

    def eval_values(self, handler, cf):
        val, _, _ = self.tab[handler.p]
        return np.einsum('...ci,iq->...cq', cf, val)


def evaluate_f(problem, xq, t):
    if problem.f is None:
        return np.zeros(xq.shape[:-1])
    return problem.f(xq[..., 0], xq[..., 1], t)


# -- linear solve -----------------------------------------------------------

class LinearSystem:
    def __init__(self, matrix, rhs):
        self.matrix = sp.csc_matrix(matrix)
        self.rhs = np.asarray(rhs, dtype=float)


def linear_solve(system):
    """Direct sparse LU with a relative residual check."""
    A, b = system.matrix, system.rhs
    lu = splu(A)
    x = lu.solve(b)
    nb = np.linalg.norm(b)
    res = np.linalg.norm(A @ x - b)
    if res > 1e-10 * max(nb, 1.0):
        raise RuntimeError(f"direct solve residual {res:.3e} too large")
    return x


# -- time-basis integrals -----------------------------------------------------

def _time_blocks(r):
    psi = elements.Lagrange1D(radau_nodes(r))
    tq, tw = elements.gauss_points_weights(r + 2)
    V = psi.eval(tq)                  # (nq, modes)
    D = psi.eval_deriv(tq)
    Dt = np.einsum('q,qm,qa->am', tw, D, V)     # int psi_m' psi_a
    Wt = np.einsum('q,qm,qa->am', tw, V, V)
    psi0 = psi.eval([0.0])[0]
    psi1 = psi.eval([1.0])[0]
    return psi, tq, tw, Dt, Wt, psi0, psi1


# -- primal solve -------------------------------------------------------------

def solve_primal(problem, mesh_obj, partition, p=1, r=0, delta0=0.1,
                 cache=None, handler=None):
    cache = cache or SpaceCache(mesh_obj, problem, p, delta0)
    handler = handler or DofHandler(mesh_obj, p)
    mats = cache.matrices(handler)
    A_sp = mats["A0"] + mats["Sl"]
    M_sp = mats["M"] + mats["Sm"]
    P, L = handler.P, handler.L

    if problem.stationary:
        g = handler.dirichlet_values(problem.boundary, t=None)
        rhs = cache.load_vector(handler, evaluate_f(problem, cache.xq, None))
        Af = (P.T @ A_sp @ P).tocsc()
        bf = P.T @ (rhs - A_sp @ (L @ g))
        uf = linear_solve(LinearSystem(Af, bf))
        full = handler.expand(uf, g)
        part = partition or TimePartition([0.0, 1.0])
        return SpaceTimeFunction(handler, part, [1.0], [full[None, :].copy()],
                                 initial=full.copy())

    psi, tq, tw, Dt, Wt, psi0, psi1 = _time_blocks(r)
    modes = r + 1
    Mc = (P.T @ M_sp @ P).tocsr()
    Ac = (P.T @ A_sp @ P).tocsr()
    TM = Dt + np.outer(psi0, psi0)
    lus = {}
    coeffs = []
    # initial data
    if problem.u0 is not None:
        u0q = problem.u0(cache.xq[..., 0], cache.xq[..., 1])
        u0_vec = cache.load_vector(handler, u0q)
        init_full = np.array([problem.u0(x, y) for x, y in handler.positions])
    else:
        u0_vec = np.zeros(handler.n_dofs)
        init_full = np.zeros(handler.n_dofs)
    prev_full = None
    for n in range(partition.n_slabs):
        tau = partition.tau(n)
        key = round(tau, 14)
        if key not in lus:
            A_slab = sp.kron(TM, Mc) + tau * sp.kron(Wt, Ac)
            lus[key] = splu(sp.csc_matrix(A_slab))
        g = np.array([handler.dirichlet_values(
            problem.boundary, t=partition.times(n, node))
            for node in psi.nodes])                       # (modes, ndir)
        Gfull = np.array([L @ gm for gm in g])            # (modes, n)
        rhs_full = np.zeros((modes, handler.n_dofs))
        for iq in range(len(tq)):
            fv = cache.load_vector(
                handler, evaluate_f(problem, cache.xq, partition.times(n, tq[iq])))
            rhs_full += tau * tw[iq] * np.outer(psi.eval([tq[iq]])[0], fv)
        if n == 0:
            rhs_full += np.outer(psi0, u0_vec)
        else:
            rhs_full += np.outer(psi0, M_sp @ prev_full)
        # Dirichlet lift through the slab operator
        lift = np.einsum('am,mi->ai', TM, (M_sp @ Gfull.T).T) \
            + tau * np.einsum('am,mi->ai', Wt, (A_sp @ Gfull.T).T)
        bf = np.concatenate([P.T @ (rhs_full[m] - lift[m]) for m in range(modes)])
        sol = lus[key].solve(bf)
        nf = handler.n_free
        coef = np.array([handler.expand(sol[m * nf:(m + 1) * nf], g[m])
                         for m in range(modes)])
        coeffs.append(coef)
        prev_full = psi1 @ coef
    return SpaceTimeFunction(handler, partition, psi.nodes, coeffs,
                             initial=init_full)


# -- adjoint solve --------------------------------------------------------

def solve_adjoint(problem, mesh_obj, partition, u_field, goal, p=1, r=0,
                  delta0=0.1, cache=None, handler_q=None):
    """Backward dG(r) march for the adjoint in spatial degree q = 2p."""
    cache = cache or SpaceCache(mesh_obj, problem, p, delta0)
    handler_q = handler_q or DofHandler(mesh_obj, 2 * p)
    mats = cache.matrices(handler_q)
    A_T = (mats["A0"] + mats["Sl"]).T.tocsr()
    M_q = mats["M"]
    SmT = mats["Sm"].T.tocsr()
    P = handler_q.P
    jsrc = _goal_source(goal, problem, cache, handler_q, u_field)

    if problem.stationary:
        Af = (P.T @ A_T @ P).tocsc()
        bf = P.T @ jsrc.volume_vector(0, None)
        zf = linear_solve(LinearSystem(Af, bf))
        full = handler_q.expand(zf)
        part = u_field.partition
        return SpaceTimeFunction(handler_q, part, [1.0], [full[None, :].copy()],
                                 initial=full.copy())

    psi, tq, tw, Dt, Wt, psi0, psi1 = _time_blocks(r)
    modes = r + 1
    Mc = (P.T @ M_q @ P).tocsr()
    SmTc = (P.T @ SmT @ P).tocsr()
    Ac = (P.T @ A_T @ P).tocsr()
    TM = -Dt + np.outer(psi1, psi1)
    lus = {}
    N = partition.n_slabs
    coeffs = [None] * N
    z_next_left = None
    MSm = (M_q + SmT).tocsr()
    for n in range(N - 1, -1, -1):
        tau = partition.tau(n)
        key = round(tau, 14)
        if key not in lus:
            A_slab = sp.kron(TM, Mc) + sp.kron(Dt.T, SmTc) \
                + sp.kron(np.outer(psi0, psi0), SmTc) + tau * sp.kron(Wt, Ac)
            lus[key] = splu(sp.csc_matrix(A_slab))
        rhs_full = np.zeros((modes, handler_q.n_dofs))
        for iq in range(len(tq)):
            jv = jsrc.volume_vector(n, tq[iq])
            if jv is not None:
                rhs_full += tau * tw[iq] * np.outer(psi.eval([tq[iq]])[0], jv)
        if n == N - 1:
            tv = jsrc.terminal_vector()
            if tv is not None:
                rhs_full += np.outer(psi1, tv)
        else:
            rhs_full += np.outer(psi1, MSm @ z_next_left)
        bf = np.concatenate([P.T @ rhs_full[m] for m in range(modes)])
        sol = lus[key].solve(bf)
        nf = handler_q.n_free
        coef = np.array([handler_q.expand(sol[m * nf:(m + 1) * nf])
                         for m in range(modes)])
        coeffs[n] = coef
        z_next_left = psi0 @ coef
    return SpaceTimeFunction(handler_q, partition, psi.nodes, coeffs,
                             initial=None)


class _goal_source:
    """Adjoint right-hand side J'(u)(.) evaluated against a handler's basis."""

    def __init__(self, goal, problem, cache, handler, u_field):
        self.goal = goal
        self.problem = problem
        self.cache = cache
        self.handler = handler
        self.u_field = u_field
        if goal.variant == "mean":
            self.vec = cache.integral_vector(handler)
        elif goal.variant == "point":
            w = goal.dirac(cache.xq[..., 0], cache.xq[..., 1])
            self.vec = cache.load_vector(handler, w, supg=False)
        elif goal.variant == "l2l2":
            if problem.exact is None:
                raise ValueError("L2L2 goal needs an exact solution")
            self.norm = space_time_error_norm(cache, u_field, problem)
        else:
            raise ValueError(f"unknown goal variant {goal.variant!r}")

    def _error_at(self, n, xhat):
        c = self.cache
        t = self.u_field.partition.times(n, xhat)
        ue = self.problem.exact(c.xq[..., 0], c.xq[..., 1], t)
        cf = self.u_field.value_at(n, xhat)[self.u_field.handler.cell_dofs]
        uh = c.eval_values(self.u_field.handler, cf)
        return ue - uh

    def volume_vector(self, n, xhat):
        if self.goal.variant == "mean":
            return self.vec
        if self.goal.variant == "point":
            return None
        if self.norm == 0.0:
            return np.zeros(self.handler.n_dofs)
        e = self._error_at(n, xhat)
        return self.cache.load_vector(self.handler, e / self.norm, supg=False)

    def terminal_vector(self):
        return self.vec if self.goal.variant == "point" else None


def space_time_error_norm(cache, u_field, problem):
    """L2(L2) norm of u_exact - u_field over the space-time cylinder."""
    r = u_field.n_modes - 1
    tq, tw = elements.gauss_points_weights(r + 2)
    total = 0.0
    part = u_field.partition
    for n in range(part.n_slabs):
        tau = part.tau(n)
        for iq, x in enumerate(tq):
            t = part.times(n, x)
            ue = problem.exact(cache.xq[..., 0], cache.xq[..., 1], t)
            cf = u_field.value_at(n, x)[u_field.handler.cell_dofs]
            uh = cache.eval_values(u_field.handler, cf)
            total += tau * tw[iq] * np.sum(cache.wdet * (ue - uh) ** 2)
    return np.sqrt(total)


# -- point evaluation ---------------------------------------------------------

class PointEvaluator:
    """Evaluate a nodal field at arbitrary physical points on the leaf mesh."""

    def __init__(self, mesh_obj, handler):
        self.mesh = mesh_obj
        self.handler = handler
        self.leaves = mesh_obj.leaves()
        self.corners = mesh_obj.leaf_corner_array(self.leaves)
        self.bb_lo = self.corners.min(axis=1)
        self.bb_hi = self.corners.max(axis=1)
        self.elem = handler.elem

    def _inverse_map(self, c, xy):
        corners = self.corners[c]
        ref = np.array([0.5, 0.5])
        for _ in range(30):
            x, y = ref
            N = np.array([(1 - x) * (1 - y), x * (1 - y), x * y, (1 - x) * y])
            res = N @ corners - xy
            if abs(res[0]) + abs(res[1]) < 1e-13:
                break
            Nx = np.array([-(1 - y), (1 - y), y, -y])
            Ny = np.array([-(1 - x), -x, x, (1 - x)])
            J = np.stack([Nx @ corners, Ny @ corners], axis=1)
            ref = ref - np.linalg.solve(J, res)
        return ref

    def __call__(self, vec, points):
        points = np.atleast_2d(points)
        out = np.full(len(points), np.nan)
        tol = 1e-9
        for k, xy in enumerate(points):
            cand = np.where(np.all(xy >= self.bb_lo - tol, axis=1)
                            & np.all(xy <= self.bb_hi + tol, axis=1))[0]
            for c in cand:
                ref = self._inverse_map(c, xy)
                if -tol <= ref[0] <= 1 + tol and -tol <= ref[1] <= 1 + tol:
                    val, _, _ = self.elem.tabulate(ref[None, :])
                    dofs = self.handler.cell_dofs[c]
                    out[k] = val[:, 0] @ vec[dofs]
                    break
        return out
