"""Goal-oriented space-time error estimation with directional splitting.

Computes the temporal estimator eta_tau, the isotropic spatial estimator
eta_h, the directional estimators eta_h1 / eta_h2 and the remainder eta_hE,
localized per (cell, slab).  Weights combine the higher-order adjoint field
(restricted cell-wise to lower order) with a patch-recovered primal field;
temporal weights come from the degree r+1 reconstruction.  All stabilization
terms reuse the assembly's SUPG parameter and quadrature so that the primal
and adjoint residual functionals vanish on discrete test functions.
"""

import numpy as np

from . import elements, transfer
from .solver import (SpaceCache, evaluate_f, reconstruct_in_time,
                     space_time_error_norm)


class IndicatorField:
    """Per-(slab, cell) localized indicators with accumulation views.

    eta_tau_cell: (N, C); eta_dir: (N, C, 2); eta_iso, eta_rem: (N, C).
    """

    def __init__(self, eta_tau_cell, eta_dir, eta_iso, eta_rem, cell_ids):
        self.eta_tau_cell = eta_tau_cell
        self.eta_dir = eta_dir
        self.eta_iso = eta_iso
        self.eta_rem = eta_rem
        self.cell_ids = list(cell_ids)

    @property
    def eta_tau(self):
        return float(self.eta_tau_cell.sum())

    @property
    def eta_tau_slab(self):
        return self.eta_tau_cell.sum(axis=1)

    @property
    def eta_hx(self):
        return float(self.eta_dir[:, :, 0].sum())

    @property
    def eta_hy(self):
        return float(self.eta_dir[:, :, 1].sum())

    @property
    def eta_h(self):
        return float(self.eta_iso.sum())

    @property
    def eta_hE(self):
        return float(self.eta_rem.sum())

    def cell_totals(self):
        """Slab-accumulated directional indicators, (C, 2)."""
        return self.eta_dir.sum(axis=0)

    def splitting_residual(self):
        return abs(self.eta_h - (self.eta_hx + self.eta_hy + self.eta_hE))

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("slab,cell_id,eta_tau,eta_hx,eta_hy\n")
            N, C = self.eta_tau_cell.shape
            for n in range(N):
                for k in range(C):
                    fh.write("%d,%d,%.16e,%.16e,%.16e\n" % (
                        n, self.cell_ids[k], self.eta_tau_cell[n, k],
                        self.eta_dir[n, k, 0], self.eta_dir[n, k, 1]))


class Estimator:
    """Evaluates the localized error indicators for one primal/adjoint pair.

    The primal field lives in degree p, the adjoint in degree 2p on the same
    mesh and time partition.
    """

    def __init__(self, problem, u_field, z_field, cache=None):
        hp, hq = u_field.handler, z_field.handler
        if hq.p != 2 * hp.p:
            raise ValueError("adjoint degree must be twice the primal degree")
        if hp.mesh is not hq.mesh:
            raise ValueError("primal and adjoint live on different meshes")
        self.problem = problem
        self.u = u_field
        self.z = z_field
        self.hp, self.hq = hp, hq
        self.p, self.q = hp.p, hq.p
        self.cache = cache or SpaceCache(hp.mesh, problem, self.p)
        self.stat = problem.stationary
        self.C = len(self.cache.leaves)
        self.part = u_field.partition
        self.N = 1 if self.stat else self.part.n_slabs
        self.eps = problem.epsilon

        p = self.p
        self.Rm = transfer.restriction_matrix(p)
        self.R1 = transfer.restriction_matrix_dir(p, 1)
        self.R2 = transfer.restriction_matrix_dir(p, 2)
        self.Em = transfer.remainder_matrix(p)
        self.Rsp = transfer.recovery_operator(hp.mesh, hp, hq)
        self.nq = hq.elem.ndof

        self.bgtab = {d: self.cache.b_dot_grad(self.cache.tab[d][1])
                      for d in {self.p, self.q}}

        if self.stat:
            self.tw = np.array([1.0])
            self.L = np.array([[1.0]])
            self.Ld = np.zeros((1, 1))
            self.L0 = np.array([1.0])
            self.L1 = np.array([1.0])
        else:
            r = u_field.n_modes - 1
            self.r = r
            tq, tw = elements.gauss_points_weights(r + 2)
            self.tq, self.tw = tq, tw
            lag = u_field.lag
            self.L = lag.eval(tq)
            self.Ld = lag.eval_deriv(tq)
            self.L0 = lag.eval([0.0])[0]
            self.L1 = lag.eval([1.0])[0]
            self.Eu = reconstruct_in_time(u_field, anchor="left")
            self.Ez = reconstruct_in_time(z_field, anchor="right")
            self.LEu = self.Eu.lag.eval(tq)
            self.LEu1 = self.Eu.lag.eval([1.0])[0]
            self.LEz = self.Ez.lag.eval(tq)
            self.LEz0 = self.Ez.lag.eval([0.0])[0]

        goal = problem.goal
        self.goal = goal
        if goal.variant == "l2l2":
            self.norm = space_time_error_norm(self.cache, u_field, problem)
        elif goal.variant == "point":
            self.diracq = goal.dirac(self.cache.xq[..., 0],
                                     self.cache.xq[..., 1])

    # -- evaluation helpers ----------------------------------------------------

    def _modal(self, coefs, deg, lap=False):
        """Spatial tables for modal coefficients (m, C, nloc)."""
        val, grad, lapt = self.cache.tab[deg]
        out = {"val": np.einsum('mcn,nq->mcq', coefs, val),
               "grad": np.einsum('mcn,cnqd->mcqd', coefs, grad),
               "bg": np.einsum('mcn,cnq->mcq', coefs, self.bgtab[deg])}
        if lap:
            out["lap"] = np.einsum('mcn,cnq->mcq', coefs, lapt)
        return out

    @staticmethod
    def _series(rows, arr):
        """Combine modal arrays with time rows: (T,m) x (m,...) -> (T,...)."""
        return np.einsum('tm,m...->t...', rows, arr)

    @staticmethod
    def _at(row, arr):
        return np.einsum('m,m...->...', row, arr)

    def _int_cell(self, a):
        return np.sum(self.cache.wdet * a, axis=1)

    # -- residual building blocks (all return per-cell vectors) ----------------

    def _rho(self, tau, g_r, u_grad_s, w_val_s, w_grad_s, jump_u, w_val0):
        """Unstabilized primal residual against the weight w, per cell."""
        out = np.zeros(self.C)
        for t in range(len(self.tw)):
            integ = g_r[t] * w_val_s[t] \
                - self.eps * np.sum(u_grad_s[t] * w_grad_s[t], axis=-1)
            out += tau * self.tw[t] * self._int_cell(integ)
        if jump_u is not None:
            out -= self._int_cell(jump_u * w_val0)
        return out

    def _S(self, tau, r_u, w_bg_s, jump_u, w_bg0):
        """SUPG consistency term delta (r(u), b.grad w), per cell."""
        out = np.zeros(self.C)
        for t in range(len(self.tw)):
            out += tau * self.tw[t] * self._int_cell(r_u[t] * w_bg_s[t])
        if jump_u is not None:
            out += self._int_cell(jump_u * w_bg0)
        return out * self.cache.delta

    def _aprime(self, tau, n, w_val_s, w_grad_s, w_bg_s, w_val1,
                Z_val_s, Z_grad_s, Z_dt_s, Z_val1, Z_next0):
        """Adjoint-form pairing A'(w, Z) restricted to cells, per cell."""
        alpha = self.cache.alphaq
        out = np.zeros(self.C)
        for t in range(len(self.tw)):
            integ = self.eps * np.sum(w_grad_s[t] * Z_grad_s[t], axis=-1) \
                + w_bg_s[t] * Z_val_s[t] + alpha * w_val_s[t] * Z_val_s[t]
            if Z_dt_s is not None:
                integ = integ - w_val_s[t] * Z_dt_s[t]
            out += tau * self.tw[t] * self._int_cell(integ)
        if not self.stat:
            if n < self.N - 1:
                out -= self._int_cell(w_val1 * (Z_next0 - Z_val1))
            else:
                out += self._int_cell(w_val1 * Z_val1)
        return out

    def _sprime(self, tau, w_val_s, w_dt_s, w_lap_s, w_bg_s,
                w_val0, w_prev, Z_bg_s, Z_bg0):
        """Adjoint SUPG pairing S'(w, Z), per cell."""
        alpha = self.cache.alphaq
        out = np.zeros(self.C)
        for t in range(len(self.tw)):
            strong = -self.eps * w_lap_s[t] + w_bg_s[t] + alpha * w_val_s[t]
            if w_dt_s is not None:
                strong = strong + w_dt_s[t]
            out += tau * self.tw[t] * self._int_cell(strong * Z_bg_s[t])
        if not self.stat:
            jump = w_val0 if w_prev is None else w_val0 - w_prev
            out += self._int_cell(jump * Z_bg0)
        return out * self.cache.delta

    def _jprime(self, tau, n, w_val_s, w_val1, e_s=None):
        """Goal linearization J'(u)(w), per cell."""
        g = self.goal
        out = np.zeros(self.C)
        if g.variant == "l2l2":
            for t in range(len(self.tw)):
                out += tau * self.tw[t] * self._int_cell(e_s[t] * w_val_s[t])
        elif g.variant == "mean":
            for t in range(len(self.tw)):
                out += tau * self.tw[t] * self._int_cell(w_val_s[t])
        elif g.variant == "point":
            if n == self.N - 1:
                out += self._int_cell(self.diracq * w_val1)
        else:
            raise ValueError(f"unknown goal variant {g.variant!r}")
        return out

    # -- per-slab primal state --------------------------------------------------

    def _slab_times(self, n):
        if self.stat:
            return [None]
        return [self.part.times(n, x) for x in self.tq]

    def _primal_state(self, n, u_prev):
        """Evaluate the primal solution and its strong residual on slab n."""
        tau = 1.0 if self.stat else self.part.tau(n)
        uc = self.u.coeffs[n][:, self.hp.cell_dofs]
        um = self._modal(uc, self.p, lap=True)
        u_val_s = self._series(self.L, um["val"])
        u_grad_s = self._series(self.L, um["grad"])
        u_bg_s = self._series(self.L, um["bg"])
        u_lap_s = self._series(self.L, um["lap"])
        alpha = self.cache.alphaq
        fq_s = np.stack([evaluate_f(self.problem, self.cache.xq, t)
                         for t in self._slab_times(n)])
        if self.stat:
            u_dt_s = np.zeros_like(u_val_s)
            jump_u = None
            u_right = None
        else:
            u_dt_s = self._series(self.Ld, um["val"]) / tau
            jump_u = self._at(self.L0, um["val"]) - u_prev
            u_right = self._at(self.L1, um["val"])
        g_r = fq_s - u_dt_s - u_bg_s - alpha * u_val_s
        r_u = -g_r - self.eps * u_lap_s
        state = {"tau": tau, "um": um, "u_val_s": u_val_s,
                 "u_grad_s": u_grad_s, "g_r": g_r, "r_u": r_u,
                 "jump_u": jump_u, "u_right": u_right}
        if self.goal.variant == "l2l2":
            if self.norm == 0.0:
                state["e_s"] = np.zeros_like(u_val_s)
            else:
                xq = self.cache.xq
                ue = np.stack([self.problem.exact(xq[..., 0], xq[..., 1], t)
                               for t in self._slab_times(n)])
                state["e_s"] = (ue - u_val_s) / self.norm
        else:
            state["e_s"] = None
        return state

    def _initial_u_values(self):
        """Analytic initial data at quadrature points (assembly pairing)."""
        if self.problem.u0 is None:
            return np.zeros_like(self.cache.wdet)
        return self.problem.u0(self.cache.xq[..., 0], self.cache.xq[..., 1])

    def _z_modal(self, n, op=None):
        zc = self.z.coeffs[n][:, self.hq.cell_dofs]
        return zc if op is None else zc @ op.T

    def _recovered_modal(self, n):
        cf = (self.Rsp @ self.u.coeffs[n].T).T
        return cf.reshape(len(cf), self.C, self.nq)

    # -- full indicator evaluation ----------------------------------------------

    def compute(self):
        N, C = self.N, self.C
        eta_tau_cell = np.zeros((N, C))
        eta_dir = np.zeros((N, C, 2))
        eta_iso = np.zeros((N, C))
        eta_rem = np.zeros((N, C))

        zops = {"z": None, "rz": self.Rm, "r1z": self.R1, "r2z": self.R2,
                "ez": self.Em}
        vops = {"v": None, "rv": self.Rm, "r1v": self.R1, "r2v": self.R2,
                "ev": self.Em}

        u_prev = None if self.stat else self._initial_u_values()
        if self.stat:
            v_prev = {k: None for k in vops}
        else:
            v_init = (self.Rsp @ self.u.initial).reshape(self.C, self.nq)
            val_q = self.cache.tab[self.q][0]
            v_prev = {}
            for k, op in vops.items():
                cf = v_init if op is None else v_init @ op.T
                v_prev[k] = np.einsum('cn,nq->cq', cf, val_q)

        for n in range(N):
            st = self._primal_state(n, u_prev)
            tau, g_r, r_u = st["tau"], st["g_r"], st["r_u"]
            u_grad_s, jump_u = st["u_grad_s"], st["jump_u"]

            # adjoint family: values / gradients / transport derivatives
            zm = {k: self._modal(self._z_modal(n, op), self.q)
                  for k, op in zops.items()}
            zs = {k: {"val": self._series(self.L, m["val"]),
                      "grad": self._series(self.L, m["grad"]),
                      "bg": self._series(self.L, m["bg"]),
                      "val0": self._at(self.L0, m["val"]),
                      "bg0": self._at(self.L0, m["bg"])}
                  for k, m in zm.items()}
            if not self.stat:
                z_dt_s = self._series(self.Ld, zm["z"]["val"]) / tau
                rz_dt_s = self._series(self.Ld, zm["rz"]["val"]) / tau
                z_val1 = self._at(self.L1, zm["z"]["val"])
                rz_val1 = self._at(self.L1, zm["rz"]["val"])
                if n < N - 1:
                    znext = self._at(self.L0, self.z.coeffs[n + 1])
                    znc = znext[self.hq.cell_dofs]
                    val_q = self.cache.tab[self.q][0]
                    z_next0 = np.einsum('cn,nq->cq', znc, val_q)
                    rz_next0 = np.einsum('cn,nq->cq', znc @ self.Rm.T, val_q)
                else:
                    z_next0 = rz_next0 = None
            else:
                z_dt_s = rz_dt_s = None
                z_val1 = rz_val1 = z_next0 = rz_next0 = None

            # recovered primal family (weights of the adjoint residual)
            vm_base = self._recovered_modal(n)
            rho_b, s_b, rs_b, sp_b = {}, {}, {}, {}
            for k, op in zops.items():
                w = zs[k]
                rho_b[k] = self._rho(tau, g_r, u_grad_s, w["val"], w["grad"],
                                     jump_u, w["val0"])
                s_b[k] = self._S(tau, r_u, w["bg"], jump_u, w["bg0"])
            for k, op in vops.items():
                cf = vm_base if op is None else vm_base @ op.T
                m = self._modal(cf, self.q, lap=True)
                w_val_s = self._series(self.L, m["val"])
                w_grad_s = self._series(self.L, m["grad"])
                w_bg_s = self._series(self.L, m["bg"])
                w_lap_s = self._series(self.L, m["lap"])
                if self.stat:
                    w_dt_s = None
                    w_val0 = w_val1 = None
                else:
                    w_dt_s = self._series(self.Ld, m["val"]) / tau
                    w_val0 = self._at(self.L0, m["val"])
                    w_val1 = self._at(self.L1, m["val"])
                rs_b[k] = self._jprime(tau, n, w_val_s, w_val1, st["e_s"]) \
                    - self._aprime(tau, n, w_val_s, w_grad_s, w_bg_s, w_val1,
                                   zs["rz"]["val"], zs["rz"]["grad"], rz_dt_s,
                                   rz_val1, rz_next0)
                sp_b[k] = self._sprime(tau, w_val_s, w_dt_s, w_lap_s, w_bg_s,
                                       w_val0, v_prev[k],
                                       zs["rz"]["bg"], zs["rz"]["bg0"])
                if not self.stat:
                    v_prev[k] = w_val1

            eta_iso[n] = 0.5 * (rho_b["z"] - rho_b["rz"]) \
                + 0.5 * (rs_b["v"] - rs_b["rv"]) \
                + 0.5 * (s_b["z"] + s_b["rz"]) \
                + 0.5 * (sp_b["v"] - sp_b["rv"])
            # direction i pairs the weight content that refinement in i
            # removes: on the adjoint side that is z minus its interpolant
            # keeping full order in the *other* direction (the deficit in
            # direction i), on the primal side the recovered enrichment in
            # direction i itself
            eta_dir[n, :, 0] = 0.5 * (rho_b["z"] - rho_b["r2z"]) \
                + 0.5 * (rs_b["r1v"] - rs_b["rv"]) \
                + 0.5 * s_b["r2z"] \
                + 0.5 * (sp_b["r1v"] - sp_b["rv"])
            eta_dir[n, :, 1] = 0.5 * (rho_b["z"] - rho_b["r1z"]) \
                + 0.5 * (rs_b["r2v"] - rs_b["rv"]) \
                + 0.5 * s_b["r1z"] \
                + 0.5 * (sp_b["r2v"] - sp_b["rv"])
            eta_rem[n] = -0.5 * rho_b["ez"] \
                + 0.5 * rs_b["ev"] + 0.5 * s_b["ez"] + 0.5 * sp_b["ev"]

            # temporal indicator from the degree r+1 reconstructions
            if not self.stat:
                Ezc = self.Ez.coeffs[n][:, self.hq.cell_dofs]
                Ezm = self._modal(Ezc, self.q)
                wzt_val = self._series(self.LEz, Ezm["val"]) - zs["z"]["val"]
                wzt_grad = self._series(self.LEz, Ezm["grad"]) - zs["z"]["grad"]
                wzt_val0 = self._at(self.LEz0, Ezm["val"]) - zs["z"]["val0"]
                rho_tau = self._rho(tau, g_r, u_grad_s, wzt_val, wzt_grad,
                                    jump_u, wzt_val0)
                Euc = self.Eu.coeffs[n][:, self.hp.cell_dofs]
                Eum = self._modal(Euc, self.p)
                um = st["um"]
                wut_val = self._series(self.LEu, Eum["val"]) \
                    - self._series(self.L, um["val"])
                wut_grad = self._series(self.LEu, Eum["grad"]) - u_grad_s
                wut_bg = self._series(self.LEu, Eum["bg"]) \
                    - self._series(self.L, um["bg"])
                wut_val1 = self._at(self.LEu1, Eum["val"]) \
                    - self._at(self.L1, um["val"])
                rs_tau = self._jprime(tau, n, wut_val, wut_val1, st["e_s"]) \
                    - self._aprime(tau, n, wut_val, wut_grad, wut_bg,
                                   wut_val1, zs["z"]["val"], zs["z"]["grad"],
                                   z_dt_s, z_val1, z_next0)
                eta_tau_cell[n] = 0.5 * rho_tau + 0.5 * rs_tau
                u_prev = st["u_right"]

        return IndicatorField(eta_tau_cell, eta_dir, eta_iso, eta_rem,
                              [c.id for c in self.cache.leaves])

    # -- Galerkin-orthogonality functionals ---------------------------------------

    def primal_residual(self, phi_field):
        """rho(u)(phi) - S(u)(phi): zero for discrete constrained phi."""
        total = 0.0
        u_prev = None if self.stat else self._initial_u_values()
        for n in range(self.N):
            st = self._primal_state(n, u_prev)
            pc = phi_field.coeffs[n][:, self.hp.cell_dofs]
            pm = self._modal(pc, self.p)
            p_val_s = self._series(self.L, pm["val"])
            p_grad_s = self._series(self.L, pm["grad"])
            p_bg_s = self._series(self.L, pm["bg"])
            if self.stat:
                p_val0 = p_bg0 = None
            else:
                p_val0 = self._at(self.L0, pm["val"])
                p_bg0 = self._at(self.L0, pm["bg"])
            rho = self._rho(st["tau"], st["g_r"], st["u_grad_s"],
                            p_val_s, p_grad_s, st["jump_u"], p_val0)
            s = self._S(st["tau"], st["r_u"], p_bg_s, st["jump_u"], p_bg0)
            total += float((rho - s).sum())
            u_prev = st["u_right"]
        return total

    def adjoint_residual(self, phi_field):
        """J'(u)(phi) - A'(phi, z) - S'(phi, z): zero for discrete phi."""
        total = 0.0
        phi_prev = None     # dG test functions carry no history before t=0
        need_e = self.goal.variant == "l2l2"
        u_prev = None if self.stat else self._initial_u_values()
        for n in range(self.N):
            st = self._primal_state(n, u_prev) if need_e else None
            tau = 1.0 if self.stat else self.part.tau(n)
            zm = self._modal(self._z_modal(n), self.q)
            z_val_s = self._series(self.L, zm["val"])
            z_grad_s = self._series(self.L, zm["grad"])
            z_bg_s = self._series(self.L, zm["bg"])
            pc = phi_field.coeffs[n][:, self.hq.cell_dofs]
            pm = self._modal(pc, self.q, lap=True)
            p_val_s = self._series(self.L, pm["val"])
            p_grad_s = self._series(self.L, pm["grad"])
            p_bg_s = self._series(self.L, pm["bg"])
            p_lap_s = self._series(self.L, pm["lap"])
            if self.stat:
                z_dt_s = p_dt_s = None
                z_val1 = z_next0 = z_bg0 = p_val0 = p_val1 = None
            else:
                z_dt_s = self._series(self.Ld, zm["val"]) / tau
                p_dt_s = self._series(self.Ld, pm["val"]) / tau
                z_val1 = self._at(self.L1, zm["val"])
                z_bg0 = self._at(self.L0, zm["bg"])
                p_val0 = self._at(self.L0, pm["val"])
                p_val1 = self._at(self.L1, pm["val"])
                if n < self.N - 1:
                    znc = self._at(self.L0, self.z.coeffs[n + 1])[
                        self.hq.cell_dofs]
                    val_q = self.cache.tab[self.q][0]
                    z_next0 = np.einsum('cn,nq->cq', znc, val_q)
                else:
                    z_next0 = None
            jp = self._jprime(tau, n, p_val_s, p_val1,
                              st["e_s"] if need_e else None)
            ap = self._aprime(tau, n, p_val_s, p_grad_s, p_bg_s, p_val1,
                              z_val_s, z_grad_s, z_dt_s, z_val1, z_next0)
            spr = self._sprime(tau, p_val_s, p_dt_s, p_lap_s, p_bg_s,
                               p_val0, phi_prev, z_bg_s, z_bg0)
            total += float((jp - ap - spr).sum())
            if not self.stat:
                phi_prev = p_val1
                if need_e:
                    u_prev = st["u_right"]
        return total


# -- convenience front ends ------------------------------------------------------

def estimate(problem, u_field, z_field, cache=None):
    return Estimator(problem, u_field, z_field, cache).compute()


def eta_tau(u_field, z_field, problem, cache=None):
    ind = estimate(problem, u_field, z_field, cache)
    return ind.eta_tau, ind.eta_tau_cell


def eta_dir(i, u_field, z_field, problem, cache=None):
    ind = estimate(problem, u_field, z_field, cache)
    per = ind.eta_dir[:, :, i - 1]
    return float(per.sum()), per


def eta_iso(u_field, z_field, problem, cache=None):
    ind = estimate(problem, u_field, z_field, cache)
    return ind.eta_h, ind.eta_iso


def eta_remainder(u_field, z_field, problem, cache=None):
    return estimate(problem, u_field, z_field, cache).eta_hE


def effectivity(report):
    """(I_eff, I_eff_a) from a DiagnosticReport; None when error unusable."""
    err = report.error
    if err is None or err == 0.0:
        return None, None
    I_eff = abs((report.eta_h + report.eta_tau) / err)
    I_eff_a = abs((report.eta_hx + report.eta_hy + report.eta_tau) / err)
    return I_eff, I_eff_a
