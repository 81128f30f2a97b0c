"""Problem definitions, benchmark instances, goals and diagnostics."""

from dataclasses import dataclass, field

import numpy as np

from . import elements


@dataclass
class GoalFunctional:
    """Quantity of interest driving the adaptivity.

    variant: 'l2l2' (normalized global error), 'mean' (domain average of u),
    or 'point' (regularized point value at final time).
    """
    variant: str
    point: tuple = None
    cutoff: float = None
    dirac: callable = None
    reference: float = None


@dataclass
class ProblemSpec:
    epsilon: float
    b: object                 # constant 2-vector or callable(x, y) -> (...,2)
    alpha: object              # constant or callable(x, y)
    f: callable = None         # f(x, y, t); None means 0
    u0: callable = None        # u0(x, y); None means 0
    boundary: dict = field(default_factory=dict)   # tag -> callable(x,y,t)|const
    T: float = None            # None = stationary
    exact: callable = None     # u(x, y, t)
    goal: GoalFunctional = None

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    @property
    def stationary(self):
        return self.T is None


@dataclass
class DiagnosticReport:
    error: float = None        # J(u) - J(u_tau_h) when computable
    eta_tau: float = 0.0
    eta_hx: float = 0.0
    eta_hy: float = 0.0
    eta_h: float = 0.0
    eta_hE: float = 0.0
    I_eff: float = None
    I_eff_a: float = None
    ar_max: float = None
    N_tot: int = None
    N_space: int = None
    N_time: int = None
    overshoot: float = None
    undershoot: float = None
    y_layer: float = None

    @property
    def eta_tauh(self):
        return self.eta_tau + self.eta_h


# -- benchmark problems -------------------------------------------------------

def _tanh_sech2(theta):
    """Overflow-safe tanh(theta)/cosh(theta)^2."""
    theta = np.asarray(theta, dtype=float)
    out = np.empty_like(theta)
    small = np.abs(theta) < 20.0
    ts = np.where(small, theta, 0.0)
    out = np.where(small, np.tanh(ts) / np.cosh(ts) ** 2,
                   np.sign(theta) * 4.0 * np.exp(-2.0 * np.abs(theta)))
    return out


def interior_layer_problem(epsilon):
    """Moving interior layer on the unit square with known solution.

    u(x,y,t) = (e^{3(t-1)}/2) (1 - tanh((2x - y - 1/2)/sqrt(5 eps))),
    b = (1,2)/sqrt(5), alpha = 1; f follows by substitution (the convection
    is tangential to the layer, so b.grad u = 0).
    """
    s5 = np.sqrt(5.0)
    width = np.sqrt(5.0 * epsilon)

    def theta(x, y):
        return (2.0 * np.asarray(x) - np.asarray(y) - 0.5) / width

    def exact(x, y, t):
        return 0.5 * np.exp(3.0 * (t - 1.0)) * (1.0 - np.tanh(theta(x, y)))

    def f(x, y, t):
        E = np.exp(3.0 * (t - 1.0))
        return 4.0 * exact(x, y, t) - E * _tanh_sech2(theta(x, y))

    def u0(x, y):
        return exact(x, y, 0.0)

    return ProblemSpec(
        epsilon=epsilon,
        b=np.array([1.0, 2.0]) / s5,
        alpha=1.0,
        f=f,
        u0=u0,
        boundary={"dirichlet": exact},
        T=1.0,
        exact=exact,
        goal=GoalFunctional("l2l2"),
    )


def hemker_problem(stationary=True, obstacle="circle", epsilon=1e-4,
                   T=10.0, point=(4.0, 1.0), cutoff=0.5):
    """Flow past an obstacle: b=(1,0), alpha=0, f=0, u=1 on the obstacle."""
    if stationary:
        goal = GoalFunctional("mean")
        T_ = None
    else:
        goal = GoalFunctional("point", point=point, cutoff=cutoff,
                              dirac=regularized_dirac(point, cutoff))
        T_ = T
    return ProblemSpec(
        epsilon=epsilon,
        b=np.array([1.0, 0.0]),
        alpha=0.0,
        f=None,
        u0=None,
        boundary={"dirichlet_obstacle": 1.0, "dirichlet_inflow": 0.0},
        T=T_,
        exact=None,
        goal=goal,
    )


def regularized_dirac(center, s):
    """Smooth bump of unit mass supported on the disc of radius s."""
    cx, cy = center
    # radial normalization: 2 pi int_0^s e^{1 - 1/(1 - r^2/s^2)} r dr
    gx, gw = elements.gauss_points_weights(200)
    rr = gx * s
    mass = 2.0 * np.pi * np.sum(gw * s * rr * np.exp(1.0 - 1.0 / (1.0 - (rr / s) ** 2)))
    amp = 1.0 / mass

    def weight(x, y):
        r2 = (np.asarray(x) - cx) ** 2 + (np.asarray(y) - cy) ** 2
        arg = r2 / s ** 2
        inside = arg < 1.0 - 1e-14
        safe = np.where(inside, arg, 0.0)
        return np.where(inside, amp * np.exp(1.0 - 1.0 / (1.0 - safe)), 0.0)

    return weight


# -- goal evaluation ----------------------------------------------------------

def goal_value(goal, u_field, problem, cache=None):
    """Evaluate J(u_field); L2L2 returns the normalized error functional."""
    from . import solver
    handler = u_field.handler
    if cache is None:
        cache = solver.SpaceCache(handler.mesh, problem, handler.p)
    if goal.variant == "l2l2":
        if problem.exact is None:
            raise ValueError("L2L2 goal needs an exact solution")
        # J(phi) = int (phi, e)/||e|| dt with e = u - u_field; J(u) - J(u_field)
        # then equals ||e||, which is what the diagnostics report
        return _l2l2_pairing(cache, u_field, problem)
    vec = None
    if goal.variant == "mean":
        # works for whichever degree the field carries
        vec_cache = solver.SpaceCache(handler.mesh, problem, handler.p) \
            if handler.p not in cache.tab else cache
        vec = vec_cache.integral_vector(handler)
        if problem.stationary:
            return float(vec @ u_field.final_value())
        psi_int = _time_integral_rows(u_field)
        total = 0.0
        for n in range(u_field.partition.n_slabs):
            total += u_field.partition.tau(n) * (psi_int @ u_field.coeffs[n]) @ vec
        return float(total)
    if goal.variant == "point":
        vec_cache = solver.SpaceCache(handler.mesh, problem, handler.p) \
            if handler.p not in cache.tab else cache
        w = goal.dirac(vec_cache.xq[..., 0], vec_cache.xq[..., 1])
        vec = vec_cache.load_vector(handler, w, supg=False)
        return float(vec @ u_field.final_value())
    raise ValueError(f"unknown goal variant {goal.variant!r}")


def _time_integral_rows(field):
    r = field.n_modes - 1
    tq, tw = elements.gauss_points_weights(r + 2)
    return tw @ field.lag.eval(tq)


def _l2l2_pairing(cache, u_field, problem):
    from . import solver
    norm = solver.space_time_error_norm(cache, u_field, problem)
    if norm == 0.0:
        return 0.0
    # J(u_field) = int (u_field, e) dt / ||e||
    r = u_field.n_modes - 1
    tq, tw = elements.gauss_points_weights(r + 2)
    part = u_field.partition
    total = 0.0
    for n in range(part.n_slabs):
        tau = part.tau(n)
        for iq, x in enumerate(tq):
            t = part.times(n, x)
            ue = problem.exact(cache.xq[..., 0], cache.xq[..., 1], t)
            cf = u_field.value_at(n, x)[u_field.handler.cell_dofs]
            uh = cache.eval_values(u_field.handler, cf)
            total += tau * tw[iq] * np.sum(cache.wdet * uh * (ue - uh))
    return total / norm


def goal_gateaux(goal, u_field, problem, cache=None):
    """phi -> J'(u)(phi), with the L2L2 normalization frozen at u_field."""
    from . import solver
    handler = u_field.handler
    if cache is None:
        cache = solver.SpaceCache(handler.mesh, problem, handler.p)
    src = solver._goal_source(goal, problem, cache, handler, u_field)

    def apply(phi_field):
        if goal.variant == "point":
            return float(src.terminal_vector() @ phi_field.final_value())
        if problem.stationary:
            return float(src.volume_vector(0, None) @ phi_field.final_value())
        r = phi_field.n_modes - 1
        tq, tw = elements.gauss_points_weights(r + 2)
        part = phi_field.partition
        total = 0.0
        for n in range(part.n_slabs):
            tau = part.tau(n)
            for iq, x in enumerate(tq):
                total += tau * tw[iq] * float(
                    src.volume_vector(n, x) @ phi_field.value_at(n, x))
        return total

    return apply


# -- diagnostics --------------------------------------------------------------

def layer_width(sample_fn, x=4.0, y_range=(0.0, 3.0), n=10000):
    """Width of the upper interior layer of a Hemker profile at given x.

    sample_fn: callable(points (m,2)) -> values. Scans upward from y=0 for
    the 0.9 and then the 0.1 crossing; returns None when not converged.
    """
    ys = np.linspace(y_range[0], y_range[1], n)
    pts = np.column_stack([np.full(n, x), ys])
    vals = sample_fn(pts)

    def crossing(level, start):
        for k in range(start, n - 1):
            v0, v1 = vals[k], vals[k + 1]
            if np.isnan(v0) or np.isnan(v1):
                continue
            if (v0 - level) * (v1 - level) <= 0 and v0 != v1:
                return k, ys[k] + (level - v0) * (ys[k + 1] - ys[k]) / (v1 - v0)
        return None, None
    k0, y0 = crossing(0.9, 0)
    if y0 is None:
        return None
    _, y1 = crossing(0.1, k0)
    if y1 is None:
        return None
    return y1 - y0


def over_undershoot(values, bounds=(0.0, 1.0)):
    """Maximal violations (overshoot above hi, undershoot below lo)."""
    values = np.asarray(values)
    lo, hi = bounds
    over = max(0.0, float(values.max() - hi)) if values.size else 0.0
    under = max(0.0, float(lo - values.min())) if values.size else 0.0
    return over, under
