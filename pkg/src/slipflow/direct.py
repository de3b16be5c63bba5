"""Direct discrete-velocity solver for the scaled kinetic equation.

Strang splitting on the half-line x3 > 0: a half-step of BGK relaxation
toward the moment-matched discrete Maxwellian (integrated exactly as an
exponential, so stiffness at small epsilon costs nothing), a full
semi-Lagrangian transport step along backward characteristics with cubic
interpolation, and a second half relaxation.  The wall applies the Maxwell
reflection condition: incoming = (1 - alpha) * specular + alpha * diffuse
re-emission at the wall Maxwellian, with the outward normal -e3, so
outgoing nodes are v3 < 0 and incoming v3 > 0.  The time step is capped at
dx_min / v_max so every characteristic foot stays within one cell of its
node and only the wall node needs boundary closure.
"""

import numpy as np

from .errors import BlowupError, ConfigError, NewtonError
from .velocity import MaxwellianParams, _params, maxwellian_pointwise

SQRT_2PI = np.sqrt(2.0 * np.pi)


class WallModel:
    """Maxwell-reflection wall: state Mw (u3 = 0) and accommodation alpha.

    flux_normalized rescales the diffuse kernel by the discrete half-range
    mass flux of Mw so the wall conserves mass exactly; the plain form
    re-emits sqrt(2 pi) Mw times the outgoing flux, which balances only
    when rho_w sqrt(T_w) = 1.
    """

    def __init__(self, Mw, alpha_eps, flux_normalized=False):
        Mw = _params(Mw)
        if Mw.u[2] != 0.0:
            raise ConfigError("wall Maxwellian must have u3 = 0")
        if not 0.0 <= alpha_eps <= 1.0:
            raise ConfigError("accommodation must lie in [0, 1], got %.3g"
                              % alpha_eps)
        self.Mw = Mw
        self.alpha_eps = float(alpha_eps)
        self.flux_normalized = bool(flux_normalized)


def accommodation(eps):
    """alpha_eps = sqrt(2 pi eps), clipped into the admissible range."""
    return min(1.0, SQRT_2PI * np.sqrt(eps))


def apply_maxwell_bc(F_wall, wall, grid):
    """Fill the incoming half (v3 > 0) of a wall velocity profile.

    gamma_- F = (1 - alpha) F(vbar, -v3) + alpha sqrt(2 pi) M_w(v) *
    int_{v.n > 0} (v.n) gamma_+ F dv, with n = -e3.  The outgoing half
    (v3 < 0) is used as given and returned untouched.
    """
    v3 = grid.nodes[:, 2]
    out = v3 < 0.0
    inc = v3 > 0.0
    flux = float(np.sum((grid.weights * (-v3) * F_wall)[out]))
    Mw = maxwellian_pointwise(wall.Mw, grid)
    emit = SQRT_2PI * Mw * flux
    if wall.flux_normalized:
        half = float(np.sum((grid.weights * (-v3) * Mw)[out]))
        emit = Mw * flux / half
    alpha = wall.alpha_eps
    spec = grid.reflect(F_wall)
    G = F_wall.copy()
    G[inc] = (1.0 - alpha) * spec[inc] + alpha * emit[inc]
    return G


def wall_refined_grid(xmax, nx, dx_wall, stretch=1.05):
    """Node positions on [0, xmax]: geometric growth from dx_wall, capped.

    Spacings are dx_j = min(dx_wall * stretch^j, C) with the cap C chosen
    by bisection so the nx - 1 intervals sum exactly to xmax; every ratio
    of consecutive spacings stays within [1, stretch].
    """
    m = nx - 1
    if dx_wall * m >= xmax:
        return np.linspace(0.0, xmax, nx)

    def total(cap):
        return np.minimum(dx_wall * stretch ** np.arange(m), cap).sum()

    lo, hi = dx_wall, xmax
    if total(hi) < xmax:
        raise ConfigError("grid cannot reach xmax=%.3g with nx=%d cells "
                          "from dx_wall=%.3g" % (xmax, nx, dx_wall))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if total(mid) < xmax:
            lo = mid
        else:
            hi = mid
    dx = np.minimum(dx_wall * stretch ** np.arange(m), hi)
    x = np.concatenate([[0.0], np.cumsum(dx)])
    x[-1] = xmax
    return x


def cell_volumes(x):
    """Trapezoid weights of the node set (integration measure on [0, xmax])."""
    vol = np.zeros_like(x)
    vol[1:] += 0.5 * np.diff(x)
    vol[:-1] += 0.5 * np.diff(x)
    return vol


class TransportPlan:
    """Precomputed cubic interpolation stencils for one (grid, dt) pair.

    For each distinct v3 the characteristic feet x - v3 dt are fixed, so
    the 4-point Lagrange weights are built once.  Feet beyond xmax use the
    last node's value (constant outflow extrapolation); the wall node's
    incoming columns are overwritten by the boundary condition afterwards
    and are excluded here.
    """

    def __init__(self, x, grid, dt):
        self.x = x
        self.dt = dt
        nx = len(x)
        vals = np.unique(grid.nodes[:, 2])
        self.groups = []
        for val in vals:
            cols = np.where(grid.nodes[:, 2] == val)[0]
            feet = x - val * dt
            base = np.searchsorted(x, feet, side="right") - 1
            base = np.clip(base - 1, 0, nx - 4)
            wts = np.empty((nx, 4))
            for s in range(4):
                num = np.ones(nx)
                den = 1.0
                xs = x[base + s]
                for r in range(4):
                    if r != s:
                        num *= feet - x[base + r]
                den = np.prod([xs - x[base + r] for r in range(4) if r != s],
                              axis=0)
                wts[:, s] = num / den
            beyond = feet > x[-1]
            if np.any(beyond):
                wts[beyond] = 0.0
                base[beyond] = nx - 4
                wts[beyond, 3] = 1.0
            self.groups.append((val, cols, base, wts))

    def apply(self, F):
        out = np.empty_like(F)
        for val, cols, base, wts in self.groups:
            Fg = F[:, cols]
            acc = wts[:, 0, None] * Fg[base]
            for s in range(1, 4):
                acc += wts[:, s, None] * Fg[base + s]
            out[:, cols] = acc
        return out


def _moment_targets(F, grid):
    w = grid.weights
    v = grid.nodes
    v2 = (v ** 2).sum(axis=1)
    rho = F @ w
    mom = F @ (w[:, None] * v)
    en = 0.5 * F @ (w * v2)
    return np.column_stack([rho, mom, en])


def corrected_maxwellian_batch(F, grid, alpha0=None, tol=1e-12, max_iter=60):
    """Moment-matched Maxwellians for every row of F, shape (nx, N).

    Solves the 5-parameter exponential-family problem per spatial node with
    a vectorized Newton iteration; alpha0 warm-starts from the previous
    step.  Returns (M, alpha, nu_density).
    """
    target = _moment_targets(F, grid)
    rho = target[:, 0]
    if np.any(~np.isfinite(target)) or np.any(rho <= 0.0):
        raise BlowupError("nonpositive or non-finite density in relaxation")
    u = target[:, 1:4] / rho[:, None]
    en_th = target[:, 4] - 0.5 * rho * (u ** 2).sum(axis=1)
    T = (2.0 / 3.0) * en_th / rho
    if np.any(T <= 0.0):
        raise BlowupError("nonpositive temperature in relaxation")

    v = grid.nodes
    v2 = (v ** 2).sum(axis=1)
    psi = np.column_stack([np.ones(grid.size), v, 0.5 * v2])
    phi = np.column_stack([np.ones(grid.size), v, v2])
    w = grid.weights
    scale = np.maximum(np.abs(target), rho[:, None])

    if alpha0 is None:
        alpha = np.column_stack([
            np.log(rho * (2.0 * np.pi * T) ** -1.5) - (u ** 2).sum(axis=1)
            / (2.0 * T), u / T[:, None], -1.0 / (2.0 * T)])
    else:
        alpha = alpha0.copy()
    for _ in range(max_iter):
        M = np.exp(alpha @ phi.T)
        r = (M * w) @ psi - target
        if np.max(np.abs(r) / scale) < tol:
            return M, alpha, rho
        J = np.einsum("xn,ni,nj->xij", M * w, psi, phi)
        step = np.linalg.solve(J, r[:, :, None])[:, :, 0]
        big = np.max(np.abs(step), axis=1)
        step *= np.minimum(1.0, 2.0 / np.maximum(big, 1e-300))[:, None]
        alpha -= step
    raise NewtonError("batched moment matching stalled",
                      defect=float(np.max(np.abs(r) / scale)))


def _relax(F, dt_half, eps, grid, model, alpha0=None):
    M, alpha, rho = corrected_maxwellian_batch(F, grid, alpha0)
    nu = model.bgk_nu_scale * rho
    fac = np.exp(-nu * dt_half / eps)
    return M + fac[:, None] * (F - M), alpha


def kinetic_step(F, dt, epsilon, wall, model, grid, x, plan=None,
                 alpha0=None, defect_tol=1e-6):
    """One Strang step; returns (F_new, info).

    info carries the warm-start multipliers, the clipped-mass defect of the
    transport interpolation (relative to total mass; above defect_tol the
    step aborts), and the wall mass flux of the pre-transport state.
    """
    if model.kind != "bgk":
        raise ConfigError("direct solver supports the bgk relaxation only")
    if plan is None:
        plan = TransportPlan(x, grid, dt)
    F, alpha = _relax(F, 0.5 * dt, epsilon, grid, model, alpha0)
    v3 = grid.nodes[:, 2]
    wflux = float(np.sum(grid.weights * v3 * F[0]))
    F = plan.apply(F)
    F[0] = apply_maxwell_bc(F[0], wall, grid)
    neg = F < 0.0
    vols = cell_volumes(x)
    defect = 0.0
    if np.any(neg):
        lost = -(F * neg) @ grid.weights
        mass = np.maximum(F, 0.0) @ grid.weights
        defect = float(vols @ lost) / float(vols @ mass)
        if defect > defect_tol:
            raise BlowupError("clipped mass defect %.3e exceeds %.1e"
                              % (defect, defect_tol))
        F = np.maximum(F, 0.0)
    F, alpha = _relax(F, 0.5 * dt, epsilon, grid, model, alpha)
    return F, {"alpha": alpha, "mass_defect": defect, "wall_flux": wflux}


class KineticRun:
    """Direct-solver trajectory: checkpointed fields plus diagnostics."""

    def __init__(self, epsilon, x, grid, times, fields, diagnostics):
        self.epsilon = epsilon
        self.x = x
        self.grid = grid
        self.times = np.asarray(times)
        self.fields = fields
        self.diagnostics = diagnostics

    def field_at(self, t):
        j = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[j] - t) > 1e-9 + 1e-6 * max(abs(t), 1.0):
            raise ValueError("time %.6g not checkpointed" % t)
        return self.fields[j]

    def bulk_velocity(self):
        """u3(x) of the final field (zero-density cells are excluded)."""
        F = self.fields[-1]
        rho = F @ self.grid.weights
        m3 = F @ (self.grid.weights * self.grid.nodes[:, 2])
        return m3 / rho


def run_direct(cfg, epsilon, ic=None, wall=None, t_final=None,
               store_times=(), x=None, grid=None, model=None):
    """March the kinetic solution to t_final and checkpoint along the way.

    ic is an (nx, N) field on the wall-refined grid; when omitted the
    well-prepared datum is assembled from the expansion hierarchy at t = 0
    (lazy import keeps the module dependency one-way).  The wall defaults
    to the initial boundary Maxwellian with alpha = sqrt(2 pi epsilon).
    """
    from .config import collision_model, velocity_grid

    if grid is None:
        grid = velocity_grid(cfg)
    if model is None:
        model = collision_model(cfg)
    st, eu = cfg["study"], cfg["euler"]
    if x is None:
        dx_wall = epsilon / st["wall_cells"]
        x = wall_refined_grid(eu["xmax"], eu["nx"], dx_wall, st["stretch"])
    if t_final is None:
        t_final = st["t_star"]
    ic_defect = 0.0
    if ic is None:
        from .expansion import build_hierarchy, assemble, snapshot_bundle
        hier = build_hierarchy(cfg, st["K"], grid=grid, model=model,
                               times=(0.0,))
        # the truncated sum undershoots zero in tail cells at moderate eps;
        # project onto the positive cone and audit the mass it costs
        ic = assemble(snapshot_bundle(hier, epsilon, 0.0), x, pos_tol=5e-2)
        neg = ic < 0.0
        if np.any(neg):
            vols = cell_volumes(x)
            lost = -(ic * neg) @ grid.weights
            mass = np.maximum(ic, 0.0) @ grid.weights
            ic_defect = float(vols @ lost) / float(vols @ mass)
            if ic_defect > 1e-3:
                raise BlowupError("initial positivity projection costs "
                                  "%.3e of the mass" % ic_defect)
            ic = np.maximum(ic, 0.0)
        if wall is None:
            # wall Maxwellian matched to the interior trace (compatibility)
            p0 = hier.wall_params(0.0)
            wall = WallModel(p0, accommodation(epsilon))
    F = np.array(ic, dtype=float)
    if F.shape != (len(x), grid.size):
        raise ConfigError("initial field shape %s does not match grids"
                          % (F.shape,))
    if wall is None:
        rho0, u0, T0 = _moment_state(F[0], grid)
        wall = WallModel(MaxwellianParams(rho0, [u0[0], u0[1], 0.0], T0),
                         accommodation(epsilon))

    v_max = float(np.max(np.abs(grid.nodes[:, 2])))
    dx_min = float(np.min(np.diff(x)))
    dt = dx_min / v_max
    nsteps = int(np.ceil(t_final / dt - 1e-12))
    dt = t_final / nsteps
    plan = TransportPlan(x, grid, dt)

    want = sorted(set(store_times) | {0.0, t_final})
    times, fields = [0.0], [F.copy()]
    alpha = None
    max_defect = 0.0
    t = 0.0
    for n in range(nsteps):
        F, info = kinetic_step(F, dt, epsilon, wall, model, grid, x,
                               plan=plan, alpha0=alpha)
        alpha = info["alpha"]
        max_defect = max(max_defect, info["mass_defect"])
        t = (n + 1) * dt
        for tw in want:
            if tw > times[-1] and abs(t - tw) <= 0.5 * dt * (1.0 + 1e-12):
                times.append(tw)
                fields.append(F.copy())
                break
    diag = {"dt": dt, "nsteps": nsteps, "v_max": v_max, "dx_min": dx_min,
            "max_mass_defect": max_defect, "ic_mass_defect": ic_defect,
            "alpha_eps": wall.alpha_eps}
    return KineticRun(epsilon, x, grid, times, fields, diag)


def _moment_state(Fw, grid):
    w = grid.weights
    rho = float(Fw @ w)
    u = (Fw @ (w[:, None] * grid.nodes)) / rho
    T = float((Fw @ (w * ((grid.nodes - u) ** 2).sum(axis=1))) / (3.0 * rho))
    return rho, u, T
