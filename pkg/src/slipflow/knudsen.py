"""Kinetic boundary layer in the fast wall variable xi = x3 / eps.

The layer distribution splits into a hydrodynamic lift, written explicitly
as tail integrals of the null-space source coefficients, and a purely
microscopic remainder solving the half-space transport problem

    v3 d_xi f + L0 f = S,    S in (N0)^perp,

with specular-plus-data reflection at xi = 0 and decay at infinity.  The
incoming wall data carries four flux moments (mass, two tangential momenta,
energy) that must vanish for the half-space problem to be solvable; this
module evaluates them, can project arbitrary data onto the solvable
subspace, and solves the transport problem by first-order upwind sweeps
wrapped in a Krylov iteration on the scattering fixed point.
"""

import numpy as np
from scipy.sparse.linalg import LinearOperator, lgmres

from .collision import collision_frequency
from .errors import (AssemblyError, ConfigError, IterationError,
                     SlipflowError, SolvabilityError)
from .velocity import Projector, _params, maxwellian_pointwise

SQRT_2PI = np.sqrt(2.0 * np.pi)


def _tail_integral(g, xi):
    """Trapezoid integral from xi to the far edge, exactly zero at the edge."""
    g = np.asarray(g, dtype=float)
    cells = 0.5 * (g[1:] + g[:-1]) * np.diff(xi)
    out = np.zeros_like(g)
    out[:-1] = np.cumsum(cells[::-1])[::-1]
    return out


def _solvability_weights(p0, grid):
    """The four flux weights (1, v1-u1, v2-u2, |v-u|^2) on the lattice."""
    c = grid.nodes - p0.u
    return np.stack([np.ones(grid.size), c[:, 0], c[:, 1],
                     (c ** 2).sum(axis=1)])


class HydroLift:
    """Null-space part of a layer field: profiles (Psi, Phi, Theta) of xi."""

    def __init__(self, psi, phi, theta):
        self.psi = np.asarray(psi, dtype=float)
        self.phi = np.asarray(phi, dtype=float)
        self.theta = np.asarray(theta, dtype=float)

    def wall_values(self):
        return self.psi[0], self.phi[0].copy(), self.theta[0]

    def check_far(self, far_tol=1e-6):
        amp = max(np.max(np.abs(self.psi)), np.max(np.abs(self.phi)),
                  np.max(np.abs(self.theta)), 1e-300)
        edge = max(abs(self.psi[-1]), np.max(np.abs(self.phi[-1])),
                   abs(self.theta[-1]))
        if edge > far_tol * amp:
            raise SlipflowError("hydrodynamic lift does not vanish at the "
                                "far edge: %.3e vs amplitude %.3e"
                                % (edge, amp))


def hydro_lift(k, a, b, c, p0, grid, xi, far_tol=1e-6):
    """Lift of the null-space source into an explicit odd-moment field.

    Takes the source coefficients S1 = (a + b.(v-u0) + c|v-u0|^2) sqrt(M0)
    as profiles of xi and returns the HydroLift profiles together with the
    assembled distribution

        f1 = (Psi v3 + Phi_1 v3 (v1-u1) + Phi_2 v3 (v2-u2) + Phi_3
              + Theta v3 |v-u0|^2) sqrt(M0),

    chosen so that v3 d_xi f1 - S1 has no null-space component.  The inputs
    must decay: their magnitude at the last node is required to be below
    far_tol times their peak.
    """
    p0 = _params(p0)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    if b.shape != (len(xi), 3):
        raise AssemblyError("b must have shape (nxi, 3)")
    amp = max(np.max(np.abs(a)), np.max(np.abs(b)), np.max(np.abs(c)))
    if amp > 0.0:
        edge = max(abs(a[-1]), np.max(np.abs(b[-1])), abs(c[-1]))
        if edge > far_tol * amp:
            raise SlipflowError(
                "layer source coefficients do not decay: %.3e at the far "
                "edge vs peak %.3e; enlarge the xi domain" % (edge, amp))
    T0 = p0.T
    psi = -_tail_integral(2.0 * a / T0 + 3.0 * c, xi)
    phi = np.empty((len(xi), 3))
    phi[:, 0] = -_tail_integral(b[:, 0], xi) / T0
    phi[:, 1] = -_tail_integral(b[:, 1], xi) / T0
    phi[:, 2] = -_tail_integral(b[:, 2], xi)
    theta = _tail_integral(a, xi) / (5.0 * T0 ** 2)
    lift = HydroLift(psi, phi, theta)

    sqM = np.sqrt(maxwellian_pointwise(p0, grid))
    cv = grid.nodes - p0.u
    v3 = grid.nodes[:, 2]
    c2 = (cv ** 2).sum(axis=1)
    f1 = (psi[:, None] * v3 + phi[:, 0, None] * (v3 * cv[:, 0])
          + phi[:, 1, None] * (v3 * cv[:, 1]) + phi[:, 2, None]
          + theta[:, None] * (v3 * c2)) * sqM
    return lift, f1


def lift_defect(a, b, c, p0, grid, xi):
    """Null-space defect of the lift equation, evaluated analytically.

    The xi-derivative of the tail integrals is the integrand itself, so
    v3 d_xi f1 - S1 is known pointwise without differencing; what remains
    is whether its lattice projection onto the collision invariants
    vanishes, which holds exactly only for continuum moments.
    """
    p0 = _params(p0)
    proj = Projector(p0, grid)
    sqM = np.sqrt(maxwellian_pointwise(p0, grid))
    cv = grid.nodes - p0.u
    v3 = grid.nodes[:, 2]
    c2 = (cv ** 2).sum(axis=1)
    T0 = p0.T
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    # v3 d_xi (Psi v3 + ...) with d_xi Psi = 2a/T + 3c etc.
    resid = ((2.0 * a[:, None] / T0 + 3.0 * c[:, None]) * v3 ** 2
             + (b[:, 0, None] / T0) * v3 ** 2 * cv[:, 0]
             + (b[:, 1, None] / T0) * v3 ** 2 * cv[:, 1]
             + b[:, 2, None] * v3
             - (a[:, None] / (5.0 * T0 ** 2)) * v3 ** 2 * c2) * sqM
    s1 = (a[:, None] + b @ cv.T + c[:, None] * c2) * sqM
    resid = resid - s1
    scale = max(np.max(grid.norm(s1)), 1e-300)
    return float(np.max(grid.norm(proj.apply(resid)))) / scale


def monomial_coefficients(field, p0, grid):
    """Coefficients (a, b, c) of a null-space field in the monomial basis.

    The basis {1, v-u0, |v-u0|^2} sqrt(M0) is not orthogonal, so the
    expansion is recovered through the 5x5 Gram system.  Batched over
    leading axes of field.
    """
    p0 = _params(p0)
    sqM = np.sqrt(maxwellian_pointwise(p0, grid))
    cv = grid.nodes - p0.u
    c2 = (cv ** 2).sum(axis=1)
    basis = np.stack([sqM, cv[:, 0] * sqM, cv[:, 1] * sqM, cv[:, 2] * sqM,
                      c2 * sqM])
    gram = (basis * grid.weights) @ basis.T
    rhs = (basis * grid.weights) @ np.asarray(field, dtype=float).T
    coef = np.linalg.solve(gram, rhs).T
    return coef[..., 0], coef[..., 1:4], coef[..., 4]


def boundary_data(k, trace_k, trace_prev, p0, grid):
    """Incoming wall correction for the order-k half-space problem.

    trace_k is the combined wall trace of the interior, viscous, and lifted
    layer parts at order k; trace_prev the combined order-(k-1) trace (the
    order-zero convention being sqrt(M0), with no layer parts).  Returns a
    velocity profile supported on v3 < 0 and exactly zero elsewhere.
    """
    p0 = _params(p0)
    trace_k = np.asarray(trace_k, dtype=float)
    trace_prev = np.asarray(trace_prev, dtype=float)
    sqM = np.sqrt(maxwellian_pointwise(p0, grid))
    mask = grid.out_mask
    v3 = grid.nodes[:, 2]
    # <gamma_+ g> with the outward normal -e3: positive for Maxwellian flux
    flux = -SQRT_2PI * np.sum((grid.weights * v3 * trace_prev * sqM)[mask])
    data = (trace_k - grid.reflect(trace_k)
            + SQRT_2PI * (flux * sqM - trace_prev))
    return np.where(mask, data, 0.0)


def check_solvability(bc, p0, grid):
    """The four flux moments of incoming data; all must vanish."""
    p0 = _params(p0)
    sqM = np.sqrt(maxwellian_pointwise(p0, grid))
    v3 = grid.nodes[:, 2]
    w = _solvability_weights(p0, grid)
    return (w * (grid.weights * v3 * np.asarray(bc) * sqM)).sum(axis=1)


def enforce_solvability(bc, p0, grid):
    """Project incoming data onto the solvable subspace.

    Subtracts the unique combination of (1, c1, c2, |c|^2) sqrt(M0) on
    v3 < 0 that cancels the four flux moments; returns the corrected data
    and the coefficient vector, whose size measures how badly the input
    violated the conditions.
    """
    p0 = _params(p0)
    sqM = np.sqrt(maxwellian_pointwise(p0, grid))
    mask = grid.out_mask
    v3 = grid.nodes[:, 2]
    w = _solvability_weights(p0, grid)
    modes = w * sqM * mask
    # gram_ab = int_{v3<0} v3 w_a w_b M0: sign-definite measure, invertible
    gram = (w * (grid.weights * v3 * sqM * mask)) @ (w * sqM).T
    resid = check_solvability(bc, p0, grid)
    alpha = np.linalg.solve(gram, resid)
    return np.asarray(bc) - alpha @ modes, alpha


class KnudsenProblem:
    """Half-space transport problem with a split source and wall data.

    S1 is the null-space part of the source (handled by hydro_lift and kept
    for bookkeeping), S2 the microscopic part the solver consumes; bc the
    incoming correction supported on v3 < 0.
    """

    def __init__(self, L, S1, S2, bc, xi, p0, grid, model):
        self.L = L
        self.S1 = np.asarray(S1, dtype=float)
        self.S2 = np.asarray(S2, dtype=float)
        self.bc = np.asarray(bc, dtype=float)
        self.xi = np.asarray(xi, dtype=float)
        self.p0 = _params(p0)
        self.grid = grid
        self.model = model
        self._validate()

    def _validate(self):
        grid = self.grid
        nxi = len(self.xi)
        if self.S1.shape != (nxi, grid.size) or self.S2.shape != (nxi, grid.size):
            raise AssemblyError("source shapes must be (nxi, grid.size)")
        proj = Projector(self.p0, grid)
        s2 = np.max(grid.norm(self.S2))
        if s2 > 0.0 and np.max(grid.norm(proj.apply(self.S2))) > 1e-8 * s2:
            raise AssemblyError("microscopic source has a null-space part")
        s1 = np.max(grid.norm(self.S1))
        if s1 > 0.0 and np.max(grid.norm(proj.complement(self.S1))) > 1e-10 * s1:
            raise AssemblyError("null-space source is not in the span of "
                                "the collision invariants")
        if np.any(self.bc[~grid.out_mask] != 0.0):
            raise AssemblyError("wall data must vanish on v3 > 0")


def fit_decay(xi, norms, window=(0.35, 0.95)):
    """Log-linear decay rate of a norm profile over a window of the domain.

    Returns (rate, scatter) where scatter is the RMS misfit of the log-line
    relative to the total drop across the window; identically zero profiles
    report an infinite rate.
    """
    xi = np.asarray(xi, dtype=float)
    norms = np.asarray(norms, dtype=float)
    if np.max(norms) <= 0.0:
        return np.inf, 0.0
    lo, hi = window[0] * xi[-1], window[1] * xi[-1]
    sel = (xi >= lo) & (xi <= hi) & (norms > 1e-300)
    if sel.sum() < 3:
        raise ConfigError("too few points in the decay-fit window")
    slope, icpt = np.polyfit(xi[sel], np.log(norms[sel]), 1)
    drop = abs(slope) * (xi[sel][-1] - xi[sel][0])
    misfit = np.sqrt(np.mean(
        (np.log(norms[sel]) - (slope * xi[sel] + icpt)) ** 2))
    return -slope, misfit / max(drop, 1e-300)


def solve_halfspace(prob, tol=1e-9, maxiter=300, solv_tol=1e-6):
    """March the half-space problem to its decaying solution.

    First-order upwind in xi by the sign of v3; the wall reflects outgoing
    particles into incoming ones and adds the data, the far edge admits no
    inflow.  The collision coupling is resolved by a Krylov iteration whose
    matvec is one transport sweep, which converges far faster than plain
    source iteration on a domain this many mean free paths deep.  Returns
    (solution, info) with the norm profile and fitted decay rate.
    """
    grid, p0, model = prob.grid, prob.p0, prob.model
    if model.kind != "bgk":
        raise ConfigError("half-space sweeps require the bgk model")
    resid = check_solvability(prob.bc, p0, grid)
    scale = max(float(grid.norm(prob.bc)), 1e-300)
    if np.max(np.abs(resid)) > solv_tol * scale:
        raise SolvabilityError(
            "wall data violates the flux conditions; project it with "
            "enforce_solvability first", residuals=resid)

    xi = prob.xi
    nxi = len(xi)
    nu = float(collision_frequency(p0, grid, model)[0])
    v3 = grid.nodes[:, 2]
    neg_idx = np.where(v3 < 0.0)[0]
    pos_idx = np.where(v3 > 0.0)[0]
    still = np.where(v3 == 0.0)[0]
    refl = grid.reflect(np.arange(grid.size))
    # position of each incoming node's mirror inside the outgoing block
    mirror = np.searchsorted(neg_idx, refl[pos_idx])
    # cell widths: xi are cell centers, interfaces at the midpoints, with
    # the wall and far interfaces half a cell beyond the end centers
    dxi = np.empty(nxi)
    dxi[1:-1] = 0.5 * (xi[2:] - xi[:-2])
    dxi[0] = xi[1] - xi[0]
    dxi[-1] = xi[-1] - xi[-2]
    a = -v3[neg_idx]
    b = v3[pos_idx]
    rn = a / dxi[:, None]
    rp = b / dxi[:, None]
    cn, dn = rn / (nu + rn), 1.0 / (nu + rn)
    cp, dp = rp / (nu + rp), 1.0 / (nu + rp)
    proj = Projector(p0, grid)
    rhs = prob.S1 + prob.S2

    def sweep(src, bc):
        # finite-volume upwind: cell 0 keeps its balance equation and the
        # wall enters through the interface flux, so the invariant fluxes
        # telescope exactly to the (vanishing) moments of the data
        f = np.zeros_like(src)
        sn = src[:, neg_idx]
        fn = np.empty_like(sn)
        fn[-1] = sn[-1] * dn[-1]          # no inflow through the far edge
        for i in range(nxi - 2, -1, -1):
            fn[i] = sn[i] * dn[i] + cn[i] * fn[i + 1]
        wall = fn[0, mirror] + bc[refl[pos_idx]]
        sp = src[:, pos_idx]
        fp = np.empty_like(sp)
        fp[0] = sp[0] * dp[0] + cp[0] * wall
        for i in range(1, nxi):
            fp[i] = sp[i] * dp[i] + cp[i] * fp[i - 1]
        f[:, neg_idx] = fn
        f[:, pos_idx] = fp
        if len(still):
            f[:, still] = src[:, still] / nu
        return f

    zero_bc = np.zeros(grid.size)
    base = sweep(rhs + 0.0, prob.bc)
    shape = (nxi, grid.size)

    def matvec(x):
        f = x.reshape(shape)
        return (f - sweep(nu * proj.apply(f), zero_bc)).ravel()

    op = LinearOperator((nxi * grid.size,) * 2, matvec=matvec)
    nit = [0]

    def count(_):
        nit[0] += 1

    sol, code = lgmres(op, base.ravel(), x0=base.ravel(), rtol=tol,
                       atol=0.0, maxiter=maxiter, callback=count)
    if code != 0:
        raise IterationError("half-space iteration stalled (code %d after "
                             "%d iterations)" % (code, nit[0]))
    f = sol.reshape(shape)
    # one extra sweep measures the fixed-point residual and hands back an
    # iterate that satisfies the wall and inflow conditions exactly
    back = sweep(rhs + nu * proj.apply(f), prob.bc)
    fscale = max(float(np.max(np.abs(f))), 1e-300)
    residual = float(np.max(np.abs(back - f))) / fscale
    f = back
    # upwind trace at the wall interface: outgoing from the first cell,
    # incoming by the reflection condition, even in v3 when the data is zero
    wall_trace = f[0].copy()
    wall_trace[pos_idx] = f[0, neg_idx][mirror] + prob.bc[refl[pos_idx]]
    norms = grid.norm(f)
    rate, scatter = fit_decay(xi, norms)
    info = {"iterations": nit[0], "residual": residual, "norms": norms,
            "decay_rate": rate, "decay_scatter": scatter,
            "solvability": resid, "wall_trace": wall_trace,
            "flux_drift": float(np.max(np.abs(invariant_fluxes(f, prob))))}
    return f, info


def invariant_fluxes(f, prob):
    """Upwind interface fluxes of the four conserved moments.

    The scheme telescopes these exactly: every interface carries the flux
    of the wall data, which vanishes once the solvability conditions hold,
    so nonzero values diagnose either unrepaired data or a source with a
    null-space component.  Returns an (nxi + 1, 4) array, wall row first.
    """
    grid, p0 = prob.grid, prob.p0
    v3 = grid.nodes[:, 2]
    pos = v3 > 0.0
    neg = v3 < 0.0
    refl = grid.reflect(np.arange(grid.size))
    sqM = np.sqrt(maxwellian_pointwise(p0, grid))
    wv = _solvability_weights(p0, grid) * (grid.weights * v3 * sqM)
    nxi = len(prob.xi)
    face = np.zeros((nxi + 1, grid.size))
    face[1:, pos] = f[:, pos]
    face[:-1, neg] = f[:, neg]
    face[0, pos] = f[0][refl][pos] + prob.bc[refl][pos]
    return face @ wv.T


def save_halfspace(path, xi, norms, rate):
    """Columnar (xi, norm) profile with the fitted rate in the header."""
    data = np.column_stack([xi, norms])
    np.savetxt(path, data, fmt="%.17g",
               header="decay_rate = %.17g\nxi norm" % rate)
