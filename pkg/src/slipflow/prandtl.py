"""Viscous boundary-layer solver in the stretched wall coordinate.

The wall region of a slightly rarefied flow carries tangential-velocity
and temperature corrections varying on the scale zeta = x3 / sqrt(eps).
At each order k of the expansion these obey a linear advection-diffusion
system in zeta whose coefficients are wall traces of the background flow
and whose boundary conditions are of Robin type,

    (d/dzeta - R) field |_{zeta=0} = data,   field -> 0 as zeta -> oo,

with R > 0 fixed by the wall state and the transport coefficients.  This
module evaluates the Robin coefficients and sources, lifts the boundary
data, marches the lifted homogeneous-Robin system on a truncated domain,
and reconstructs the slaved fields (normal velocity, pressure, density,
microscopic part).

Scheme: Crank-Nicolson for the zeta-diffusion, two-step Adams-Bashforth
with second-order upwind differences for the drift, ghost-node Robin
closure at the wall, homogeneous Dirichlet at the truncation edge.  The
drift and the sources are multiplied by a smooth cutoff chi(3 zeta/zmax)
so the truncated problem is compatible at the outer edge; the cutoff is
identically one on [0, zmax/3], which must cover the support [0, 2] of
the boundary lift.  All lift terms are discretized with the same
operators as the evolving variable, so un-lifting reproduces the direct
inhomogeneous-Robin discretization exactly.
"""

import numpy as np
from scipy.linalg import solve_banded

from .collision import sym_bilinear
from .errors import (AssemblyError, ConfigError, DegenerateStateError,
                     SlipflowError, SolvabilityError)
from .euler import smoothstep7
from .velocity import (Projector, _params, burnett, hydro_field,
                       maxwellian_pointwise)

SQRT_2PI = np.sqrt(2.0 * np.pi)


def cutoff(z):
    """Monotone polynomial cutoff: 1 on [0, 1], 0 on [2, oo), C^7 between."""
    return 1.0 - smoothstep7(np.asarray(z, dtype=float) - 1.0)


def _as_scalar_fn(x):
    if callable(x):
        return x
    val = float(x)
    return lambda t: val


def _as_vec_fn(x, n):
    if callable(x):
        return x
    val = np.broadcast_to(np.asarray(x, dtype=float), (n,)).copy()
    return lambda t: val


class PrandtlCoeffs:
    """Wall-trace coefficients that drive one layer solve.

    rho0, T0: boundary state of the background flow; du3: normal
    derivative of its normal velocity at the wall; u13: wall trace of the
    first-order normal velocity (enters the drift); mu, kappa: transport
    coefficients evaluated at the wall temperature.  Each entry may be a
    float or a callable of time.
    """

    def __init__(self, rho0, T0, du3=0.0, u13=0.0, mu=1.0, kappa=1.0):
        self.rho0 = _as_scalar_fn(rho0)
        self.T0 = _as_scalar_fn(T0)
        self.du3 = _as_scalar_fn(du3)
        self.u13 = _as_scalar_fn(u13)
        self.mu = _as_scalar_fn(mu)
        self.kappa = _as_scalar_fn(kappa)

    def at(self, t):
        rho0 = self.rho0(t)
        T0 = self.T0(t)
        if rho0 <= 0.0 or T0 <= 0.0:
            raise DegenerateStateError(
                "wall state rho0=%.3g T0=%.3g not positive at t=%.3g"
                % (rho0, T0, t))
        return (rho0, T0, self.du3(t), self.u13(t), self.mu(t), self.kappa(t))


def coeffs_from_trajectory(traj, mu, kappa, slip_mode="published", grid=None):
    """Layer coefficients from an interior-flow trajectory's wall traces.

    The drift offset u13 is the first-order normal slip at the wall,
    evaluated in the requested slip mode.  mu and kappa are floats or
    callables of the wall temperature.
    """
    from .correctors import slip_value

    from .correctors import background_at

    mu_fn = mu if callable(mu) else (lambda T, _v=float(mu): _v)
    kap_fn = kappa if callable(kappa) else (lambda T, _v=float(kappa): _v)

    def wall(t):
        s = background_at(traj, t)
        return float(s.rho[0]), float(s.T[0])

    def u13(t):
        rho0, T0 = wall(t)
        return slip_value(1, {"rho0": rho0, "T0": T0, "f_prev": None},
                          mode=slip_mode, grid=grid)

    # wall slopes exist only at stored times; interpolate between them
    slopes = np.array([traj.wall_taylor(t)["u3"][1] for t in traj.times])

    def du3(t):
        return float(np.interp(t, traj.times, slopes))

    return PrandtlCoeffs(
        rho0=lambda t: wall(t)[0],
        T0=lambda t: wall(t)[1],
        du3=du3,
        u13=u13,
        mu=lambda t: mu_fn(wall(t)[1]),
        kappa=lambda t: kap_fn(wall(t)[1]))


class RobinData:
    """Robin boundary data for one layer level.

    (d/dzeta - R_u) ub_i = b_i and (d/dzeta - R_theta) theta_b = a at the
    wall.  Coefficients and sources may be floats/vectors or callables of
    time; the coefficients must stay strictly positive.
    """

    def __init__(self, R_u, R_theta, b=(0.0, 0.0), a=0.0):
        self.R_u = _as_scalar_fn(R_u)
        self.R_theta = _as_scalar_fn(R_theta)
        self.b = _as_vec_fn(b, 2)
        self.a = _as_scalar_fn(a)

    def at(self, t):
        R_u = self.R_u(t)
        R_th = self.R_theta(t)
        if R_u <= 0.0 or R_th <= 0.0:
            raise DegenerateStateError(
                "Robin coefficients must be positive: R_u=%.3g R_theta=%.3g"
                % (R_u, R_th))
        return R_u, R_th, np.asarray(self.b(t), dtype=float), float(self.a(t))


def robin_coefficients(p0, mu, kappa):
    """Robin coefficients of the tangential-velocity and temperature layers.

    R_u = rho0 sqrt(T0) (2 + rho0 sqrt(T0)) / mu,
    R_theta = rho0 sqrt(T0) (2 rho0 sqrt(T0) + sqrt(2 pi) rho0 / 3 + 2/3) / kappa.
    """
    if mu <= 0.0 or kappa <= 0.0:
        raise DegenerateStateError("transport coefficients must be positive")
    p0 = _params(p0)
    a = p0.rho * np.sqrt(p0.T)
    R_u = a * (2.0 + a) / mu
    R_theta = a * (2.0 * a + SQRT_2PI * p0.rho / 3.0 + 2.0 / 3.0) / kappa
    return float(R_u), float(R_theta)


# Trace inputs of robin_sources, all evaluated at the wall at one time.
_TRACE_KEYS = (
    "u_prev_tang",   # (2,) tangential interior velocity, order k-1
    "Phi_k",         # (2,) kinetic-layer tangential flux functions, order k
    "u1_tang",       # (2,) combined order-1 tangential velocity (interior+layer)
    "ub_prev_3",     # scalar layer normal velocity, order k-1
    "micro_wall",    # (N,) kernel-orthogonal part of order k plus lower memory
    "halfflux",      # (N,) combined order k-1 distribution for half-space fluxes
    "Theta_k",       # scalar kinetic-layer temperature functional, order k
    "Psi_prev",      # scalar kinetic-layer mass functional, order k-1
    "Theta_prev",    # scalar kinetic-layer temperature functional, order k-1
    "theta1_sum",    # scalar combined order-1 temperature (interior+layer)
    "theta_prev",    # scalar interior temperature, order k-1
    "rho_prev",      # scalar interior density, order k-1
    "pb_prev",       # scalar layer pressure, order k-1
    "flux_km2",      # (N,) combined order k-2 distribution (order 0 -> sqrt(M0))
)


def zero_traces(grid):
    """All-zero trace bundle for robin_sources (useful for probes)."""
    n = grid.size
    tr = {}
    for key in _TRACE_KEYS:
        if key in ("u_prev_tang", "Phi_k", "u1_tang"):
            tr[key] = np.zeros(2)
        elif key in ("micro_wall", "halfflux", "flux_km2"):
            tr[key] = np.zeros(n)
        else:
            tr[key] = 0.0
    return tr


def robin_sources(k, traces, p0, grid, mu, kappa):
    """Boundary sources (Lambda_u, Lambda_theta) of the order k-1 layer.

    Literal evaluation of the matching conditions at the wall: interior
    traces, kinetic-layer functionals, kernel-orthogonal moments, and
    half-space flux integrals over the outgoing hemisphere combine into
    the Robin right-hand sides for (ub_{k-1}, theta_b_{k-1}).  Every
    half-flux integral is computed by lattice quadrature over v3 < 0.
    """
    missing = [key for key in _TRACE_KEYS if key not in traces]
    if missing:
        raise AssemblyError("robin_sources k=%d missing traces: %s"
                            % (k, ", ".join(sorted(missing))))
    if mu <= 0.0 or kappa <= 0.0:
        raise DegenerateStateError("transport coefficients must be positive")
    p0 = _params(p0)
    rho0, u0, T0 = p0.as_tuple()
    sT = np.sqrt(T0)
    sqM = np.sqrt(maxwellian_pointwise(p0, grid))
    mask = grid.out_mask
    w = grid.weights
    v = grid.nodes
    c = v - u0
    c2 = (c ** 2).sum(axis=1)

    u_prev = np.asarray(traces["u_prev_tang"], dtype=float)
    Phi_k = np.asarray(traces["Phi_k"], dtype=float)
    u1_tang = np.asarray(traces["u1_tang"], dtype=float)
    ub3 = float(traces["ub_prev_3"])
    micro = np.asarray(traces["micro_wall"], dtype=float)
    hf = np.asarray(traces["halfflux"], dtype=float)

    A, B = burnett(p0, grid, clean=True)

    def half_flux(weight, g):
        return float(np.sum((w * weight * v[:, 2] * g * sqM)[mask]))

    lam_u = np.empty(2)
    for i in range(2):
        moment = T0 * grid.inner(A[i, 2], micro)
        flux = half_flux(c[:, i], hf)
        lam_u[i] = (rho0 * sT / mu * u_prev[i]
                    + (rho0 * T0 ** 2 * Phi_k[i]
                       + rho0 * u1_tang[i] * ub3 + moment) / mu
                    - SQRT_2PI / mu * flux)

    coef = 0.5 + 1.5 * T0 - 2.0 * rho0 * T0 ** 1.5
    lam_th = (2.0 * T0 ** 1.5 / kappa * grid.inner(B[2], micro)
              + 5.0 / (3.0 * kappa) * rho0 * float(traces["theta1_sum"]) * ub3
              + rho0 * T0 / kappa * (10.0 * T0 ** 2 * float(traces["Theta_k"])
                                     - coef * (float(traces["Psi_prev"])
                                               + 5.0 * T0 * float(traces["Theta_prev"])))
              + rho0 * sT / kappa * (
                  (2.0 / 3.0 * rho0 * sT + SQRT_2PI / 2.0 * rho0 + 2.0)
                  * float(traces["theta_prev"])
                  - 4.0 * (sT - 1.0 / rho0)
                  * (T0 * float(traces["rho_prev"]) + float(traces["pb_prev"])))
              - SQRT_2PI / kappa * half_flux(c2 - 4.0 * rho0 * T0 ** 1.5, hf)
              + SQRT_2PI / kappa * (rho0 * sT + 1.0) * coef
              * half_flux(np.ones(grid.size),
                          np.asarray(traces["flux_km2"], dtype=float)))
    return lam_u, float(lam_th)


def _lift_arrays(zeta, R_u, R_th, b, a):
    chi = cutoff(zeta)
    u_b = (1.0 / R_u + 2.0 * zeta) * chi * b[:, None]
    th_a = (1.0 / R_th + 2.0 * zeta) * chi * a
    return u_b, th_a


def lift_boundary(rd, zeta, t=0.0, tol=1e-6):
    """Profiles absorbing the Robin data: (1/R + 2 zeta) data chi(zeta).

    Verifies the discrete Robin identity at the wall by one-sided
    second-order differentiation; a residual above tol means the zeta
    grid is too coarse to represent the lift.
    """
    zeta = np.asarray(zeta, dtype=float)
    R_u, R_th, b, a = rd.at(t)
    u_b, th_a = _lift_arrays(zeta, R_u, R_th, b, a)
    dz = zeta[1] - zeta[0]

    def edge_deriv(w):
        return (-3.0 * w[..., 0] + 4.0 * w[..., 1] - w[..., 2]) / (2.0 * dz)

    res_u = np.max(np.abs(edge_deriv(u_b) - R_u * u_b[:, 0] - b))
    res_th = abs(edge_deriv(th_a) - R_th * th_a[0] - a)
    scale = max(1.0, np.max(np.abs(b)), abs(a))
    if max(res_u, res_th) > tol * scale:
        raise ConfigError(
            "boundary lift Robin residual %.2e exceeds %.1e: zeta grid too "
            "coarse (dz=%.3g)" % (max(res_u, res_th), tol, dz))
    return u_b, th_a


class LayerTrajectory:
    """Stored layer snapshots: solved (ub, theta) plus slaved fields."""

    def __init__(self, k, zeta, times, ub, theta):
        self.k = k
        self.zeta = zeta
        self.times = times
        self.ub = ub          # (nt, 2, nz)
        self.theta = theta    # (nt, nz)
        self.rho = None
        self.u3 = None
        self.p = None

    def index_of(self, t):
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 + 1e-6 * abs(t):
            raise ValueError("time %.6g not stored" % t)
        return i

    def wall_values(self, t):
        i = self.index_of(t)
        return self.ub[i, :, 0].copy(), float(self.theta[i, 0])


def solve_prandtl(k, coeffs, rd, t_end, dt, nz=201, zmax=20.0, sources=None,
                  init=None, far_tol=1e-6, cfl_max=0.45, store_every=1):
    """March the lifted homogeneous-Robin layer system and un-lift.

    The temperature equation is independent of the velocity one and is
    advanced by the same operators; both use Crank-Nicolson diffusion, a
    two-step Adams-Bashforth upwinded drift cut off by chi(3 zeta/zmax),
    ghost-node Robin rows at the wall and a Dirichlet zero at zmax.
    sources is None or a callable t -> (f (2, nz), g (nz,)) in the same
    normalization as the layer equations (divided by rho0 internally).
    init is None or (ub0 (2, nz), theta0 (nz,)); the initial data are
    multiplied by the cutoff so they vanish at the truncation edge.
    """
    if zmax < 6.0:
        raise ConfigError("zmax=%.3g too small: the cutoff plateau must "
                          "cover the boundary-lift support [0, 2]" % zmax)
    zeta = np.linspace(0.0, zmax, nz)
    dz = zeta[1] - zeta[0]
    chi_s = cutoff(3.0 * zeta / zmax)
    nsteps = int(round(t_end / dt))
    if abs(nsteps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ConfigError("t_end=%.6g is not a multiple of dt=%.6g"
                          % (t_end, dt))

    # sanity-check the lift resolution once; steps use the fast path
    lift_boundary(rd, zeta, 0.0)

    R_u0, R_th0, b0, a0 = rd.at(0.0)
    u_b0, th_a0 = _lift_arrays(zeta, R_u0, R_th0, b0, a0)
    U = np.zeros((3, nz))
    if init is not None:
        U[:2] = np.asarray(init[0], dtype=float)
        U[2] = np.asarray(init[1], dtype=float)
    U[:2] -= u_b0
    U[2] -= th_a0
    U *= chi_s

    def source_at(t):
        if sources is None:
            return np.zeros((3, nz))
        f, g = sources(t)
        out = np.empty((3, nz))
        out[:2] = f
        out[2] = g
        return out

    def advect(w, R, data):
        # upwind-biased second-order derivative with a Robin ghost node
        dw_b = np.empty_like(w)
        dw_f = np.empty_like(w)
        ghost = w[1] - 2.0 * dz * (R * w[0] + data)
        dw_b[0] = R * w[0] + data
        dw_b[1] = (3.0 * w[1] - 4.0 * w[0] + ghost) / (2.0 * dz)
        dw_b[2:] = (3.0 * w[2:] - 4.0 * w[1:-1] + w[:-2]) / (2.0 * dz)
        dw_f[:-2] = (-3.0 * w[:-2] + 4.0 * w[1:-1] - w[2:]) / (2.0 * dz)
        dw_f[-2] = (w[-1] - w[-3]) / (2.0 * dz)
        dw_f[-1] = 0.0
        return dw_b, dw_f

    def diffuse(w, R, data):
        # Robin ghost row at the wall, central elsewhere, Dirichlet edge
        out = np.empty_like(w)
        ghost = w[1] - 2.0 * dz * (R * w[0] + data)
        out[0] = (w[1] - 2.0 * w[0] + ghost) / dz ** 2
        out[1:-1] = (w[2:] - 2.0 * w[1:-1] + w[:-2]) / dz ** 2
        out[-1] = 0.0
        return out

    def rates(t):
        rho0, T0, du3, u13, mu, kappa = coeffs.at(t)
        R_u, R_th, b, a = rd.at(t)
        A_raw = du3 * zeta + u13
        nus = np.array([mu / rho0, mu / rho0, 3.0 * kappa / (5.0 * rho0)])
        Cs = np.array([0.0, 0.0, 2.0 / 3.0 * du3])
        Rs = np.array([R_u, R_u, R_th])
        datas = np.array([b[0], b[1], a])
        lift = np.vstack(_lift_arrays(zeta, R_u, R_th, b, a))
        return rho0, A_raw * chi_s, A_raw, nus, Cs, Rs, datas, lift

    def explicit_part(W, frozen):
        # cutoff drift + reaction of the evolving (lifted) variable, upwinded
        rho0, A, A_raw, nus, Cs, Rs, datas, lift = frozen
        N = np.empty_like(W)
        for r in range(3):
            dw_b, dw_f = advect(W[r], Rs[r], 0.0)
            dW = np.where(A >= 0.0, dw_b, dw_f)
            N[r] = -A * dW - Cs[r] * W[r]
        return N

    def known_part(t, frozen):
        # physical source plus the lift's transport terms, one overall cutoff;
        # the lift support sits where the cutoff is one, so cutting the whole
        # bracket equals cutting only the source
        rho0, A, A_raw, nus, Cs, Rs, datas, lift = frozen
        G = source_at(t) / rho0
        for r in range(3):
            dw_b, dw_f = advect(lift[r], Rs[r], datas[r])
            dW = np.where(A >= 0.0, dw_b, dw_f)
            G[r] += (-A_raw * dW - Cs[r] * lift[r]
                     + nus[r] * diffuse(lift[r], Rs[r], datas[r]))
        return G * chi_s

    def banded_matrix(nu_dt_half, R):
        ab = np.zeros((3, nz))
        ab[1, :] = 1.0 + 2.0 * nu_dt_half / dz ** 2
        ab[0, 1:] = -nu_dt_half / dz ** 2
        ab[2, :-1] = -nu_dt_half / dz ** 2
        ab[0, 1] = -2.0 * nu_dt_half / dz ** 2
        ab[1, 0] = 1.0 + (2.0 + 2.0 * dz * R) * nu_dt_half / dz ** 2
        ab[1, -1] = 1.0
        ab[0, -1] = 0.0
        ab[2, -2] = 0.0
        return ab

    n_stored = nsteps // store_every + 1
    ub_out = np.empty((n_stored, 2, nz))
    th_out = np.empty((n_stored, nz))
    t_out = np.empty(n_stored)

    def store(idx, t, frozen):
        lift = frozen[-1]
        ub_out[idx] = U[:2] + lift[:2]
        th_out[idx] = U[2] + lift[2]
        t_out[idx] = t

    frozen_n = rates(0.0)
    store(0, 0.0, frozen_n)
    N_prev = None
    idx = 1
    for n in range(nsteps):
        t = n * dt
        t_next = t + dt
        frozen_next = rates(t_next)
        rho0, A, A_raw, nus, Cs, Rs, datas, lift = frozen_n
        cfl = np.max(np.abs(A)) * dt / dz
        if cfl > cfl_max:
            raise ConfigError(
                "drift CFL %.3f exceeds %.2f at t=%.4g: need dt <= %.3e"
                % (cfl, cfl_max, t, cfl_max * dz / max(np.max(np.abs(A)), 1e-300)))
        N_n = explicit_part(U, frozen_n)
        if N_prev is None:
            adv = N_n
        else:
            adv = 1.5 * N_n - 0.5 * N_prev
        Gmid = 0.5 * (known_part(t, frozen_n) + known_part(t_next, frozen_next))
        lift_next = frozen_next[-1]
        dlift = lift_next - lift
        rhs = (U + dt * adv + dt * Gmid - dlift
               + 0.5 * dt * nus[:, None] * np.vstack(
                   [diffuse(U[r], Rs[r], 0.0) for r in range(3)]))
        rhs[:, -1] = 0.0
        nus_next = frozen_next[3]
        Rs_next = frozen_next[5]
        for r in range(3):
            ab = banded_matrix(0.5 * dt * nus_next[r], Rs_next[r])
            U[r] = solve_banded((1, 1), ab, rhs[r])
        N_prev = N_n
        frozen_n = frozen_next
        if (n + 1) % store_every == 0:
            store(idx, t_next, frozen_n)
            idx += 1

    traj = LayerTrajectory(k, zeta, t_out[:idx], ub_out[:idx], th_out[:idx])
    _check_far_field(traj, far_tol)
    return traj


def _check_far_field(traj, far_tol):
    for name, arr in (("ub", traj.ub[-1]), ("theta", traj.theta[-1][None, :])):
        for row in np.atleast_2d(arr):
            peak = np.max(np.abs(row))
            if peak > 0.0 and abs(row[-1]) > far_tol * peak:
                raise SlipflowError(
                    "far-field residual of %s at final time: |%.2e| > %.1e"
                    % (name, row[-1], far_tol * peak))


def finish_profiles(traj, coeffs, p=None, u3=None):
    """Attach the slaved fields: pressure, normal velocity, density.

    p and u3 default to zero (exact at first order); the density follows
    from the layer pressure relation p = (rho0 theta + 3 T0 rho) / 3.
    """
    nt, nz = traj.theta.shape
    traj.p = np.zeros((nt, nz)) if p is None else np.asarray(p, dtype=float)
    traj.u3 = np.zeros((nt, nz)) if u3 is None else np.asarray(u3, dtype=float)
    traj.rho = np.empty((nt, nz))
    for i, t in enumerate(traj.times):
        rho0, T0 = coeffs.at(t)[:2]
        traj.rho[i] = (3.0 * traj.p[i] - rho0 * traj.theta[i]) / (3.0 * T0)
    return traj


class LayerProfile:
    """One layer snapshot: tangential velocity, temperature, slaved fields."""

    def __init__(self, zeta, ub, theta, rho, u3, p, weight_l=4):
        self.zeta = zeta
        self.ub = ub
        self.theta = theta
        self.rho = rho
        self.u3 = u3
        self.p = p
        self.weight_l = weight_l

    def fields(self):
        return {"ub1": self.ub[0], "ub2": self.ub[1], "theta": self.theta,
                "rho": self.rho, "u3": self.u3, "p": self.p}

    def validate(self, p0=None, far_tol=1e-6, order_one=False, tol=1e-10):
        for name, arr in self.fields().items():
            peak = np.max(np.abs(arr))
            if peak > 0.0 and abs(arr[-1]) > far_tol * peak:
                raise SlipflowError("far-field residual of %s: |%.2e| > %.1e"
                                    % (name, arr[-1], far_tol * peak))
        if order_one:
            if np.max(np.abs(self.u3)) > tol:
                raise SlipflowError("first-order layer normal velocity "
                                    "must vanish identically")
            if np.max(np.abs(self.p)) > tol:
                raise SlipflowError("first-order layer pressure must vanish")
        if p0 is not None:
            p0 = _params(p0)
            res = self.p - (p0.rho * self.theta + 3.0 * p0.T * self.rho) / 3.0
            scale = max(np.max(np.abs(self.p)), np.max(np.abs(self.theta)), 1.0)
            if np.max(np.abs(res)) > tol * scale:
                raise SlipflowError("layer pressure relation violated: %.2e"
                                    % np.max(np.abs(res)))
        return self

    def weighted_norm(self, name, l=None):
        l = self.weight_l if l is None else l
        arr = self.fields()[name]
        return weighted_l2(arr, self.zeta, l)


def profile_at(traj, t, weight_l=4):
    if traj.rho is None:
        raise AssemblyError("layer trajectory has no slaved fields yet: "
                            "call finish_profiles first")
    i = traj.index_of(t)
    return LayerProfile(traj.zeta, traj.ub[i], traj.theta[i], traj.rho[i],
                        traj.u3[i], traj.p[i], weight_l=weight_l)


def weighted_l2(arr, zeta, l):
    """Discrete algebraically weighted norm (integral of (1+zeta)^l |f|^2)."""
    w = (1.0 + zeta) ** l * np.abs(arr) ** 2
    cells = 0.5 * (w[..., 1:] + w[..., :-1]) * np.diff(zeta)
    return float(np.sqrt(cells.sum()))


def _ddt(arr, times):
    out = np.empty_like(arr)
    if len(times) < 2:
        out[:] = 0.0
        return out
    dt0 = times[1] - times[0]
    out[0] = (arr[1] - arr[0]) / dt0
    out[-1] = (arr[-1] - arr[-2]) / (times[-1] - times[-2])
    if len(times) > 2:
        num = arr[2:] - arr[:-2]
        den = (times[2:] - times[:-2])[:, None]
        out[1:-1] = num / den
    return out


def _d1_zeta(arr, dz):
    out = np.empty_like(arr)
    out[..., 0] = (-3.0 * arr[..., 0] + 4.0 * arr[..., 1] - arr[..., 2]) / (2.0 * dz)
    out[..., -1] = (3.0 * arr[..., -1] - 4.0 * arr[..., -2] + arr[..., -3]) / (2.0 * dz)
    out[..., 1:-1] = (arr[..., 2:] - arr[..., :-2]) / (2.0 * dz)
    return out


def _tail_integral(arr, zeta):
    # integral from zeta to the truncation edge, trapezoid, zero far field
    cells = 0.5 * (arr[..., 1:] + arr[..., :-1]) * np.diff(zeta)
    out = np.zeros_like(arr)
    out[..., :-1] = np.cumsum(cells[..., ::-1], axis=-1)[..., ::-1]
    return out


def reconstruct_normal(times, zeta, rho_b, rho0):
    """Layer normal velocity of the next order from the density history.

    u3(t, zeta) = integral_zeta^zmax d_t rho_b / rho0, so the far field
    vanishes by construction.  rho0 is a float or callable of time.
    """
    rho0 = _as_scalar_fn(rho0)
    drho = _ddt(np.asarray(rho_b, dtype=float), np.asarray(times, dtype=float))
    scale = np.array([rho0(t) for t in np.atleast_1d(times)])
    return _tail_integral(drho / scale[:, None], zeta)


def reconstruct_pressure(times, zeta, u3, coeffs, JA33=None, W3=None):
    """Layer pressure of the next order, integrated inward from the edge.

    The zeta-derivative of the pressure balances the material acceleration
    of the layer normal velocity, its stretched-drift transport, the
    normal viscous stress, and the memory moments; integrating from the
    truncation edge builds in the zero far field.  JA33 is the stress
    moment profile of the memory term (already contracted), W3 the normal
    component of the tangential-divergence source; both default to zero.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    u3 = np.asarray(u3, dtype=float)
    dz = zeta[1] - zeta[0]
    du3_dt = _ddt(u3, times)
    rhs = np.zeros_like(u3)
    for i, t in enumerate(times):
        rho0, T0, du3, u13, mu, kappa = coeffs.at(t)
        drift = du3 * zeta + u13
        rhs[i] = (-rho0 * du3_dt[i] + rho0 * du3 * u3[i]
                  + 4.0 / 3.0 * mu * _d1_zeta(_d1_zeta(u3[i], dz), dz)
                  - 4.0 / 3.0 * rho0 * _d1_zeta(drift * u3[i], dz))
    if JA33 is not None:
        rhs -= _d1_zeta(np.asarray(JA33, dtype=float), dz)
    if W3 is not None:
        rhs += np.asarray(W3, dtype=float)
    return -_tail_integral(rhs, zeta)


def layer_sources(zeta, u3, tang_coeff, therm_coeff, rho0, T0, pb=None,
                  dpb_dt=None, div_u0=0.0, JA=None, JB=None):
    """Sources (f (2, nz), g (nz,)) driving the next-order layer solve.

    tang_coeff (2, nz) and therm_coeff (nz,) are the assembled transport
    brackets multiplying the layer normal velocity u3 (the linear-in-zeta
    background slopes plus the order-1 traces); JA (2, nz) and JB (nz,)
    are the contracted memory moments; pb and dpb_dt feed the pressure
    work in the thermal source.  Entries default to zero.
    """
    zeta = np.asarray(zeta, dtype=float)
    dz = zeta[1] - zeta[0]
    u3 = np.asarray(u3, dtype=float)
    f = -rho0 * _d1_zeta(np.asarray(tang_coeff, dtype=float) * u3, dz)
    if JA is not None:
        f -= T0 * _d1_zeta(np.asarray(JA, dtype=float), dz)
    g = -rho0 * _d1_zeta(np.asarray(therm_coeff, dtype=float) * u3, dz)
    if JB is not None:
        g -= 1.2 * T0 ** 1.5 * _d1_zeta(np.asarray(JB, dtype=float), dz)
    if pb is not None or dpb_dt is not None:
        pb = np.zeros_like(zeta) if pb is None else np.asarray(pb, dtype=float)
        dpb = np.zeros_like(zeta) if dpb_dt is None else np.asarray(dpb_dt, dtype=float)
        g += 0.6 * (2.0 * dpb + 10.0 / 3.0 * div_u0 * pb)
    return f, g


def micro_layer_part(fields, zeta, p0, grid, model, L, M1=None, f1=None,
                     fb1=None, J_prev=None, defect_tol=1e-6):
    """Kernel-orthogonal part of the next-order layer distribution.

    fields = (rho (nz,), u (nz, 3), theta (nz,)) is the macroscopic layer
    triple at one time; the right-hand side collects the normal transport
    of its hydrodynamic image and its collisional couplings with the wall
    Taylor slope M1 (a full distribution), the interior first-order
    distribution f1 and the layer first-order distribution fb1 (both in
    the sqrt(M)-weighted representation; fb1 varies with zeta).  The
    right-hand side is projected onto the orthogonal complement of the
    collision kernel with the defect logged, solved node by node, and the
    memory term J_prev is added verbatim.
    """
    p0 = _params(p0)
    rho_b, u_b, th_b = fields
    zeta = np.asarray(zeta, dtype=float)
    nz = len(zeta)
    dz = zeta[1] - zeta[0]
    sqM = np.sqrt(maxwellian_pointwise(p0, grid))
    proj = Projector(p0, grid)
    v3 = grid.nodes[:, 2]

    H = np.empty((nz, grid.size))
    for i in range(nz):
        H[i] = hydro_field(p0, grid, rho_b[i], u_b[i], th_b[i])
    dH = _d1_zeta(H.T, dz).T

    rhs = np.empty_like(H)
    for i in range(nz):
        r = -proj.complement(v3 * dH[i])
        if M1 is not None:
            r = r + zeta[i] / sqM * 2.0 * sym_bilinear(M1, sqM * H[i],
                                                       p0, grid, model)
        if f1 is not None:
            r = r + 2.0 / sqM * sym_bilinear(sqM * np.asarray(f1), sqM * H[i],
                                             p0, grid, model)
        if fb1 is not None:
            r = r + 2.0 / sqM * sym_bilinear(sqM * np.asarray(fb1)[i],
                                             sqM * H[i], p0, grid, model)
        rhs[i] = r

    scale = max(float(np.max(np.sqrt((rhs ** 2 * grid.weights).sum(axis=1)))),
                1e-8 * grid.norm(sqM))
    out = np.empty_like(rhs)
    max_defect = 0.0
    for i in range(nz):
        rperp = proj.complement(rhs[i])
        defect = grid.norm(rhs[i] - rperp) / scale
        max_defect = max(max_defect, defect)
        if defect > defect_tol:
            raise SolvabilityError(
                "layer micro part solvability defect %.2e at node %d"
                % (defect, i), residuals=defect)
        out[i] = L.solve(rperp, gate=np.inf)
    if J_prev is not None:
        out = out + np.asarray(J_prev, dtype=float)
    return out, max_defect


def save_layer(traj, path):
    """Columnar layer history: time, zeta, solved and slaved fields."""
    have_slaved = traj.rho is not None
    cols = ["time", "zeta", "ub1", "ub2", "theta"]
    if have_slaved:
        cols += ["rho", "u3", "p"]
    rows = []
    for i, t in enumerate(traj.times):
        block = [np.full_like(traj.zeta, t), traj.zeta,
                 traj.ub[i, 0], traj.ub[i, 1], traj.theta[i]]
        if have_slaved:
            block += [traj.rho[i], traj.u3[i], traj.p[i]]
        rows.append(np.column_stack(block))
    data = np.vstack(rows)
    np.savetxt(path, data, fmt="%.17g", header=" ".join(cols))
    return path
