"""Coupled construction and assembly of the truncated half-space expansion.

The hierarchy couples four solvers per order k: the interior corrector
(linear hyperbolic fluid system with the slip boundary value), the
interior microscopic part (node-by-node Fredholm solves), the kinetic
half-space layer in the stretched coordinate xi = x3/eps, and the viscous
layer in zeta = x3/sqrt(eps) whose Robin data mixes traces of all three.
Stages are built strictly in dependency order

    corrector 1 -> knudsen 1 -> prandtl 1 -> corrector 2 -> knudsen 2
    -> prandtl 2

and requesting one out of order raises StageError.  The chain stops at
K = 2; the order-3 memory objects that feed order-2 sources in the full
construction (the layer memory distribution and its contracted moments,
the order-3 interior microscopic part, and the order-3 kinetic-layer
functionals) are set to zero, so their absence shows up in the measured
equation residual rather than being hidden.

Everything in the hierarchy is independent of the Knudsen number: eps
enters only through the expansion weights sqrt(eps)^k and the coordinate
maps zeta = x3/sqrt(eps), xi = x3/eps at assembly time, so one hierarchy
serves every eps of a convergence study.

Representation conventions: interior and layer corrections are carried as
velocity "ratios" g with distribution F = g * sqrt(M), where M is the
local interior Maxwellian for interior terms and the wall Maxwellian for
layer terms; the order-zero ratio is sqrt(M) itself.
"""

import json
import os

import numpy as np
from scipy.interpolate import CubicSpline

from .collision import assemble_linearized, sym_bilinear
from .correctors import (CorrectorTrajectory, background_at,
                         burnett_source_fields, hydro_distribution,
                         microscopic_part, slip_value, solve_corrector)
from .errors import AssemblyError, ConfigError, SlipflowError, StageError
from .euler import derivative_matrix, EulerTrajectory, gaussian_bump_ic, \
    fornberg, solve_euler
from .knudsen import (KnudsenProblem, boundary_data, enforce_solvability,
                      solve_halfspace)
from .prandtl import (LayerTrajectory, RobinData, coeffs_from_trajectory,
                      finish_profiles, layer_sources, micro_layer_part,
                      reconstruct_normal, robin_coefficients, robin_sources,
                      solve_prandtl)
from .velocity import MaxwellianParams, Projector, hydro_field, \
    maxwellian_pointwise

SQRT_2PI = np.sqrt(2.0 * np.pi)

# build order; each stage requires all earlier ones
_STAGES = (("corrector", 1), ("knudsen", 1), ("prandtl", 1),
           ("corrector", 2), ("knudsen", 2), ("prandtl", 2))


def _lerp(times, values, t):
    """Linear interpolation of values (nt, ...) along axis 0, clamped."""
    times = np.asarray(times, dtype=float)
    if t <= times[0]:
        return np.array(values[0], dtype=float)
    if t >= times[-1]:
        return np.array(values[-1], dtype=float)
    j = int(np.searchsorted(times, t)) - 1
    w = (t - times[j]) / (times[j + 1] - times[j])
    return (1.0 - w) * np.asarray(values[j]) + w * np.asarray(values[j + 1])


class ExpansionBundle:
    """One-time snapshot of the truncated expansion, ready to assemble.

    Interior terms Fk live on the background grid x, viscous-layer terms
    Fbk on the zeta grid, kinetic-layer terms Fbbk on the xi grid, all as
    distributions (ratio times the appropriate sqrt-Maxwellian weight).
    The accommodation coefficient is sqrt(2 pi eps) exactly; the direct
    solver separately caps its wall model at one.
    """

    def __init__(self, epsilon, K, t, x, zeta, xi, M, Fk, Fbk, Fbbk, p0):
        if epsilon <= 0.0:
            raise ConfigError("epsilon must be positive")
        self.epsilon = float(epsilon)
        self.K = int(K)
        self.t = float(t)
        self.x = x
        self.zeta = zeta
        self.xi = xi
        self.M = M
        self.Fk = Fk
        self.Fbk = Fbk
        self.Fbbk = Fbbk
        self.p0 = p0
        self.alpha_eps = SQRT_2PI * np.sqrt(self.epsilon)

    def weight(self, k):
        return self.epsilon ** (0.5 * k)


class Hierarchy:
    """Per-order expansion data over one background trajectory.

    orders[k] holds the corrector trajectory, per-time kinetic-layer
    slices, the viscous-layer trajectory, and (k = 2) the reconstructed
    layer normal velocity and the kernel-orthogonal layer part.  The
    kinetic-layer slices and all wall traces are stored at self.times
    (requested times snapped to stored background times); corrector and
    layer trajectories cover the full background time span so boundary
    data can be interpolated at integrator stage times.
    """

    def __init__(self, cfg, grid=None, model=None, times=None):
        from .config import collision_model, velocity_grid

        self.cfg = cfg
        self.grid = velocity_grid(cfg) if grid is None else grid
        self.model = collision_model(cfg) if model is None else model
        eu = cfg["euler"]
        x = np.linspace(0.0, eu["xmax"], eu["nx"])
        ic = gaussian_bump_ic(
            x, rho_ref=eu["rho_ref"], T_ref=eu["T_ref"],
            rho_amp=eu["rho_amp"], T_amp=eu["T_amp"],
            shear_amp=eu["shear_amp"], center=eu["center"],
            width=eu["width"], flat_margin=eu["flat_margin"],
            ramp_width=eu["ramp_width"])
        self.euler = solve_euler(ic, eu["xmax"], eu["nx"], eu["tau"],
                                 cfl=eu["cfl"])
        self.times = self._snap_times(times)
        pr, kn = cfg["prandtl"], cfg["knudsen"]
        self.zeta = np.linspace(0.0, pr["zmax"], pr["nz"])
        self.xi = np.linspace(0.0, kn["ximax"], kn["nxi"])
        self.slip_mode = pr["slip_mode"]
        self.mu = pr["mu"]
        self.kappa = pr["kappa"]
        self.orders = {1: {}, 2: {}}
        self.diagnostics = {}
        self._built = set()
        self._micro2_cache = {}
        self._microlayer2_cache = {}

    def _snap_times(self, times):
        ts = self.euler.times
        if times is None:
            times = (0.0, self.cfg["study"]["t_star"])
        req = np.atleast_1d(np.asarray(times, dtype=float))
        if np.any(req > ts[-1] + 1e-12):
            raise ConfigError(
                "requested time %.4g beyond the background horizon %.4g"
                % (float(np.max(req)), ts[-1]))
        snapped = []
        for t in req:
            tn = float(ts[int(np.argmin(np.abs(ts - t)))])
            if not snapped or tn > snapped[-1]:
                snapped.append(tn)
        return tuple(snapped)

    def index_of(self, t):
        ts = np.asarray(self.times)
        j = int(np.argmin(np.abs(ts - t)))
        if abs(ts[j] - t) > 1e-9 + 1e-6 * max(abs(t), 1.0):
            raise StageError("time %.6g has no stored layer slices "
                             "(stored: %s)" % (t, list(self.times)))
        return j

    # wall state helpers ---------------------------------------------------

    def wall_params(self, t):
        s = background_at(self.euler, t)
        return MaxwellianParams(s.rho[0], [s.u[0, 0], s.u[1, 0], 0.0],
                                s.T[0])

    def _corr_wall(self, k, t):
        """(rho_k, u_k (3,), theta_k) at the wall, interpolated in time."""
        corr = self._get(k, "corr")
        wall = self.orders[k].setdefault(
            "_corr_wall", {}).get(id(corr))
        if wall is None:
            wall = np.array([W[:, 0] for W in corr.fields])
            self.orders[k]["_corr_wall"][id(corr)] = wall
        W = _lerp(corr.times, wall, t)
        return W[0], W[1:4], W[4]

    def _interior_trace(self, k, t, p0):
        rho_k, u_k, th_k = self._corr_wall(k, t)
        return hydro_field(p0, self.grid, rho_k, u_k, th_k)

    def _layer_trace(self, t, p0):
        """Order-1 viscous-layer wall trace as a velocity ratio."""
        traj = self._get(1, "prandtl")
        ub = _lerp(traj.times, traj.ub[:, :, 0], t)
        th = float(_lerp(traj.times, traj.theta[:, 0], t))
        rho = float(_lerp(traj.times, traj.rho[:, 0], t))
        return hydro_field(p0, self.grid, rho, [ub[0], ub[1], 0.0], th)

    def _knudsen_wall(self, t):
        """Order-1 kinetic-layer wall trace, interpolated over self.times."""
        slices = self._get(1, "knudsen")
        traces = np.array([s["wall_trace"] for s in slices])
        return _lerp(self.times, traces, t)

    # stage bookkeeping ----------------------------------------------------

    def _require(self, name, k):
        want = (name, k)
        if want not in _STAGES:
            raise ConfigError("no stage %s of order %d in the K <= 2 "
                              "pipeline" % (name, k))
        for stage in _STAGES:
            if stage == want:
                return
            if stage not in self._built:
                raise StageError(
                    "%s order %d requires %s order %d to be built first"
                    % (name, k, stage[0], stage[1]))

    def _get(self, k, what):
        try:
            return self.orders[k][what]
        except KeyError:
            raise StageError("order %d has no %r data yet; build the "
                             "hierarchy stages in order" % (k, what))

    def _stage(self, name, k):
        self._require(name, k)
        try:
            getattr(self, "_build_%s" % name)(k)
        except SlipflowError as err:
            if isinstance(err, StageError):
                raise
            raise type(err)("order %d %s stage: %s" % (k, name, err)) \
                from err
        self._built.add((name, k))

    def build_corrector(self, k):
        self._stage("corrector", k)

    def build_knudsen(self, k):
        self._stage("knudsen", k)

    def build_prandtl(self, k):
        self._stage("prandtl", k)

    def build(self, K):
        if K not in (0, 1, 2):
            raise ConfigError(
                "truncation order K=%s not supported: the desk-scale "
                "pipeline builds K <= 2 (deeper orders need the full "
                "Taylor/bilinear source bookkeeping)" % (K,))
        self.K = K
        for name, k in _STAGES:
            if k <= K and (name, k) not in self._built:
                self._stage(name, k)
        return self

    # order-2 helper fields --------------------------------------------------

    # Solvability gate for the kernel-orthogonal solves.  The floor is the
    # lattice's invariant-moment quadrature noise, which grows as the
    # background Maxwellian widens against a fixed velocity box; actual
    # defects land in self.diagnostics (1e-7 at the reference lattice).
    defect_tol = 2e-5

    def micro2(self, t):
        """Interior kernel-orthogonal part at order 2, all spatial nodes."""
        key = float(t)
        if key not in self._micro2_cache:
            corr1 = self._get(1, "corr")
            out, defect = microscopic_part(2, self.euler, t, self.grid,
                                           self.model, lower_orders=[corr1],
                                           defect_tol=self.defect_tol)
            self._micro2_cache[key] = out
            d = self.diagnostics.setdefault("micro2_defect", 0.0)
            self.diagnostics["micro2_defect"] = max(d, defect)
        return self._micro2_cache[key]

    def microlayer2(self, t):
        """Kernel-orthogonal part of the order-2 viscous layer at time t."""
        key = float(t)
        if key not in self._microlayer2_cache:
            traj1 = self._get(1, "prandtl")
            p0 = self.wall_params(t)
            nz = len(self.zeta)
            rho_b = _lerp(traj1.times, traj1.rho, t)
            ub = _lerp(traj1.times, traj1.ub, t)
            th_b = _lerp(traj1.times, traj1.theta, t)
            u_b = np.zeros((nz, 3))
            u_b[:, 0] = ub[0]
            u_b[:, 1] = ub[1]
            tay = self.euler.wall_taylor(t)
            M0 = maxwellian_pointwise(p0, self.grid)
            c = self.grid.nodes - p0.u
            c2 = (c ** 2).sum(axis=1)
            M1 = M0 * (tay["rho"][1] / p0.rho
                       + (c[:, 0] * tay["u1"][1] + c[:, 1] * tay["u2"][1]
                          + c[:, 2] * tay["u3"][1]) / p0.T
                       + (c2 / (2.0 * p0.T) - 1.5) * tay["T"][1] / p0.T)
            f1 = self._interior_trace(1, t, p0)
            fb1 = np.empty((nz, self.grid.size))
            for i in range(nz):
                fb1[i] = hydro_field(p0, self.grid, rho_b[i], u_b[i],
                                     th_b[i])
            L = assemble_linearized(p0, self.grid, self.model)
            out, defect = micro_layer_part(
                (rho_b, u_b, th_b), self.zeta, p0, self.grid, self.model,
                L, M1=M1, f1=f1, fb1=fb1, defect_tol=self.defect_tol)
            self._microlayer2_cache[key] = out
            d = self.diagnostics.setdefault("microlayer2_defect", 0.0)
            self.diagnostics["microlayer2_defect"] = max(d, defect)
        return self._microlayer2_cache[key]

    def _ub3_at(self, t):
        """Order-2 layer normal velocity profile at time t."""
        traj1 = self._get(1, "prandtl")
        return _lerp(traj1.times, self._get(2, "ub3"), t)

    # stage builders ---------------------------------------------------------

    def _build_corrector(self, k):
        grid, mode = self.grid, self.slip_mode
        if k == 1:
            def slip1(t):
                p0 = self.wall_params(t)
                return slip_value(1, {"rho0": p0.rho, "T0": p0.T},
                                  mode=mode, grid=grid)

            self.orders[1]["corr"] = solve_corrector(1, self.euler, slip1)
            return

        corr1 = self._get(1, "corr")
        traj1 = self._get(1, "prandtl")
        ub3 = reconstruct_normal(
            traj1.times, self.zeta, traj1.rho,
            lambda t: self.wall_params(t).rho)
        self.orders[2]["ub3"] = ub3

        def slip2(t):
            p0 = self.wall_params(t)
            f_prev = self._interior_trace(1, t, p0)
            fb_prev = self._layer_trace(t, p0)
            fbb_prev = self._knudsen_wall(t)
            ub_k3 = float(_lerp(traj1.times, ub3[:, 0], t))
            return slip_value(
                2, {"rho0": p0.rho, "T0": p0.T, "f_prev": f_prev},
                {"ub_k3": ub_k3, "fb_prev": fb_prev},
                {"Psi_k": 0.0, "Theta_k": 0.0, "fbb_prev": fbb_prev},
                mode=mode, grid=grid)

        # Burnett-moment sources sampled along the background trajectory
        # and interpolated; the integrator hits half-step times
        ts = self.euler.times
        stride = max(1, (len(ts) - 1) // 12)
        samples = sorted(set(list(ts[::stride]) + [ts[-1]]))
        srcs = np.array([burnett_source_fields(self.euler, t, self.micro2(t),
                                               grid) for t in samples])

        def src_fn(t):
            return _lerp(samples, srcs, t)

        self.orders[2]["corr"] = solve_corrector(
            2, self.euler, slip2, lower_orders=[corr1], source_fn=src_fn)

    def _build_knudsen(self, k):
        grid, model = self.grid, self.model
        nxi, N = len(self.xi), grid.size
        tol = self.cfg["knudsen"]["tol"]
        slices = []
        for t in self.times:
            p0 = self.wall_params(t)
            sqM = np.sqrt(maxwellian_pointwise(p0, grid))
            L = assemble_linearized(p0, grid, model)
            if k == 1:
                # even layer-trace parts cancel in the odd difference, and
                # the order-zero flux term sees only sqrt(M0), so the
                # first kinetic layer closes without the viscous layer
                trace_k = self._interior_trace(1, t, p0)
                trace_prev = sqM
                S2 = np.zeros((nxi, N))
            else:
                f1w = self._interior_trace(1, t, p0)
                fb1w = self._layer_trace(t, p0)
                sl1 = self._get(1, "knudsen")[self.index_of(t)]
                trace_prev = f1w + fb1w + sl1["wall_trace"]
                ub3w = float(self._ub3_at(t)[0])
                trace_k = (self._interior_trace(2, t, p0)
                           + self.micro2(t)[0]
                           + hydro_field(p0, grid, 0.0, [0.0, 0.0, ub3w],
                                         0.0)
                           + self.microlayer2(t)[0])
                S2 = self._knudsen_source2(t, p0, f1w, fb1w, sl1["f"], sqM)
            bc_raw = boundary_data(k, trace_k, trace_prev, p0, grid)
            bc, repair = enforce_solvability(bc_raw, p0, grid)
            prob = KnudsenProblem(L, np.zeros((nxi, N)), S2, bc, self.xi,
                                  p0, grid, model)
            f, info = solve_halfspace(prob, tol=tol)
            slices.append({"f": f, "bc": bc, "repair": repair,
                           "wall_trace": info["wall_trace"], "info": info,
                           "p0": p0})
        self.orders[k]["knudsen"] = slices

    def _knudsen_source2(self, t, p0, f1w, fb1w, fbb1, sqM):
        """Order-2 kinetic-layer source: collisions of the order-1 layer
        with the combined order-1 wall trace and with itself.

        The continuum source is kernel-orthogonal (collision outputs carry
        no invariant moments); the lattice rows are re-projected to strip
        the O(step^2) differencing noise of the bilinear form.
        """
        grid, model = self.grid, self.model
        proj = Projector(p0, grid)
        G1 = sqM * (f1w + fb1w)
        Fbb1 = sqM * fbb1
        amp = np.max(np.abs(Fbb1))
        S2 = np.zeros_like(fbb1)
        for i in range(len(self.xi)):
            if np.max(np.abs(Fbb1[i])) < 1e-13 * amp:
                continue
            raw = (2.0 * sym_bilinear(G1, Fbb1[i], p0, grid, model)
                   + sym_bilinear(Fbb1[i], Fbb1[i], p0, grid, model)) / sqM
            S2[i] = proj.complement(raw)
        return S2

    def _build_prandtl(self, k):
        grid = self.grid
        mu, kappa = self.mu, self.kappa
        pr = self.cfg["prandtl"]
        coeffs = coeffs_from_trajectory(self.euler, mu, kappa,
                                        slip_mode=self.slip_mode, grid=grid)
        if k == 1:
            self.orders[1]["coeffs"] = coeffs

        lam_u = np.empty((len(self.times), 2))
        lam_th = np.empty(len(self.times))
        for j, t in enumerate(self.times):
            p0 = self.wall_params(t)
            lam_u[j], lam_th[j] = robin_sources(
                k + 1, self._robin_traces(k + 1, t, p0), p0, grid, mu, kappa)
        self.orders[k]["robin"] = {"lam_u": lam_u, "lam_th": lam_th}

        def R_u(t):
            return robin_coefficients(self.wall_params(t), mu, kappa)[0]

        def R_th(t):
            return robin_coefficients(self.wall_params(t), mu, kappa)[1]

        rd = RobinData(R_u, R_th,
                       b=lambda t: _lerp(self.times, lam_u, t),
                       a=lambda t: float(_lerp(self.times, lam_th, t)))

        t_end = float(self.euler.times[-1])
        dt = self._layer_dt(coeffs, t_end, pr)
        sources = None if k == 1 else self._layer_sources_fn()
        traj = solve_prandtl(k, coeffs, rd, t_end, dt, nz=pr["nz"],
                             zmax=pr["zmax"], sources=sources,
                             cfl_max=pr["cfl"])
        if k == 1:
            finish_profiles(traj, coeffs)
        else:
            traj1 = self._get(1, "prandtl")
            ub3 = self._get(2, "ub3")
            u3 = np.array([_lerp(traj1.times, ub3, t) for t in traj.times])
            finish_profiles(traj, coeffs, p=np.zeros_like(traj.theta), u3=u3)
        self.orders[k]["prandtl"] = traj

    def _robin_traces(self, kk, t, p0):
        """Wall traces feeding the Robin data of layer order kk - 1.

        At kk = 3 the order-3 memory objects (interior and layer
        kernel-orthogonal parts, kinetic-layer functionals) are zero by
        the K = 2 truncation; the order-2 kinetic functionals vanish
        identically because the order-2 null-space source does.
        """
        grid = self.grid
        sqM = np.sqrt(maxwellian_pointwise(p0, grid))
        rho1, u1, th1 = self._corr_wall(1, t)
        tr = {"Phi_k": np.zeros(2), "Theta_k": 0.0,
              "Psi_prev": 0.0, "Theta_prev": 0.0}
        if kk == 2:
            tr.update({
                "u_prev_tang": u1[:2], "u1_tang": u1[:2], "ub_prev_3": 0.0,
                "micro_wall": self.micro2(t)[0],
                "halfflux": self._knudsen_wall(t),
                "theta1_sum": th1, "theta_prev": th1, "rho_prev": rho1,
                "pb_prev": 0.0, "flux_km2": sqM})
            return tr
        traj1 = self._get(1, "prandtl")
        ub1w = _lerp(traj1.times, traj1.ub[:, :, 0], t)
        thb1w = float(_lerp(traj1.times, traj1.theta[:, 0], t))
        rho2, u2, th2 = self._corr_wall(2, t)
        sl2 = self._get(2, "knudsen")[self.index_of(t)]
        f1w = self._interior_trace(1, t, p0)
        fb1w = self._layer_trace(t, p0)
        tr.update({
            "u_prev_tang": u2[:2], "u1_tang": u1[:2] + ub1w,
            "ub_prev_3": float(self._ub3_at(t)[0]),
            "micro_wall": np.zeros(grid.size),
            "halfflux": (self.micro2(t)[0] + self.microlayer2(t)[0]
                         + sl2["wall_trace"]),
            "theta1_sum": th1 + thb1w, "theta_prev": th2, "rho_prev": rho2,
            "pb_prev": 0.0,
            "flux_km2": f1w + fb1w + self._knudsen_wall(t)})
        return tr

    def _layer_dt(self, coeffs, t_end, pr):
        amax = 0.0
        for t in self.euler.times:
            _, _, du3, u13, _, _ = coeffs.at(t)
            amax = max(amax, abs(du3) * pr["zmax"] + abs(u13))
        dz = self.zeta[1] - self.zeta[0]
        nsteps = 8
        if amax > 0.0:
            nsteps = max(8, int(np.ceil(t_end * amax / (pr["cfl"] * dz))))
        return t_end / nsteps

    def _layer_sources_fn(self):
        """Order-2 layer sources: transport brackets times the
        reconstructed normal velocity (order-3 memory moments dropped)."""
        traj1 = self._get(1, "prandtl")
        zeta = self.zeta
        ts = self.euler.times
        tay = np.array([[self.euler.wall_taylor(t)[f][1]
                         for f in ("u1", "u2", "T")] for t in ts])
        corr1 = self._get(1, "corr")
        wall1 = np.array([W[:, 0] for W in corr1.fields])

        def sources(t):
            u3 = self._ub3_at(t)
            du1, du2, dT = _lerp(ts, tay, t)
            W1 = _lerp(corr1.times, wall1, t)
            ub = _lerp(traj1.times, traj1.ub, t)
            thb = _lerp(traj1.times, traj1.theta, t)
            tang = np.empty((2, len(zeta)))
            tang[0] = du1 * zeta + W1[1] + ub[0]
            tang[1] = du2 * zeta + W1[2] + ub[1]
            therm = 3.0 * dT * zeta + W1[4] + thb
            p0 = self.wall_params(t)
            return layer_sources(zeta, u3, tang, therm, p0.rho, p0.T)

        return sources


def build_hierarchy(cfg, K=None, grid=None, model=None, times=None):
    """Build the coupled expansion hierarchy up to truncation order K.

    K defaults to the configured study order.  times are the wall times
    at which kinetic-layer slices and Robin data are evaluated (snapped
    to stored background times); between them boundary data interpolate
    linearly.  Returns the Hierarchy.
    """
    if K is None:
        K = cfg["study"]["K"]
    hier = Hierarchy(cfg, grid=grid, model=model, times=times)
    return hier.build(K)


def snapshot_bundle(hier, epsilon, t, K=None):
    """Freeze expansion terms at one stored time into an ExpansionBundle."""
    K = hier.K if K is None else int(K)
    if K > getattr(hier, "K", 0):
        raise StageError("bundle order K=%d exceeds the built hierarchy "
                         "(K=%d)" % (K, hier.K))
    t = hier.times[hier.index_of(t)]
    grid = hier.grid
    s = hier.euler.primitive(t)
    nx = hier.euler.nx
    M = np.empty((nx, grid.size))
    for i in range(nx):
        M[i] = maxwellian_pointwise(
            MaxwellianParams(s.rho[i], s.u[:, i], s.T[i]), grid)
    p0 = hier.wall_params(t)
    sqM0 = np.sqrt(maxwellian_pointwise(p0, grid))
    Fk, Fbk, Fbbk = {}, {}, {}
    for k in range(1, K + 1):
        corr = hier._get(k, "corr")
        Fk[k] = hydro_distribution(hier.euler, t, corr, grid)
        if k == 2:
            Fk[k] = Fk[k] + hier.micro2(t) * np.sqrt(M)
        traj = hier._get(k, "prandtl")
        rho_b = _lerp(traj.times, traj.rho, t)
        ub = _lerp(traj.times, traj.ub, t)
        th_b = _lerp(traj.times, traj.theta, t)
        u3 = (hier._ub3_at(t) if k == 2
              else np.zeros_like(rho_b))
        fb = np.empty((len(hier.zeta), grid.size))
        for i in range(len(hier.zeta)):
            fb[i] = hydro_field(p0, grid, rho_b[i],
                                [ub[0, i], ub[1, i], u3[i]], th_b[i])
        if k == 2:
            fb = fb + hier.microlayer2(t)
        Fbk[k] = fb * sqM0
        sl = hier._get(k, "knudsen")[hier.index_of(t)]
        Fbbk[k] = sl["f"] * sqM0
    return ExpansionBundle(epsilon, K, t, hier.euler.x, hier.zeta, hier.xi,
                           M, Fk, Fbk, Fbbk, p0)


def _layer_interp(coords, values, pts):
    """Cubic interpolation on a layer grid; zero beyond its far edge."""
    spline = CubicSpline(coords, values, axis=0, extrapolate=False)
    out = spline(np.minimum(pts, coords[-1]))
    out[pts > coords[-1]] = 0.0
    return out


def assemble(bundle, x3_grid, pos_tol=1e-6):
    """Composite field M + sum_k sqrt(eps)^k (F_k + F^b_k + F^{bb}_k).

    Interior terms are interpolated cubically on the background grid,
    layer terms in their stretched coordinates x3/sqrt(eps) and x3/eps
    with zero beyond the layer grids (decay).  The assembled field must
    stay above -pos_tol times its maximum.
    """
    x3 = np.asarray(x3_grid, dtype=float)
    x = bundle.x
    if np.any(x3 < x[0] - 1e-12) or np.any(x3 > x[-1] + 1e-12):
        raise AssemblyError("assembly grid leaves the background domain "
                            "[%.3g, %.3g]" % (x[0], x[-1]))
    F = CubicSpline(x, bundle.M, axis=0)(x3)
    eps = bundle.epsilon
    for k in range(1, bundle.K + 1):
        w = bundle.weight(k)
        F = F + w * CubicSpline(x, bundle.Fk[k], axis=0)(x3)
        F = F + w * _layer_interp(bundle.zeta, bundle.Fbk[k],
                                  x3 / np.sqrt(eps))
        F = F + w * _layer_interp(bundle.xi, bundle.Fbbk[k], x3 / eps)
    peak = float(np.max(F))
    low = float(np.min(F))
    if low < -pos_tol * peak:
        raise AssemblyError(
            "assembled field dips to %.3e (peak %.3e): truncation too "
            "aggressive for eps=%.3g" % (low, peak, eps))
    return F


def maxwell_bc_defect(F_wall, wall, grid):
    """Relative L2 defect of the reflection identity on incoming nodes.

    Measures how far the wall row of a field sits from the image of its
    own outgoing half under the Maxwell condition: zero means the field
    satisfies the boundary condition exactly.
    """
    from .direct import apply_maxwell_bc

    F_wall = np.asarray(F_wall, dtype=float)
    G = apply_maxwell_bc(F_wall, wall, grid)
    inc = grid.nodes[:, 2] > 0.0
    w = grid.weights
    num = np.sqrt(np.sum((w * (G - F_wall) ** 2)[inc]))
    den = np.sqrt(np.sum((w * F_wall ** 2)[inc]))
    return num / max(den, 1e-300)


def expansion_residual(hier, epsilon, t, x3_grid=None, K=None,
                       pos_tol=1e-4):
    """Kinetic-equation residual of the assembled expansion at time t.

    Evaluates d_t F + v3 d_x3 F - (1/eps) nu (M[F] - F) with the time
    derivative differenced across the hierarchy's stored times, the space
    derivative from five-point stencils on the (possibly nonuniform)
    assembly grid, and the relaxation target from the moment-matched
    discrete Maxwellian.  Returns (l2, info): the sqrt(M)-scaled L2 norm
    and pointwise diagnostics.  The assembly grid must resolve the layer
    scales for the norm to reflect the truncation order; the positivity
    gate is relaxed relative to assemble's because a measurement tolerates
    small tail dips that an initial datum must not have.
    """
    from .direct import cell_volumes, corrected_maxwellian_batch

    if hier.model.kind != "bgk":
        raise ConfigError("residual evaluation requires the bgk model")
    if len(hier.times) < 2:
        raise ConfigError("residual needs at least two stored times for "
                          "the time derivative")
    x3 = hier.euler.x if x3_grid is None else np.asarray(x3_grid,
                                                         dtype=float)
    ts = np.asarray(hier.times)
    order = np.argsort(np.abs(ts - t))[:min(3, len(ts))]
    window = np.sort(ts[order])
    fields = {tw: assemble(snapshot_bundle(hier, epsilon, tw, K), x3,
                           pos_tol=pos_tol)
              for tw in window}
    F = fields[ts[hier.index_of(t)]]
    wts = fornberg(t, window, 1)
    dFdt = sum(w * fields[tw] for w, tw in zip(wts, window))

    nx = len(x3)
    dFdx = np.empty_like(F)
    for i in range(nx):
        lo = min(max(i - 2, 0), nx - 5)
        sten = fornberg(x3[i], x3[lo:lo + 5], 1)
        dFdx[i] = sten @ F[lo:lo + 5]

    Mc, _, rho = corrected_maxwellian_batch(F, hier.grid)
    nu = hier.model.bgk_nu_scale * rho
    v3 = hier.grid.nodes[:, 2]
    R = dFdt + v3[None, :] * dFdx - nu[:, None] / epsilon * (Mc - F)
    ratio = R / np.sqrt(Mc)
    vols = cell_volumes(x3)
    l2 = float(np.sqrt(np.sum(vols[:, None] * hier.grid.weights
                              * ratio ** 2)))
    info = {"linf": float(np.max(np.abs(ratio))), "field": R,
            "dt_window": window}
    return l2, info


# checkpointing ------------------------------------------------------------

_SCHEMA = 1


def save_hierarchy(hier, path):
    """Write the hierarchy to a checkpoint directory.

    Layout: manifest.json (schema, config hash, built stages, times),
    config.cfg (canonical dump), euler.npz, and one npz per built order.
    """
    os.makedirs(path, exist_ok=True)
    eu = hier.euler
    np.savez(os.path.join(path, "euler.npz"), x=eu.x, times=eu.times,
             states=np.array(eu.states))
    built_orders = []
    for k in (1, 2):
        if ("prandtl", k) not in hier._built:
            continue
        built_orders.append(k)
        data = {}
        corr = hier.orders[k]["corr"]
        data["corr_times"] = corr.times
        data["corr_fields"] = np.array(corr.fields)
        sl = hier.orders[k]["knudsen"]
        data["kn_f"] = np.array([s["f"] for s in sl])
        data["kn_bc"] = np.array([s["bc"] for s in sl])
        data["kn_wall"] = np.array([s["wall_trace"] for s in sl])
        data["kn_repair"] = np.array([s["repair"] for s in sl])
        traj = hier.orders[k]["prandtl"]
        data["pr_times"] = traj.times
        data["pr_ub"] = traj.ub
        data["pr_theta"] = traj.theta
        data["pr_rho"] = traj.rho
        data["pr_u3"] = traj.u3
        data["pr_p"] = traj.p
        rb = hier.orders[k]["robin"]
        data["lam_u"] = rb["lam_u"]
        data["lam_th"] = rb["lam_th"]
        if k == 2:
            data["ub3"] = hier.orders[2]["ub3"]
            data["micro2"] = np.array([hier.micro2(t) for t in hier.times])
            data["microlayer2"] = np.array([hier.microlayer2(t)
                                            for t in hier.times])
        np.savez(os.path.join(path, "order%d.npz" % k), **data)
    with open(os.path.join(path, "config.cfg"), "w") as fh:
        fh.write(hier.cfg.dump())
    manifest = {"schema": _SCHEMA, "config_sha256": hier.cfg.hash(),
                "K": getattr(hier, "K", 0), "orders": built_orders,
                "times": list(hier.times)}
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return path


def load_hierarchy(path, cfg=None):
    """Rebuild a Hierarchy from a checkpoint directory.

    The stored config is reloaded (and must match cfg's hash when one is
    passed); solved arrays are restored verbatim so assembled fields are
    bit-identical to the original build's.
    """
    from .config import load_config

    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("schema") != _SCHEMA:
        raise ConfigError("checkpoint schema %r not supported"
                          % manifest.get("schema"))
    stored = load_config(os.path.join(path, "config.cfg"))
    if cfg is not None and cfg.hash() != stored.hash():
        raise ConfigError("checkpoint was built from a different "
                          "configuration (hash mismatch)")
    cfg = stored

    hier = Hierarchy.__new__(Hierarchy)
    from .config import collision_model, velocity_grid

    hier.cfg = cfg
    hier.grid = velocity_grid(cfg)
    hier.model = collision_model(cfg)
    eu = np.load(os.path.join(path, "euler.npz"))
    x = eu["x"]
    D = derivative_matrix(len(x), x[1] - x[0])
    hier.euler = EulerTrajectory(x, eu["times"], list(eu["states"]), D)
    hier.times = tuple(float(t) for t in manifest["times"])
    pr, kn = cfg["prandtl"], cfg["knudsen"]
    hier.zeta = np.linspace(0.0, pr["zmax"], pr["nz"])
    hier.xi = np.linspace(0.0, kn["ximax"], kn["nxi"])
    hier.slip_mode = pr["slip_mode"]
    hier.mu = pr["mu"]
    hier.kappa = pr["kappa"]
    hier.orders = {1: {}, 2: {}}
    hier.diagnostics = {}
    hier._built = set()
    hier._micro2_cache = {}
    hier._microlayer2_cache = {}
    hier.K = manifest["K"]

    coeffs = coeffs_from_trajectory(hier.euler, hier.mu, hier.kappa,
                                    slip_mode=hier.slip_mode, grid=hier.grid)
    for k in manifest["orders"]:
        data = np.load(os.path.join(path, "order%d.npz" % k))
        corr = CorrectorTrajectory(k, x, data["corr_times"],
                                   list(data["corr_fields"]), D)
        hier.orders[k]["corr"] = corr
        slices = []
        for j, t in enumerate(hier.times):
            slices.append({"f": data["kn_f"][j], "bc": data["kn_bc"][j],
                           "wall_trace": data["kn_wall"][j],
                           "repair": data["kn_repair"][j],
                           "info": {}, "p0": hier.wall_params(t)})
        hier.orders[k]["knudsen"] = slices
        traj = LayerTrajectory(k, hier.zeta, data["pr_times"],
                               data["pr_ub"], data["pr_theta"])
        traj.rho = data["pr_rho"]
        traj.u3 = data["pr_u3"]
        traj.p = data["pr_p"]
        hier.orders[k]["prandtl"] = traj
        hier.orders[k]["robin"] = {"lam_u": data["lam_u"],
                                   "lam_th": data["lam_th"]}
        if k == 2:
            hier.orders[2]["ub3"] = data["ub3"]
            for j, t in enumerate(hier.times):
                hier._micro2_cache[float(t)] = data["micro2"][j]
                hier._microlayer2_cache[float(t)] = data["microlayer2"][j]
        hier.orders[k]["coeffs"] = coeffs
        for name in ("corrector", "knudsen", "prandtl"):
            hier._built.add((name, k))
    return hier
