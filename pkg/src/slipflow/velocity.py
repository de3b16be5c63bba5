"""Velocity-space discretization.

Uniform Cartesian lattice offset by half a cell so no node sits on a
coordinate plane, discrete Maxwellians (pointwise and moment-corrected),
moment extraction, projection onto the five collision invariants, Burnett
functions, and the weighted norms used by the remainder estimates.

Wall convention used throughout the package: the gas fills x3 > 0 and the
wall normal points into the wall, n = (0, 0, -1).  Nodes with v3 < 0 move
toward the wall (outgoing at the boundary), nodes with v3 > 0 move away
from it (incoming).
"""

import numpy as np

from .errors import DegenerateStateError, NewtonError

SQRT_2PI = np.sqrt(2.0 * np.pi)


class VelocityGrid:
    """Offset velocity lattice with midpoint weights.

    Nodes along each axis sit at -v_max + (i + 1/2) h, h = 2 v_max / n,
    so the lattice is symmetric under v -> -v and under v3 -> -v3 while
    containing no node with v3 = 0.
    """

    def __init__(self, n_per_axis, v_max):
        if n_per_axis % 2 != 0:
            raise ValueError("n_per_axis must be even to keep v3 = 0 off the lattice")
        if v_max <= 0:
            raise ValueError("v_max must be positive")
        n = int(n_per_axis)
        h = 2.0 * v_max / n
        axis = -v_max + h * (np.arange(n) + 0.5)

        V1, V2, V3 = np.meshgrid(axis, axis, axis, indexing="ij")
        nodes = np.column_stack([V1.ravel(), V2.ravel(), V3.ravel()])

        self.n_per_axis = n
        self.v_max = float(v_max)
        self.h = h
        self.axis = axis
        self.nodes = nodes
        self.weights = np.full(nodes.shape[0], h**3)
        self.size = nodes.shape[0]

        # flip of the last axis: index (i,j,k) -> (i,j,n-1-k)
        idx = np.arange(self.size).reshape(n, n, n)
        self._reflect_idx = idx[:, :, ::-1].ravel()

        self.out_mask = nodes[:, 2] < 0.0
        self.in_mask = nodes[:, 2] > 0.0

    def reflect(self, F):
        """Profile at (v1, v2, -v3), the specular image about the wall."""
        return np.asarray(F)[..., self._reflect_idx]

    def integrate(self, F):
        """Quadrature of a velocity profile (sum over the last axis)."""
        return np.asarray(F) @ self.weights

    def inner(self, F, G):
        return ((np.asarray(F) * np.asarray(G)) @ self.weights)

    def norm(self, F):
        return np.sqrt(np.maximum(self.inner(F, F), 0.0))


def build_grid(n_per_axis, v_max):
    return VelocityGrid(n_per_axis, v_max)


class MaxwellianParams:
    """Macroscopic triple (rho, u, T) defining a local Maxwellian."""

    def __init__(self, rho, u, T):
        u = np.asarray(u, dtype=float)
        if u.shape != (3,):
            raise ValueError("u must be a 3-vector")
        if rho <= 0 or T <= 0:
            raise DegenerateStateError(f"need rho, T > 0, got rho={rho}, T={T}")
        self.rho = float(rho)
        self.u = u
        self.T = float(T)

    def as_tuple(self):
        return self.rho, self.u, self.T

    def __repr__(self):
        return f"MaxwellianParams(rho={self.rho}, u={list(self.u)}, T={self.T})"


def _params(p):
    if isinstance(p, MaxwellianParams):
        return p
    rho, u, T = p
    return MaxwellianParams(rho, u, T)


def maxwellian_pointwise(p, grid):
    """Continuum Maxwellian formula evaluated at the lattice nodes."""
    rho, u, T = _params(p).as_tuple()
    c2 = ((grid.nodes - u) ** 2).sum(axis=1)
    return rho * (2.0 * np.pi * T) ** -1.5 * np.exp(-c2 / (2.0 * T))


def raw_moments(F, grid):
    """(mass, momentum, energy) of a profile; energy = int |v|^2/2 F."""
    F = np.asarray(F)
    w = grid.weights
    rho = F @ w
    mom = (F[..., None, :] * grid.nodes.T) @ w if F.ndim > 1 else grid.nodes.T @ (w * F)
    v2 = (grid.nodes**2).sum(axis=1)
    en = 0.5 * (F * v2) @ w
    return rho, mom, en


def moments(F, grid):
    """Recover (rho, u, T) from a distribution profile.

    Raises DegenerateStateError when the profile has nonpositive mass or
    temperature, e.g. for the zero field.
    """
    rho, mom, en = raw_moments(F, grid)
    if not np.all(np.isfinite([rho, en])) or rho <= 0.0:
        raise DegenerateStateError(f"nonpositive or non-finite density: {rho}")
    u = mom / rho
    T = (2.0 * en - rho * (u @ u)) / (3.0 * rho)
    if T <= 0.0:
        raise DegenerateStateError(f"nonpositive temperature: {T}")
    return rho, u, T


def maxwellian(p, grid, corrected=False, tol=1e-12, max_iter=80):
    """Discrete Maxwellian for macroscopic state p.

    corrected=False evaluates the continuum formula at the nodes.
    corrected=True solves a 5-parameter exponential-family Newton problem
    so the lattice moments match (rho, rho u, E) to relative tolerance
    tol; this is the equilibrium the BGK relaxation targets, and it makes
    discrete conservation exact up to the Newton tolerance.
    """
    p = _params(p)
    M0 = maxwellian_pointwise(p, grid)
    if not corrected:
        return M0

    rho, u, T = p.as_tuple()
    target = np.concatenate([[rho], rho * u, [0.5 * rho * (3.0 * T + u @ u)]])
    scale = np.maximum(np.abs(target), rho)

    # multipliers of exp(a0 + a.v + a4 |v|^2), seeded from the continuum values
    alpha = np.concatenate([
        [np.log(rho * (2.0 * np.pi * T) ** -1.5) - (u @ u) / (2.0 * T)],
        u / T, [-1.0 / (2.0 * T)],
    ])

    v = grid.nodes
    v2 = (v**2).sum(axis=1)
    psi = np.column_stack([np.ones(grid.size), v, 0.5 * v2])   # tested moments
    phi = np.column_stack([np.ones(grid.size), v, v2])         # multiplier basis
    w = grid.weights

    for _ in range(max_iter):
        F = np.exp(phi @ alpha)
        r = psi.T @ (w * F) - target
        if np.max(np.abs(r) / scale) < tol:
            return F
        J = psi.T @ (w[:, None] * F[:, None] * phi)
        step = np.linalg.solve(J, r)
        big = np.max(np.abs(step))
        if big > 2.0:
            step *= 2.0 / big
        alpha -= step
    raise NewtonError("corrected Maxwellian did not converge",
                      defect=float(np.max(np.abs(r) / scale)))


def null_basis(p, grid):
    """Discretely orthonormal basis of the collision invariant space.

    Starts from {1, v - u, |v - u|^2} sqrt(M) and Gram-Schmidts against
    the lattice inner product, so P below is an exact projector on the
    grid no matter how coarse the quadrature is.
    """
    p = _params(p)
    rho, u, T = p.as_tuple()
    sqM = np.sqrt(maxwellian_pointwise(p, grid))
    c = grid.nodes - u
    c2 = (c**2).sum(axis=1)
    raw = np.stack([
        sqM / np.sqrt(rho),
        c[:, 0] * sqM / np.sqrt(rho * T),
        c[:, 1] * sqM / np.sqrt(rho * T),
        c[:, 2] * sqM / np.sqrt(rho * T),
        (c2 / T - 3.0) * sqM / np.sqrt(6.0 * rho),
    ])
    basis = []
    for b in raw:
        for e in basis:
            b = b - grid.inner(e, b) * e
        nb = grid.norm(b)
        if nb < 1e-14:
            raise DegenerateStateError("null basis degenerate on this grid")
        basis.append(b / nb)
    return np.stack(basis)


class Projector:
    """Orthogonal projection onto the discrete collision invariants."""

    def __init__(self, p, grid):
        self.p = _params(p)
        self.grid = grid
        self.basis = null_basis(p, grid)
        self._wb = self.basis * grid.weights

    def coeff(self, f):
        return self._wb @ np.asarray(f).T

    def apply(self, f):
        f = np.asarray(f)
        return (self.coeff(f).T @ self.basis).reshape(f.shape)

    def complement(self, f):
        return np.asarray(f) - self.apply(f)


def project_P(f, p, grid):
    """One-shot hydrodynamic projection P f; build a Projector for loops."""
    return Projector(p, grid).apply(f)


def hydro_field(p, grid, rho_k, u_k, theta_k):
    """Macroscopic (fluid) part {rho_k/rho + u_k.c/T + theta_k (|c|^2/T - 3)/(6T) ... } sqrt(M).

    This is the P-image parameterized by the moment triple of a corrector,
    in the sqrt(M)-weighted representation.
    """
    p = _params(p)
    rho, u, T = p.as_tuple()
    sqM = np.sqrt(maxwellian_pointwise(p, grid))
    c = grid.nodes - u
    c2 = (c**2).sum(axis=1)
    u_k = np.asarray(u_k, dtype=float)
    return (rho_k / rho + (c @ u_k) / T + theta_k / (6.0 * T) * (c2 / T - 3.0)) * sqM


def hydro_moments(f, p, grid):
    """Invert hydro_field: (rho_k, u_k, theta_k) of the P-part of f.

    Solves the 5x5 Gram system of the monomial basis so the extraction is
    exact on the lattice (consistent with Projector, not just with the
    continuum normalization).
    """
    p = _params(p)
    rho, u, T = p.as_tuple()
    sqM = np.sqrt(maxwellian_pointwise(p, grid))
    c = grid.nodes - u
    c2 = (c**2).sum(axis=1)
    raw = np.stack([sqM, c[:, 0] * sqM, c[:, 1] * sqM, c[:, 2] * sqM,
                    (c2 / T - 3.0) * sqM])
    G = (raw * grid.weights) @ raw.T
    rhs = (raw * grid.weights) @ np.asarray(f).T
    gamma = np.linalg.solve(G, rhs)
    rho_k = rho * gamma[0]
    u_k = T * np.moveaxis(gamma[1:4], 0, -1)
    theta_k = 6.0 * T * gamma[4]
    return rho_k, u_k, theta_k


def burnett(p, grid, clean=True):
    """Burnett functions A (3,3,N) and B (3,N) in the sqrt(M) representation.

    A_ij = (c_i c_j / T - delta_ij |c|^2 / (3T)) sqrt(M)
    B_i  = c_i (|c|^2 / T - 5) sqrt(M) / (2 sqrt(T))

    Orthogonal to the collision invariants in the continuum; on the lattice
    the overlap is only quadrature small (it would trip the solvability
    gate of the Fredholm solves), so clean=True subtracts the discrete
    hydrodynamic part.  A is trace free and symmetric either way.
    """
    p = _params(p)
    rho, u, T = p.as_tuple()
    sqM = np.sqrt(maxwellian_pointwise(p, grid))
    c = grid.nodes - u
    c2 = (c**2).sum(axis=1)
    A = np.empty((3, 3, grid.size))
    for i in range(3):
        for j in range(3):
            A[i, j] = (c[:, i] * c[:, j] / T - (i == j) * c2 / (3.0 * T)) * sqM
    B = np.empty((3, grid.size))
    for i in range(3):
        B[i] = c[:, i] * (c2 / T - 5.0) * sqM / (2.0 * np.sqrt(T))
    if clean:
        P = Projector(p, grid)
        for i in range(3):
            for j in range(3):
                A[i, j] = P.complement(A[i, j])
            B[i] = P.complement(B[i])
        # keep the exact algebraic structure after cleaning
        tr = (A[0, 0] + A[1, 1] + A[2, 2]) / 3.0
        for i in range(3):
            A[i, i] -= tr
    return A, B


class WeightedNormSpec:
    """Norm selector: kind in {L2, L2_nu, L2_poly_weight, Linf_velocity_weight}."""

    KINDS = ("L2", "L2_nu", "L2_poly_weight", "Linf_velocity_weight")

    def __init__(self, kind, l=0, ell=0):
        if kind not in self.KINDS:
            raise ValueError(f"unknown norm kind {kind!r}")
        self.kind = kind
        self.l = int(l)
        self.ell = int(ell)


def weighted_norm(values, spec, grid, cell_measure=None, coords=None, nu=None):
    """Weighted norm of a field over (space x velocity) or velocity alone.

    values: (..., nx, N) or (N,) array in the sqrt(M)-weighted representation.
    cell_measure: spatial quadrature weights (nx,), omitted for pure
    velocity profiles.  coords: spatial coordinate used by the (1+z)^l
    weight.  nu: collision frequency profile for the L2_nu norm.
    """
    F = np.asarray(values)
    if spec.kind == "Linf_velocity_weight":
        bracket = (1.0 + (grid.nodes**2).sum(axis=1)) ** (0.5 * spec.ell)
        return float(np.max(np.abs(F) * bracket))

    if spec.kind == "L2_nu":
        if nu is None:
            raise ValueError("L2_nu norm needs the collision frequency nu")
        vw = grid.weights * nu
    else:
        vw = grid.weights

    sq = (F * F) @ vw
    if F.ndim == 1:
        return float(np.sqrt(sq))
    if cell_measure is None:
        raise ValueError("space-velocity field needs cell_measure")
    cw = np.asarray(cell_measure, dtype=float).copy()
    if spec.kind == "L2_poly_weight":
        if coords is None:
            raise ValueError("L2_poly_weight needs coords")
        cw = cw * (1.0 + np.asarray(coords)) ** spec.l
    return float(np.sqrt(sq @ cw))
