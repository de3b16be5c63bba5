"""Collision operators: BGK relaxation, hard-sphere bilinear form, and the
linearized operator around a Maxwellian.

The linearized hard-sphere operator is assembled from its Dirichlet form

    <L g, h> = 1/4 sum_{u,v,w} b(theta) |v-u|^g0 M(u) M(v) D[g/sqrt(M)] D[h/sqrt(M)]

with D[phi] = phi(u') + phi(v') - phi(u) - phi(v) and post-collision nodes
read off the lattice by trilinear interpolation.  Assembling the form (instead
of applying the gain term column by column) gives a symmetric positive
semidefinite matrix by construction; the five collision invariants are then
pinned exactly by conjugating with the discrete hydrodynamic projection.
"""

import numpy as np
import scipy.sparse as sp
from numpy.polynomial.legendre import leggauss
from scipy.linalg import lu_factor, lu_solve

from .errors import AssemblyError, SolvabilityError
from .velocity import (
    Projector, _params, maxwellian, maxwellian_pointwise, moments,
    raw_moments,
)


class CollisionModel:
    """Collision kernel selector.

    kind: "bgk" or "hardsphere".  gamma0 in [0, 1] is the velocity exponent
    of the kernel (1 for hard spheres).  b_const normalizes the angular part
    so that int_{S^2} b dω = 1.  bgk_nu_scale scales the BGK frequency
    nu = bgk_nu_scale * rho.
    """

    def __init__(self, kind="bgk", gamma0=1.0, bgk_nu_scale=1.0,
                 b_const=1.0 / (2.0 * np.pi), angular_n=6):
        if kind not in ("bgk", "hardsphere"):
            raise ValueError(f"unknown collision kind {kind!r}")
        if not 0.0 <= gamma0 <= 1.0:
            raise ValueError("gamma0 must lie in [0, 1]")
        self.kind = kind
        self.gamma0 = float(gamma0)
        self.bgk_nu_scale = float(bgk_nu_scale)
        self.b_const = float(b_const)
        self.angular_n = int(angular_n)

    def __repr__(self):
        return (f"CollisionModel({self.kind}, gamma0={self.gamma0}, "
                f"nu_scale={self.bgk_nu_scale}, angular_n={self.angular_n})")


def bgk_collision(F, grid, model):
    """BGK relaxation nu (M[F] - F) toward the moment-corrected Maxwellian.

    Conservation of the lattice moments holds to the Newton tolerance of
    the corrected Maxwellian, i.e. to ~1e-12 relative.
    """
    rho, u, T = moments(F, grid)
    Mc = maxwellian((rho, u, T), grid, corrected=True)
    nu = model.bgk_nu_scale * rho
    return nu * (Mc - F)


def collision_frequency(p, grid, model):
    """Collision frequency profile nu(v) of the model at state p."""
    p = _params(p)
    if model.kind == "bgk":
        return np.full(grid.size, model.bgk_nu_scale * p.rho)
    M = maxwellian_pointwise(p, grid)
    d = np.linalg.norm(grid.nodes[:, None, :] - grid.nodes[None, :, :], axis=2)
    # int b dω = 1 by normalization, so nu(v) = sum_u w_u |v-u|^g0 M(u)
    return (d**model.gamma0) @ (grid.weights * M)


def hemisphere_quadrature(angular_n):
    """Nodes/weights on the upper hemisphere, weights summing to 2 pi.

    Gauss-Legendre in the polar cosine, midpoint in azimuth.  The collision
    kernel is even under ω -> -ω, so the hemisphere carries the full sphere
    after doubling, which is baked into the assembly factors.
    """
    z, wz = leggauss(angular_n)
    z = 0.5 * (z + 1.0)          # cos(theta) in (0, 1)
    wz = 0.5 * wz
    phi = 2.0 * np.pi * (np.arange(angular_n) + 0.5) / angular_n
    wphi = 2.0 * np.pi / angular_n
    s = np.sqrt(1.0 - z**2)
    omega = np.concatenate([
        np.stack([np.outer(s, np.cos(phi)).ravel(),
                  np.outer(s, np.sin(phi)).ravel(),
                  np.repeat(z, angular_n)], axis=1)])
    w = np.repeat(wz * wphi, angular_n)
    return omega, w


def _trilinear_stencil(points, grid):
    """Trilinear interpolation stencil for arbitrary points.

    Returns (idx (m, 8), wts (m, 8), inside (m,)).  Points outside the hull
    of node centers are flagged; their weights are zeroed by the caller.
    """
    n, h = grid.n_per_axis, grid.h
    t = (points - grid.axis[0]) / h        # fractional index per axis
    i0 = np.floor(t).astype(np.int64)
    frac = t - i0
    inside = np.all((i0 >= 0) & (i0 <= n - 2), axis=1)
    i0c = np.clip(i0, 0, n - 2)
    idx = np.empty(points.shape[:-1] + (8,), dtype=np.int64)
    wts = np.empty(points.shape[:-1] + (8,))
    k = 0
    for d0 in (0, 1):
        w0 = frac[..., 0] if d0 else 1.0 - frac[..., 0]
        for d1 in (0, 1):
            w1 = frac[..., 1] if d1 else 1.0 - frac[..., 1]
            for d2 in (0, 1):
                w2 = frac[..., 2] if d2 else 1.0 - frac[..., 2]
                idx[..., k] = ((i0c[..., 0] + d0) * n + i0c[..., 1] + d1) * n \
                    + i0c[..., 2] + d2
                wts[..., k] = w0 * w1 * w2
                k += 1
    return idx, wts, inside


def _interp(F, idx, wts, inside):
    vals = (np.asarray(F)[idx] * wts).sum(axis=-1)
    return np.where(inside, vals, 0.0)


def hardsphere_bilinear(F, G, grid, model, conserve=True):
    """Boltzmann bilinear B(F, G)(v) for the hard-sphere type kernel.

    Sigma-representation of the collision sphere: u' = u + ((v-u).ω) ω,
    v' = v - ((v-u).ω) ω.  Gain terms are read off the lattice with
    trilinear interpolation, so discrete conservation only holds after the
    final five-moment projection (conserve=True).
    """
    if grid.n_per_axis > 16:
        raise ValueError("bilinear evaluation is quadratic in lattice size; "
                         "n_per_axis > 16 is not supported")
    F = np.asarray(F)
    G = np.asarray(G)
    omega, womega = hemisphere_quadrature(model.angular_n)
    v = grid.nodes
    N = grid.size
    out = np.zeros(N)
    rel = v[None, :, :] - v[:, None, :]          # (u_idx, v_idx, 3)
    dist = np.linalg.norm(rel, axis=2)
    np.fill_diagonal(dist, 1.0)                  # kernel vanishes there anyway
    for om, wq in zip(omega, womega):
        proj = rel @ om                          # (N, N)
        kern = model.b_const * np.abs(proj) * dist**(model.gamma0 - 1.0)
        np.fill_diagonal(kern, 0.0)
        shift = proj[:, :, None] * om
        up = v[:, None, :] + shift               # post-collision of u
        vp = v[None, :, :] - shift               # post-collision of v
        iu, wu, inu = _trilinear_stencil(up.reshape(-1, 3), grid)
        iv, wv, inv_ = _trilinear_stencil(vp.reshape(-1, 3), grid)
        gain = (_interp(F, iu, wu, inu) * _interp(G, iv, wv, inv_)).reshape(N, N)
        loss = F[:, None] * G[None, :]
        # doubled: hemisphere stands in for the full sphere
        out += 2.0 * wq * (grid.weights[:, None] * kern * (gain - loss)).sum(axis=0)
    if conserve:
        out = _project_out_moments(out, F, G, grid)
    return out


def _project_out_moments(Q, F, G, grid):
    """Remove the spurious (mass, momentum, energy) content of Q.

    The correction is spread with a Maxwellian weight at the joint state so
    it stays exponentially localized; the exact direction does not matter,
    only that the five lattice moments vanish afterwards.
    """
    v = grid.nodes
    v2 = (v**2).sum(axis=1)
    psi = np.column_stack([np.ones(grid.size), v, v2])
    try:
        rho, u, T = moments(np.abs(F) + np.abs(G), grid)
        Mw = maxwellian_pointwise((rho, u, T), grid)
    except Exception:
        Mw = maxwellian_pointwise((1.0, np.zeros(3), 1.0), grid)
    Gram = psi.T @ (grid.weights[:, None] * Mw[:, None] * psi)
    resid = psi.T @ (grid.weights * Q)
    lam = np.linalg.solve(Gram, resid)
    return Q - Mw * (psi @ lam)


def sym_bilinear(X, Y, p, grid, model, step=1e-4):
    """Symmetrized quadratic collision term (1/2) Q''(M)[X, Y].

    For a quadratic Q this equals (B(X,Y) + B(Y,X))/2.  The BGK branch
    differences the full nonlinear relaxation around the corrected
    Maxwellian at p; the cross second difference is exact for the quadratic
    part and leaves an O(step^2) remainder from higher derivatives.
    """
    if model.kind == "hardsphere":
        return 0.5 * (hardsphere_bilinear(X, Y, grid, model)
                      + hardsphere_bilinear(Y, X, grid, model))
    M = maxwellian(p, grid, corrected=True)
    X = np.asarray(X)
    Y = np.asarray(Y)
    scale = max(np.max(np.abs(X)), np.max(np.abs(Y)))
    if scale < 1e-14 * np.max(M):
        return np.zeros(grid.size)
    h = step * np.max(M) / scale
    Qpp = bgk_collision(M + h * X + h * Y, grid, model)
    Qpm = bgk_collision(M + h * X - h * Y, grid, model)
    Qmp = bgk_collision(M - h * X + h * Y, grid, model)
    Qmm = bgk_collision(M - h * X - h * Y, grid, model)
    return (Qpp - Qpm - Qmp + Qmm) / (8.0 * h * h)


class LinearizedOperator:
    """Linearized collision operator L around the Maxwellian at p.

    Acts on sqrt(M)-weighted perturbations: L f = -(1/sqrt M)[Q(M, sqrt M f)
    + Q(sqrt M f, M)], sign convention making L positive semidefinite with
    null space spanned by the discrete collision invariants.
    """

    def __init__(self, p, grid, model, matrix=None, nu=None, sym_defect=0.0):
        self.p = _params(p)
        self.grid = grid
        self.model = model
        self.matrix = matrix
        self.nu = nu
        self.sym_defect = sym_defect
        self.projector = Projector(p, grid)
        self._lu = None
        self._gap = None

    def apply(self, f):
        f = np.asarray(f)
        if self.model.kind == "bgk":
            return self.nu * self.projector.complement(f)
        return f @ self.matrix.T

    def spectral_gap(self):
        """Smallest eigenvalue on the complement of the null space."""
        if self._gap is not None:
            return self._gap
        if self.model.kind == "bgk":
            self._gap = float(self.nu[0]) if np.ndim(self.nu) else float(self.nu)
        else:
            ev = np.linalg.eigvalsh(self.matrix)
            if ev[0] < -1e-9:
                raise AssemblyError(f"operator not PSD: min eig {ev[0]:.3e}")
            self._gap = float(ev[5])   # five exact zero modes precede it
        return self._gap

    def solve(self, rhs, gate=1e-8, check=1e-9):
        """Solve L x = rhs on the orthogonal complement of the invariants.

        Raises SolvabilityError when rhs has hydrodynamic content above the
        gate (relative), since the equation is then inconsistent.
        """
        rhs = np.asarray(rhs)
        nrm = np.sqrt(np.max((rhs * rhs) @ self.grid.weights))
        if nrm == 0.0:
            return np.zeros_like(rhs)
        coeffs = self.projector.coeff(rhs)
        bad = np.max(np.abs(coeffs)) / nrm
        if bad > gate:
            raise SolvabilityError(
                f"rhs has invariant content {bad:.3e} > {gate:.1e}",
                residuals=coeffs)
        rperp = self.projector.complement(rhs)
        if self.model.kind == "bgk":
            x = rperp / self.nu
        else:
            if self._lu is None:
                E = self.projector.basis
                Pin = E.T @ (E * self.grid.weights)
                self._lu = lu_factor(self.matrix + Pin.T)
            x = lu_solve(self._lu, rperp.T).T
            x = self.projector.complement(x)
        res = self.apply(x) - rperp
        rel = np.sqrt(np.max((res * res) @ self.grid.weights)) / nrm
        if rel > check:
            raise AssemblyError(f"Fredholm solve residual {rel:.3e}")
        return x


def solve_L_inverse(L, rhs, gate=1e-8):
    return L.solve(rhs, gate=gate)


_HS_CACHE = {}


def assemble_linearized(p, grid, model):
    """Build the LinearizedOperator at state p.

    BGK: exactly nu (I - P) with the discrete projector, applied matrix
    free.  Hard sphere: Dirichlet-form assembly (see module docstring),
    then conjugation by (I - P) so the discrete invariants are exact null
    modes, then symmetrization; the symmetrization defect is recorded and
    must stay at rounding level.
    """
    p = _params(p)
    if model.kind == "bgk":
        nu = collision_frequency(p, grid, model)
        return LinearizedOperator(p, grid, model, nu=nu)

    if grid.n_per_axis > 10:
        raise ValueError("dense hard-sphere assembly beyond n_per_axis=10 "
                         "is not supported")
    key = (grid.n_per_axis, grid.v_max, model.gamma0, model.angular_n,
           model.b_const, round(p.rho, 12), tuple(np.round(p.u, 12)),
           round(p.T, 12))
    if key in _HS_CACHE:
        A, defect = _HS_CACHE[key]
    else:
        A, defect = _assemble_hs_form(p, grid, model)
        _HS_CACHE[key] = (A, defect)
    nu = collision_frequency(p, grid, model)
    op = LinearizedOperator(p, grid, model, matrix=A, nu=nu, sym_defect=defect)
    return op


def _assemble_hs_form(p, grid, model):
    M = maxwellian_pointwise(p, grid)
    sqM = np.sqrt(M)
    v = grid.nodes
    N = grid.size
    h3 = grid.weights[0]
    iu_, ju_ = np.triu_indices(N, k=1)
    vi = v[iu_]
    vj = v[ju_]
    rel = vj - vi
    dist = np.linalg.norm(rel, axis=1)
    base = grid.weights[iu_] * grid.weights[ju_] * M[iu_] * M[ju_] \
        * model.b_const * dist**(model.gamma0 - 1.0)
    omega, womega = hemisphere_quadrature(model.angular_n)

    A = np.zeros((N, N))
    cols_id = np.stack([iu_, ju_], axis=1)
    vals_id = np.full((iu_.size, 2), -1.0) / np.stack([sqM[iu_], sqM[ju_]], axis=1)
    for om, wq in zip(omega, womega):
        proj = rel @ om
        up = vi + proj[:, None] * om
        vp = vj - proj[:, None] * om
        iuP, wuP, inu = _trilinear_stencil(up, grid)
        ivP, wvP, inv_ = _trilinear_stencil(vp, grid)
        keep = inu & inv_
        # 4x: hemisphere doubling and the i<j pair restriction
        coef = 4.0 * wq * base * np.abs(proj) * keep
        cols = np.concatenate([iuP, ivP, cols_id], axis=1)
        vals = np.concatenate([wuP / sqM[iuP], wvP / sqM[ivP], vals_id], axis=1)
        rows = np.repeat(np.arange(iu_.size), cols.shape[1])
        D = sp.csr_matrix((vals.ravel(), (rows, cols.ravel())),
                          shape=(iu_.size, N))
        A += 0.25 * (D.T @ sp.diags(coef) @ D).toarray()

    L = A / h3
    defect = float(np.max(np.abs(L - L.T)))
    if defect > 1e-6 * max(np.max(np.abs(L)), 1e-300):
        raise AssemblyError(f"symmetrization defect {defect:.3e}")
    L = 0.5 * (L + L.T)
    # pin the invariants exactly
    P = Projector(p, grid)
    E = P.basis
    Pin = E.T @ (E * grid.weights)
    Q = np.eye(N) - Pin.T
    L = Q.T @ L @ Q
    L = 0.5 * (L + L.T)
    return L, defect


def transport_coefficients(L):
    """Viscosity and heat conductivity from the Fredholm solves.

    mu = T <A_31, L^-1 A_31>, kappa = T <B_3, L^-1 B_3>.  For BGK with
    nu = nu_scale rho these reduce to rho T / nu and (5/2) rho T / nu.
    """
    from .velocity import burnett
    p = L.p
    A, B = burnett(p, L.grid, clean=True)
    a31 = A[2, 0]
    b3 = B[2]
    mu = p.T * L.grid.inner(a31, L.solve(a31))
    kappa = p.T * L.grid.inner(b3, L.solve(b3))
    return float(mu), float(kappa)
