import time

import numpy as np

from slipflow.collision import CollisionModel, assemble_linearized
from slipflow.knudsen import (KnudsenProblem, boundary_data,
                              enforce_solvability, invariant_fluxes,
                              solve_halfspace)
from slipflow.velocity import (MaxwellianParams, build_grid, hydro_field,
                               maxwellian_pointwise)

for n, vmax in ((12, 6.0), (16, 6.0)):
    grid = build_grid(n, vmax)
    p0 = MaxwellianParams(2.0, np.zeros(3), 1.0)
    model = CollisionModel("bgk", bgk_nu_scale=2.0)
    L = assemble_linearized(p0, grid, model)
    sqM = np.sqrt(maxwellian_pointwise(p0, grid))
    cv = grid.nodes - p0.u
    trace = (hydro_field(p0, grid, 0.3, np.array([0.1, -0.05, 0.25]), 0.2)
             + 0.1 * cv[:, 0] * cv[:, 2] * sqM)
    raw = boundary_data(1, trace, sqM, p0, grid)
    bc, alpha = enforce_solvability(raw, p0, grid)
    xi = np.linspace(0.0, 30.0, 301)
    zeros = np.zeros((len(xi), grid.size))
    prob = KnudsenProblem(L, zeros, zeros, bc, xi, p0, grid, model)
    t0 = time.time()
    f, info = solve_halfspace(prob)
    dt = time.time() - t0
    wall = info["norms"][0]
    fl = invariant_fluxes(f, prob)
    print("n=%d  %.1fs  iters %d  resid %.2e" % (n, dt, info["iterations"],
                                                 info["residual"]))
    print("  wall %.4f  tail %.3e  ratio %.3e" % (wall, info["norms"][-1],
                                                  info["norms"][-1] / wall))
    print("  rate %.4f  scatter %.4f" % (info["decay_rate"],
                                         info["decay_scatter"]))
    print("  max interface flux %.3e  (rel %.3e)" % (np.max(np.abs(fl)),
                                                     np.max(np.abs(fl)) / wall))
    tailmono = np.all(np.diff(info["norms"][xi >= 5.0]) <= 1e-10 * wall)
    print("  monotone beyond 5:", tailmono)
