"""Independent verification by recursive optimal stopping on a grid.

The iteration alternates the intervention operator

    (M u)(x) = max over targets y < x of [ kbar(x, y) + u(y) ]

with the smallest nondecreasing concave majorant in the transformed
coordinate, pinned at the boundary point (F_lo, D).  Started from the
no-intervention value, the iterates increase monotonically to the impulse
control value, and the contact set of the final envelope brackets the
optimal triggers.  This never looks at the tangency solver, so agreement
between the two is a genuine cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import OracleError
from .transform import finiteness_check


def concave_envelope(ys, values):
    """Upper concave envelope of points with strictly increasing ys.

    Monotone-chain upper hull, O(N); returns the envelope evaluated at the
    same ys.
    """
    ys = np.asarray(ys, dtype=float)
    values = np.asarray(values, dtype=float)
    n = ys.size
    if n < 2:
        raise OracleError("concave envelope needs at least 2 points")
    if np.any(np.diff(ys) <= 0):
        raise OracleError("envelope abscissae must be strictly increasing")

    hull = [0]
    for i in range(1, n):
        while len(hull) >= 2:
            j, k = hull[-2], hull[-1]
            # slope(j,k) <= slope(j,i) means k lies on/below the chord j-i
            if (values[k] - values[j]) * (ys[i] - ys[j]) <= \
                    (values[i] - values[j]) * (ys[k] - ys[j]):
                hull.pop()
            else:
                break
        hull.append(i)
    hx = ys[hull]
    hv = values[hull]
    return np.interp(ys, hx, hv)


def pinned_envelope(ys, values, pin, nondecreasing=True):
    """Envelope of {pin} + points, forced nondecreasing past its peak.

    The pin (F_lo, D) is the transformed boundary payoff; nondecreasing-ness
    reflects that a concave majorant on an unbounded transformed domain
    cannot have a negative slope anywhere.
    """
    py, pv = pin
    ys = np.asarray(ys, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = ys > py + 0.0
    ys_aug = np.concatenate([[py], ys[keep]])
    vs_aug = np.concatenate([[pv], values[keep]])
    env = concave_envelope(ys_aug, vs_aug)
    if nondecreasing:
        env = np.maximum.accumulate(env)
    out = np.interp(ys, ys_aug, env)
    return out, float(env[0])


@dataclass
class OracleGrid:
    """State of the grid iteration in transformed coordinates."""

    ys: np.ndarray          # strictly increasing, y = F(x)
    xs: np.ndarray          # matching states
    values: np.ndarray      # Phi_n(y) = (w_n - g)/phi at the states
    pin: tuple              # (F_lo, D)
    n_iter: int = 0
    sup_change: float = math.inf
    converged: bool = False
    history: tuple = ()
    triggers: tuple = ()
    min_increments: tuple = ()
    iterates: tuple = ()


def make_grid(ctx, n_nodes=None, x_max=None):
    """Merged node set: half uniform in y = F(x), half uniform in x.

    The limit object is linear in y, which favors y-uniform nodes, but the
    maximization over jump targets needs resolution in x wherever F is
    convex; the merged set serves both.
    """
    opts = ctx.options
    n_nodes = n_nodes or opts.oracle_nodes
    x_lo, x_hi = ctx.window
    if x_max is not None:
        x_hi = min(x_hi, float(x_max))
    if ctx.absorbing:
        x_lo = ctx.problem.diffusion.lo

    half = max(8, n_nodes // 2)
    xs_u = np.linspace(x_lo, x_hi, half)
    y_lo = float(ctx.pair.F(x_lo))
    y_hi = float(ctx.pair.F(x_hi))
    ys_u = np.linspace(y_lo, y_hi, half)
    # place the y-uniform half through a tabulated inverse of F; the node
    # positions only need to be consistent (x, F(x)) pairs, so a monotone
    # interpolation of the table is enough
    x_tab = np.linspace(x_lo, x_hi, max(4096, 4 * half))
    y_tab = np.asarray(ctx.pair.F(x_tab), dtype=float)
    xs_from_y = np.interp(ys_u[1:-1], y_tab, x_tab)
    xs_all = np.concatenate([xs_u, xs_from_y])
    xs_all = np.unique(xs_all)
    ys_all = np.asarray(ctx.pair.F(xs_all), dtype=float)
    keep = np.concatenate([[True], np.diff(ys_all) > 1e-12 * np.abs(ys_all[1:])])
    xs_all = xs_all[keep]
    ys_all = ys_all[keep]
    if ctx.absorbing:
        # the boundary node is the pin itself; exclude it from the states
        inner = xs_all > x_lo
        xs_all, ys_all = xs_all[inner], ys_all[inner]
    return xs_all, ys_all


class _Workspace:
    def __init__(self, ctx, xs, ys):
        self.xs = xs
        self.ys = ys
        self.phi = np.asarray(ctx.pair.phi(xs), dtype=float)
        K = ctx.problem.intervention_reward
        gx = np.asarray(ctx.g(xs), dtype=float)
        gx = np.broadcast_to(gx, xs.shape)
        xi = xs[:, None]
        yj = xs[None, :]
        # clamp to the diagonal so the reward expression never sees an
        # upward jump; those cells are discarded below anyway
        kb = np.asarray(K(xi, np.minimum(xi, yj)), dtype=float)
        kb = np.broadcast_to(kb, (xs.size, xs.size)).copy()
        kb += gx[None, :] - gx[:, None]
        kb[np.triu_indices(xs.size, k=0)] = -np.inf  # targets strictly below
        self.kbar = kb
        if ctx.absorbing:
            # jumping onto the absorbing point collects the ruin payoff
            lo = ctx.problem.diffusion.lo
            k0 = np.asarray(K(xs, lo), dtype=float)
            k0 = np.broadcast_to(k0, xs.shape)
            self.to_ruin = k0 - gx + float(ctx.g(lo)) \
                + ctx.pair.phi(lo) * ctx.D
        else:
            self.to_ruin = None


def intervention_operator(ctx, grid, values=None, workspace=None):
    """(M u)/phi at every grid state, maximizing over grid targets.

    ``values`` are transformed (Phi); conversion to and from the actual
    excess u = phi * Phi happens here.  O(N^2) exact maximization.
    """
    values = grid.values if values is None else values
    ws = workspace or _Workspace(ctx, grid.xs, grid.ys)
    u = ws.phi * values
    cand = ws.kbar + u[None, :]
    best = np.max(cand, axis=1)
    if ws.to_ruin is not None:
        best = np.maximum(best, ws.to_ruin)
    return best / ws.phi


def value_iteration(ctx, n_nodes=None, n_max=None, tol=None, x_max=None,
                    keep_iterates=0):
    """Iterate envelope(M Phi) from the no-intervention start to a fixpoint.

    Returns a converged :class:`OracleGrid` carrying the trigger nodes where
    the envelope touches the intervention value.  Raises OracleError if the
    problem fails the finiteness screen.
    """
    opts = ctx.options
    n_max = n_max or opts.oracle_max_iter
    tol = tol or opts.oracle_tol
    xs, ys = make_grid(ctx, n_nodes=n_nodes, x_max=x_max)

    probe_a = xs[int(0.25 * xs.size)]
    fin = finiteness_check(ctx, float(probe_a))
    if not fin.finite:
        raise OracleError("finiteness screen failed: unbounded value")

    pin = (ctx.F_lo, ctx.D)
    phi0 = np.full(xs.shape, ctx.D if ctx.absorbing else 0.0)
    grid = OracleGrid(ys=ys, xs=xs, values=phi0, pin=pin)
    ws = _Workspace(ctx, xs, ys)

    history = []
    min_inc = []
    iterates = []
    values = phi0
    env_m = values
    for it in range(1, n_max + 1):
        m_phi = intervention_operator(ctx, grid, values, workspace=ws)
        env_m, _ = pinned_envelope(ys, m_phi, pin)
        new = np.maximum(env_m, ctx.D if ctx.absorbing else 0.0)
        change = float(np.max(np.abs(new - values)))
        min_inc.append(float(np.min(new - values)))
        history.append(change)
        values = new
        grid.values = values
        grid.n_iter = it
        grid.sup_change = change
        if keep_iterates and (it % keep_iterates == 0 or change <= tol):
            iterates.append((it, values.copy()))
        if change <= tol:
            grid.converged = True
            break

    # contact set of the final envelope against the intervention value:
    # a node is in contact when its gap is at convergence/rounding level,
    # or when it is a local minimum small next to the local curvature (a
    # tangency that landed between nodes); shallow interior holes at the
    # grid's own discretization-error level are then closed
    m_phi = intervention_operator(ctx, grid, values, workspace=ws)
    finite = np.isfinite(m_phi)
    gap = np.where(finite, values - m_phi, np.inf)
    local = np.where(finite, np.abs(values) + np.abs(m_phi), 0.0)
    base = 8.0 * max(tol, grid.sup_change) + 1e-9 * local
    contact = finite & (gap <= base)

    g_prev, g_next = np.roll(gap, 1), np.roll(gap, -1)
    interior = finite & np.roll(finite, 1) & np.roll(finite, -1)
    interior[0] = interior[-1] = False
    with np.errstate(invalid="ignore"):
        d2 = np.where(interior, np.abs(g_next - 2.0 * gap + g_prev), 0.0)
        is_min = interior & (gap <= g_prev) & (gap <= g_next)
    contact |= is_min & (gap <= 0.75 * d2 + base)

    holes = np.flatnonzero(np.diff(contact.astype(int)))
    if holes.size >= 2:
        for start, stop in zip(holes[:-1], holes[1:]):
            if contact[start] and not contact[start + 1]:
                run = slice(start + 1, stop + 1)
                depth = float(np.max(gap[run]))
                allow = max(50.0 * float(np.max(base[run])),
                            1e-4 * (1.0 + float(np.max(local[run]))))
                if depth <= allow:
                    contact[run] = True
    rising = np.flatnonzero(contact & ~np.roll(contact, 1))
    if contact.size and contact[0]:
        rising = np.concatenate([[0], rising[rising != 0]])
    grid.triggers = tuple(float(xs[i]) for i in rising)
    grid.history = tuple(history)
    grid.min_increments = tuple(min_inc)
    grid.iterates = tuple(iterates)
    return grid
