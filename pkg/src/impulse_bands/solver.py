"""Direct two-stage band solver in the transformed coordinate.

For a fixed jump target ``a`` the stage-one stopping value is a line
through the boundary pin (F_lo, D); touching the shifted reward curve
tangentially at the trigger ``b`` determines the slope

    beta_vm(b) = [kbar(b, a) - D (phi(b) - phi(a))] / [eta(b) - eta(a)],
    eta = psi - F_lo * phi,

whose interior maxima over b are exactly the tangency roots, so stage one
is solved by maximizing beta_vm.  Stage two maximizes beta(a) over
targets; near-ties produce multi-band policies.  A gamma-parameterized
stopping route (bisection against a concave-envelope stopping value)
reaches the same fixed point independently and carries the contraction and
uniqueness properties exercised by the test suite.

All heavy refinement runs in lockstep over candidate lanes so that pairs
whose evaluation is quadrature-priced (the mean-reverting catalog) are hit
with a handful of vectorized calls rather than thousands of scalar ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SolverError
from .model import BandPolicy
from .numerics import golden_max_lanes
from .oracle import make_grid, pinned_envelope
from .transform import concavity_profile, finiteness_check

_EXPECTED_PATTERNS = ("concave", "convex_concave", "concave_convex_concave")


class NoIntervention(Exception):
    """Signal: acting is never profitable for the queried target."""


@dataclass(frozen=True)
class StageResult:
    """Stage-one outcome for a fixed target a."""

    a: float
    b: float
    beta: float
    gamma: float
    tangency_residual: float
    n_tangency_roots: int
    multi_trigger: bool
    roots: tuple = ()


@dataclass
class SlopeScan:
    """Stage-two outcome: policy plus the beta(a) scan behind it."""

    policy: BandPolicy
    stages: tuple
    scan_a: np.ndarray
    scan_beta: np.ndarray
    no_intervention: bool
    warnings: tuple = ()


@dataclass(frozen=True)
class ValueFunctionRep:
    """Piecewise value function: transform-linear up to the last trigger,
    K-shifted beyond it."""

    policy: BandPolicy
    ctx: object = field(repr=False)

    def _v0(self, x):
        xs = np.asarray(x, dtype=float)
        c = self.ctx
        return c.pair.phi(xs) * c.line(c.pair.F(xs), self.policy.slope) \
            + c.g(xs)

    def _dv0(self, x):
        xs = np.asarray(x, dtype=float)
        c = self.ctx
        beta = self.policy.slope
        return beta * c.deta(xs) + c.D * c.pair.dphi(xs) + c.dg(xs)

    def value(self, x):
        xs = np.asarray(x, dtype=float)
        scalar = xs.ndim == 0
        xs = np.atleast_1d(xs).astype(float)
        out = self._v0(xs)
        if not self.policy.is_empty:
            a_top, b_top = self.policy.bands[-1]
            beyond = xs >= b_top
            if np.any(beyond):
                K = self.ctx.problem.intervention_reward
                v0a = float(self._v0(a_top))
                out = np.where(beyond, v0a + np.asarray(
                    K(np.maximum(xs, b_top), a_top), dtype=float), out)
        return float(out[0]) if scalar else out

    def derivative(self, x):
        xs = np.asarray(x, dtype=float)
        scalar = xs.ndim == 0
        xs = np.atleast_1d(xs).astype(float)
        out = self._dv0(xs)
        if not self.policy.is_empty:
            a_top, b_top = self.policy.bands[-1]
            beyond = xs >= b_top
            if np.any(beyond):
                K = self.ctx.problem.intervention_reward
                xq = np.maximum(xs, b_top)
                h = np.maximum(1e-6, 1e-6 * np.abs(xq))
                dK = (np.asarray(K(xq + h, a_top), dtype=float)
                      - np.asarray(K(xq - h, a_top), dtype=float)) / (2 * h)
                out = np.where(beyond, dK, out)
        return float(out[0]) if scalar else out

    def pieces(self):
        c = self.ctx
        desc = []
        hi = self.policy.bands[-1][1] if not self.policy.is_empty \
            else c.window[1]
        desc.append({
            "kind": "continuation",
            "x_range": (c.window[0], hi),
            "slope": self.policy.slope,
            "intercept": self.policy.intercept,
        })
        if not self.policy.is_empty:
            a_top, b_top = self.policy.bands[-1]
            desc.append({
                "kind": "intervention",
                "x_range": (b_top, math.inf),
                "target": a_top,
                "base_value": float(self._v0(a_top)),
            })
        return desc


# ---------------------------------------------------------------------------
# Stage one: tangency for fixed targets, vectorized over lanes
# ---------------------------------------------------------------------------

class _ScanWorkspace:
    """Cached pair/resolvent evaluations on a master trigger grid."""

    def __init__(self, ctx, n_b=800):
        x_lo, x_hi = ctx.window
        lo = ctx.problem.diffusion.lo if ctx.absorbing else x_lo
        self.b_grid = np.linspace(lo, x_hi, n_b + 1)[1:]
        self.phi_b = np.asarray(ctx.pair.phi(self.b_grid), dtype=float)
        self.eta_b = np.asarray(ctx.eta(self.b_grid), dtype=float)
        self.g_b = np.broadcast_to(np.asarray(
            ctx.g(self.b_grid), dtype=float), self.b_grid.shape)


def _beta_lane_fn(ctx, a_lane, phi_a, eta_a, g_a):
    """beta_vm(b) evaluator for per-lane targets; b and idx are arrays."""
    K = ctx.problem.intervention_reward

    def beta_of(b, idx):
        kab = np.asarray(K(b, a_lane[idx]), dtype=float) \
            - np.asarray(ctx.g(b), dtype=float) + g_a[idx]
        num = kab - ctx.D * (np.asarray(ctx.pair.phi(b), dtype=float)
                             - phi_a[idx])
        den = np.asarray(ctx.eta(b), dtype=float) - eta_a[idx]
        return num / den

    return beta_of


def _stage_roots(ctx, a_vec, workspace=None):
    """All refined tangency roots (b, beta) for each target in a_vec.

    Returns a list (one entry per target) of sorted (b, beta) tuples plus a
    per-target flag telling whether the chord slope was still rising at the
    truncation edge.
    """
    opts = ctx.options
    ws = workspace or _ScanWorkspace(ctx)
    a_vec = np.atleast_1d(np.asarray(a_vec, dtype=float))
    span = ctx.window[1] - ctx.window[0]
    gap = max(1e-3 * span / ws.b_grid.size, 10 * opts.x_tol)

    phi_a = np.asarray(ctx.pair.phi(a_vec), dtype=float)
    eta_a = np.asarray(ctx.eta(a_vec), dtype=float)
    g_a = np.broadcast_to(np.asarray(ctx.g(a_vec), dtype=float), a_vec.shape)

    K = ctx.problem.intervention_reward
    bs = ws.b_grid
    mask = bs[None, :] > a_vec[:, None] + gap
    safe_tgt = np.where(mask, a_vec[:, None], bs[None, :])  # stay in domain
    kb = np.asarray(K(bs[None, :], safe_tgt), dtype=float)
    kb = np.broadcast_to(kb, mask.shape) - ws.g_b[None, :] + g_a[:, None]
    num = kb - ctx.D * (ws.phi_b[None, :] - phi_a[:, None])
    den = ws.eta_b[None, :] - eta_a[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        betas = np.where(mask, num / den, -np.inf)

    inner = np.zeros_like(mask)
    inner[:, 1:-1] = (betas[:, 1:-1] >= betas[:, :-2]) \
        & (betas[:, 1:-1] >= betas[:, 2:]) & mask[:, 1:-1] \
        & mask[:, :-2]
    rows, cols = np.nonzero(inner)

    edge_flag = np.zeros(a_vec.size, dtype=bool)
    valid_any = np.zeros(a_vec.size, dtype=bool)
    row_best = np.full(a_vec.size, -np.inf)
    for i in range(a_vec.size):
        row_mask = mask[i]
        if np.count_nonzero(row_mask) >= 3:
            valid_any[i] = True
            j_last = np.flatnonzero(row_mask)[-1]
            j_best = int(np.argmax(betas[i]))
            row_best[i] = betas[i, j_best]
            if j_best >= j_last - 1:
                edge_flag[i] = True

    beta_fn = _beta_lane_fn(ctx, a_vec, phi_a, eta_a, g_a)
    roots = [[] for _ in range(a_vec.size)]
    if rows.size:
        lo_b = bs[np.maximum(cols - 1, 0)]
        hi_b = bs[np.minimum(cols + 1, bs.size - 1)]
        xtol = opts.x_tol * np.maximum(1.0, np.abs(bs[cols]))
        b_ref, beta_ref = golden_max_lanes(
            lambda x, idx: beta_fn(x, rows[idx]), lo_b, hi_b, xtol)
        for k in range(rows.size):
            roots[rows[k]].append((float(b_ref[k]), float(beta_ref[k])))

    merged = []
    for i in range(a_vec.size):
        rs = sorted(roots[i])
        out = []
        for b_star, beta_star in rs:
            if out and abs(b_star - out[-1][0]) \
                    <= 50 * opts.x_tol * max(1.0, abs(b_star)):
                if beta_star > out[-1][1]:
                    out[-1] = (b_star, beta_star)
            else:
                out.append((b_star, beta_star))
        merged.append(out)
    return merged, edge_flag, valid_any, row_best


def _stage_result(ctx, a, roots):
    roots = sorted(roots, key=lambda t: -t[1])
    b_best, beta_best = roots[0]
    gamma = float(ctx.pair.phi(a)) * float(ctx.line(ctx.pair.F(a), beta_best))
    h = max(1e-6, 1e-6 * abs(b_best))
    dkb = (float(ctx.kbar(b_best + h, a))
           - float(ctx.kbar(b_best - h, a))) / (2 * h)
    resid = beta_best * float(ctx.deta(b_best)) \
        + ctx.D * float(ctx.pair.dphi(b_best)) - dkb
    scale = abs(beta_best * float(ctx.deta(b_best))) + abs(dkb) + 1e-300
    multi = len(roots) > 1 and roots[1][1] >= beta_best * (1 - 1e-3)
    return StageResult(
        a=float(a), b=float(b_best), beta=float(beta_best),
        gamma=float(gamma), tangency_residual=float(resid / scale),
        n_tangency_roots=len(roots), multi_trigger=bool(multi),
        roots=tuple(roots))


def tangency_solve(ctx, a, workspace=None):
    """Trigger b(a), slope beta(a), and fixed point for one target.

    Scans the chord slope over trigger candidates, refines every interior
    local maximum by golden section to the x tolerance, and reports all
    tangency roots; the returned trigger is the global maximizer.  Raises
    :class:`NoIntervention` when no trigger improves on doing nothing and
    :class:`SolverError` when the maximum sits on the truncation edge.
    """
    a = float(a)
    roots, edge, valid, row_best = _stage_roots(ctx, [a], workspace=workspace)
    if not valid[0] or row_best[0] <= 0.0:
        raise NoIntervention
    if edge[0]:
        raise SolverError(
            f"no interior tangency for a={a}: slope still rising at the "
            "truncation edge (check finiteness / enlarge x_max)")
    rs = [r for r in roots[0] if math.isfinite(r[1])]
    if not rs or max(b for _, b in rs) <= 0.0:
        raise NoIntervention
    return _stage_result(ctx, a, rs)


# ---------------------------------------------------------------------------
# Gamma fixed point through the parameterized stopping problem
# ---------------------------------------------------------------------------

def stopping_value(ctx, a, gamma, grid=None):
    """V^gamma_a(a): parameterized stopping value at the target.

    Computed as the pinned concave envelope of the shifted transformed
    reward over stop states at or above the target (downward jumps only),
    evaluated at F(a) and scaled back by phi(a).
    """
    if grid is None:
        grid = make_grid(ctx, n_nodes=max(512, ctx.options.oracle_nodes // 2))
    xs, ys = grid
    mask = xs >= a
    if np.count_nonzero(mask) < 2:
        raise SolverError(f"target a={a} leaves no room for a trigger")
    xs_m, ys_m = xs[mask], ys[mask]
    H = (ctx.kbar(xs_m, float(a)) + gamma) / ctx.pair.phi(xs_m)
    env, _ = pinned_envelope(ys_m, H, (ctx.F_lo, ctx.D))
    fa = float(ctx.pair.F(a))
    hull_y = np.concatenate([[ctx.F_lo], ys_m])
    hull_v = np.concatenate([[ctx.D], env])
    w_at_a = float(np.interp(fa, hull_y, hull_v))
    return float(ctx.pair.phi(a)) * w_at_a


def solve_gamma(ctx, a, grid=None):
    """Unique fixed point gamma* = V^gamma*_a(a) by bracketed bisection.

    The map gamma -> V - gamma starts positive (when some stop beats the
    fixed cost), decreases 1-Lipschitz-ly, and eventually goes negative, so
    doubling the upper end always closes a bracket.
    """
    a = float(a)
    if grid is None:
        grid = make_grid(ctx, n_nodes=max(512, ctx.options.oracle_nodes // 2))
    xs, _ = grid
    above = xs[xs >= a]
    if above.size == 0 or float(np.max(ctx.kbar(above, a))) <= 0.0:
        raise NoIntervention

    rel = ctx.options.gamma_rel_tol

    def gap(gamma):
        return stopping_value(ctx, a, gamma, grid=grid) - gamma

    g0 = gap(0.0)
    if g0 <= 0.0:
        raise NoIntervention
    hi = max(1.0, 2.0 * g0)
    for _ in range(200):
        if gap(hi) < 0.0:
            break
        hi *= 2.0
    else:
        raise SolverError("gamma bracket did not close; value may be infinite")
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo <= rel * (1.0 + abs(mid)):
            break
        if gap(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    gamma = 0.5 * (lo + hi)
    if abs(gap(gamma)) > 100 * rel * (1.0 + abs(gamma)):
        raise SolverError(f"gamma fixed point did not settle at a={a}")
    return gamma


# ---------------------------------------------------------------------------
# Stage two: maximize the slope over targets
# ---------------------------------------------------------------------------

def _target_grid(ctx):
    opts = ctx.options
    x_lo, x_hi = ctx.window
    lo = ctx.problem.diffusion.lo if ctx.absorbing else x_lo
    span = x_hi - lo
    margin = 1e-4 * span
    uniform = np.linspace(lo + margin, x_hi - 0.05 * span, opts.scan_points)
    geometric = lo + span * 2.0 ** (-np.arange(2.0, 17.0))
    grid = np.unique(np.concatenate([uniform, geometric]))
    return grid[(grid > lo + margin) & (grid < x_hi)]


def scan_slopes(ctx, workspace=None):
    """beta(a) over the target grid plus the refined band policy."""
    opts = ctx.options
    ws = workspace or _ScanWorkspace(ctx)
    targets = _target_grid(ctx)

    warnings = []
    for a in targets[:: max(1, targets.size // 5)]:
        fin = finiteness_check(ctx, float(a))
        if not fin.finite:
            raise SolverError(
                f"finiteness check failed at a={a}: transformed reward has "
                "unbounded slope at the right boundary")

    roots, edge, valid, row_best = _stage_roots(ctx, targets, workspace=ws)
    betas = np.full(targets.shape, np.nan)
    edge_best = -math.inf
    for i in range(targets.size):
        if valid[i] and not edge[i] and roots[i]:
            best = max(b for _, b in roots[i])
            if best > 0.0 and math.isfinite(best):
                betas[i] = best
        elif valid[i] and edge[i] and row_best[i] > 0.0:
            edge_best = max(edge_best, row_best[i])

    finite = np.isfinite(betas)
    if not np.any(finite):
        policy = BandPolicy(
            bands=(), slope=0.0, intercept=ctx.D,
            fixed_point_A=(ctx.F_lo, ctx.D))
        return SlopeScan(
            policy=policy, stages=(), scan_a=targets, scan_beta=betas,
            no_intervention=True, warnings=tuple(warnings))

    # local maxima of beta(a), refined in lockstep
    vidx = np.flatnonzero(finite)
    bs = betas[vidx]
    lanes_lo, lanes_hi, seeds = [], [], []
    for pos, i in enumerate(vidx):
        left = bs[pos - 1] if pos > 0 else -math.inf
        right = bs[pos + 1] if pos + 1 < vidx.size else -math.inf
        if bs[pos] >= left and bs[pos] >= right:
            lanes_lo.append(targets[vidx[pos - 1]] if pos > 0 else targets[i])
            lanes_hi.append(targets[vidx[pos + 1]]
                            if pos + 1 < vidx.size else targets[i])
            seeds.append(targets[i])

    def beta_at(a_arr, _idx):
        rts, edg, val, _best = _stage_roots(ctx, a_arr, workspace=ws)
        out = np.full(a_arr.shape, -np.inf)
        for k in range(a_arr.size):
            if val[k] and not edg[k] and rts[k]:
                out[k] = max(b for _, b in rts[k])
        return out

    lanes_lo = np.asarray(lanes_lo)
    lanes_hi = np.asarray(lanes_hi)
    xtol = opts.a_refine_tol * np.maximum(1.0, np.abs(np.asarray(seeds)))
    a_ref, beta_ref = golden_max_lanes(beta_at, lanes_lo, lanes_hi, xtol)

    keep = np.isfinite(beta_ref) & (beta_ref > 0.0)
    if not np.any(keep):
        raise SolverError("all tangency refinements failed")
    a_ref, beta_ref = a_ref[keep], beta_ref[keep]
    beta_best = float(np.max(beta_ref))
    if edge_best > beta_best:
        warnings.append(
            "a target with its chord slope still rising at the truncation "
            "edge beats the interior optimum; enlarge x_max")
    order = np.argsort(a_ref)
    chosen = [(float(a_ref[i]), float(beta_ref[i])) for i in order
              if beta_ref[i] >= beta_best * (1.0 - opts.band_tie_rel)]

    span = ctx.window[1] - ctx.window[0]
    stages = []
    for a_star, _ in chosen:
        if stages and abs(a_star - stages[-1].a) <= 1e-5 * span:
            continue
        stages.append(tangency_solve(ctx, a_star, workspace=ws))

    ordered = []
    for st in stages:
        if ordered and st.a < ordered[-1].b:
            if st.beta > ordered[-1].beta:
                ordered[-1] = st
            else:
                warnings.append(
                    f"dropped overlapping band candidate at a={st.a:.6g}")
            continue
        ordered.append(st)
    stages = ordered

    if any(st.multi_trigger for st in stages):
        warnings.append(
            "multiple tangency triggers detected for a single target "
            "(multi_trigger); only the best trigger is used")

    a0 = float(stages[0].a)
    span_pad = 1e-3 * (ctx.window[1] - a0)
    profile = concavity_profile(
        ctx, lambda x: ctx.kbar(x, a0),
        x_range=(a0 + span_pad, ctx.window[1]))
    if profile.pattern not in _EXPECTED_PATTERNS:
        warnings.append(
            "transformed reward concavity pattern at the optimum is outside "
            "the catalogued cases; optimality is not certified")

    policy = BandPolicy(
        bands=tuple((st.a, st.b) for st in stages),
        slope=beta_best, intercept=ctx.D,
        fixed_point_A=(ctx.F_lo, ctx.D))
    return SlopeScan(
        policy=policy, stages=tuple(stages), scan_a=targets, scan_beta=betas,
        no_intervention=False, warnings=tuple(warnings))


def maximize_slope(ctx):
    """Best common-slope band policy (possibly empty: never intervene)."""
    return scan_slopes(ctx).policy


def assemble_value(ctx, policy):
    """Piecewise value function for a solved policy."""
    return ValueFunctionRep(policy=policy, ctx=ctx)


def smooth_fit_check(vrep, b, step=1e-5):
    """|v'(b-) - v'(b+)| by one-sided second-order differences."""
    v = vrep.value
    h = step * max(1.0, abs(b))
    left = (3 * v(b) - 4 * v(b - h) + v(b - 2 * h)) / (2 * h)
    right = (-3 * v(b) + 4 * v(b + h) - v(b + 2 * h)) / (2 * h)
    return abs(left - right)
