"""Fundamental solution pairs (psi, phi) of (A - alpha)u = 0.

psi is the increasing and phi the decreasing positive solution of

    (sigma^2/2) u'' + mu u' - alpha u = 0

on the state interval.  The ratio F = psi/phi is the strictly increasing
coordinate change in which stopping values become concave majorants.  A
closed-form catalog covers standard Brownian motion (including the
zero-discount case with an absorbing left endpoint) and the
Ornstein-Uhlenbeck process, whose pair is built from parabolic cylinder
functions evaluated through the Hermite-function integral

    Hermite(nu, z) = (1/Gamma(-nu)) * int_0^inf exp(-t^2 - 2 t z) t^(-nu-1) dt

for nu < 0.  Everything else goes through a shooting construction on the
initial slope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import CatalogMissError, ImpulseError, ValidationError
from .numerics import bisect_root

__all__ = [
    "FundamentalPair",
    "analytic_fundamentals",
    "numeric_fundamentals",
    "hermite_fn",
    "parabolic_cylinder",
]

RESCALE_CAP = 1e100

# Gauss 7 / Kronrod 15 nodes and weights on [-1, 1]
_XK = np.array([
    -0.991455371120813, -0.949107912342759, -0.864864423359769,
    -0.741531185599394, -0.586087235467691, -0.405845151377397,
    -0.207784955007898, 0.0,
    0.207784955007898, 0.405845151377397, 0.586087235467691,
    0.741531185599394, 0.864864423359769, 0.949107912342759,
    0.991455371120813,
])
_WK = np.array([
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728,
    0.204432940075298, 0.190350578064785, 0.169004726639267,
    0.140653259715525, 0.104790010322250, 0.063092092629979,
    0.022935322010529,
])
_WG = np.array([
    0.129484966168870, 0.279705391489277, 0.381830050505119,
    0.417959183673469, 0.381830050505119, 0.279705391489277,
    0.129484966168870,
])
_GAUSS_IDX = np.arange(1, 15, 2)


def _hermite_integral(p, zs, abs_tol, rel_tol, max_panels=512):
    """int_0^inf exp(-t^2 - 2 t z) t^(p-1) dt for each z, p > 0.

    The substitution t = u^(1/p) absorbs the endpoint singularity exactly;
    the transformed integrand is then handled by adaptive Gauss-Kronrod
    panels, initially split at the integrand mode.
    """
    zs = np.atleast_1d(np.asarray(zs, dtype=float))
    t_peak = np.maximum(0.0, -zs)
    if zs.size > 1 and float(np.ptp(t_peak)) > 2.0:
        # heterogeneous peak locations need their own panel sets: bucket
        # by peak position and integrate each bucket separately
        order = np.argsort(t_peak)
        out = np.empty_like(zs)
        start = 0
        while start < zs.size:
            stop = start + 1
            base = t_peak[order[start]]
            while stop < zs.size and t_peak[order[stop]] - base <= 2.0:
                stop += 1
            sel = order[start:stop]
            out[sel] = _hermite_integral(p, zs[sel], abs_tol, rel_tol,
                                         max_panels)
            start = stop
        return out
    t_max = float(np.max(t_peak)) + 9.5
    u_max = t_max ** p
    inv_p = 1.0 / p

    def panel(a, b):
        # returns (kronrod per z, error per z)
        half = 0.5 * (b - a)
        u = a + half * (_XK + 1.0)
        t = u ** inv_p
        g = np.exp(-(t * t)[:, None] - 2.0 * t[:, None] * zs[None, :])
        k15 = half * (_WK[:, None] * g).sum(axis=0)
        g7 = half * (_WG[:, None] * g[_GAUSS_IDX]).sum(axis=0)
        return k15, np.abs(k15 - g7)

    # initial breakpoints: geometric cluster at 0 plus the global mode
    brk = {0.0, u_max}
    for frac in (1e-6, 1e-4, 1e-2, 0.1, 0.3):
        brk.add(u_max * frac)
    mode = float(np.median(t_peak)) ** p
    if 0.0 < mode < u_max:
        brk.add(mode)
        brk.add(min(u_max, 2.0 * mode))
    edges = sorted(brk)

    panels = []
    for a, b in zip(edges[:-1], edges[1:]):
        val, err = panel(a, b)
        panels.append([a, b, val, err])

    while True:
        total = sum(pl[2] for pl in panels)
        toterr = sum(pl[3] for pl in panels)
        tol = abs_tol + rel_tol * np.abs(total)
        if np.all(toterr <= tol):
            break
        if len(panels) >= max_panels:
            raise ImpulseError(
                "Hermite quadrature did not converge "
                f"(residual {float(np.max(toterr - tol)):.3e})")
        worst = max(range(len(panels)), key=lambda i: float(np.max(panels[i][3])))
        a, b, _, _ = panels.pop(worst)
        mid = 0.5 * (a + b)
        for aa, bb in ((a, mid), (mid, b)):
            val, err = panel(aa, bb)
            panels.append([aa, bb, val, err])

    return sum(pl[2] for pl in panels)


def hermite_fn(nu, z, abs_tol=1e-12, rel_tol=1e-10):
    """Hermite function of negative degree nu, by adaptive quadrature."""
    if nu >= 0:
        raise ValidationError("hermite_fn requires nu < 0")
    p = -float(nu)
    zs = np.asarray(z, dtype=float)
    out = _hermite_integral(p, zs, abs_tol, rel_tol) / (p * math.gamma(p))
    if zs.ndim == 0:
        return float(out[0])
    return out.reshape(zs.shape)


def parabolic_cylinder(nu, z):
    """D_nu(z) for nu < 0 via the Hermite-function identity."""
    if nu >= 0:
        raise ValidationError("parabolic_cylinder requires nu < 0")
    zs = np.asarray(z, dtype=float)
    out = 2.0 ** (-nu / 2.0) * np.exp(-zs * zs / 4.0) * hermite_fn(nu, zs / math.sqrt(2.0))
    if zs.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# Fundamental pair container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FundamentalPair:
    """Evaluators for psi, phi, their derivatives, and F = psi/phi.

    Immutable and pure; safe to share between workers.  ``F_limit_lo`` is
    the limit of F at the left state boundary when known in closed form
    (0 at a natural boundary reached by decaying psi).  ``window`` brackets
    numeric inversion of F.
    """

    psi: object
    phi: object
    dpsi: object
    dphi: object
    anchor: float
    provenance: str
    window: tuple
    F_limit_lo: float | None = None
    _F_inv_analytic: object = field(default=None, repr=False)

    def F(self, x):
        return self.psi(x) / self.phi(x)

    def dF(self, x):
        p, q = self.psi(x), self.phi(x)
        return (self.dpsi(x) * q - p * self.dphi(x)) / (q * q)

    def F_inv(self, y, xtol=1e-10):
        if self._F_inv_analytic is not None:
            return self._F_inv_analytic(y)
        ys = np.asarray(y, dtype=float)
        scalar = ys.ndim == 0
        ys = np.atleast_1d(ys)
        lo, hi = self.window
        out = np.empty_like(ys)
        for i, yi in enumerate(ys):
            if not self.F(lo) <= yi <= self.F(hi):
                raise ImpulseError(
                    f"F_inv target {yi} outside F range on window {self.window}")
            out[i] = bisect_root(
                lambda x: self.F(x) - yi, lo, hi,
                xtol=xtol * max(1.0, abs(hi), abs(lo)))
        return float(out[0]) if scalar else out

    def wronskian(self, x):
        """psi' phi - psi phi', positive iff F is increasing."""
        return self.dpsi(x) * self.phi(x) - self.psi(x) * self.dphi(x)


# ---------------------------------------------------------------------------
# Closed-form catalog
# ---------------------------------------------------------------------------

def _structure_grid(spec):
    lo = spec.lo if math.isfinite(spec.lo) else -10.0
    hi = spec.hi if math.isfinite(spec.hi) else 10.0
    if not lo < hi:
        lo, hi = -10.0, 10.0
    pad = (hi - lo) / 66
    return np.linspace(lo + pad, hi - pad, 64)


def _match_catalog(spec):
    xs = _structure_grid(spec)
    mu = np.broadcast_to(np.asarray(spec.drift(xs), dtype=float), xs.shape)
    sg = np.broadcast_to(np.asarray(spec.vol(xs), dtype=float), xs.shape)

    if np.max(np.abs(mu)) <= 1e-12 and np.max(np.abs(sg - 1.0)) <= 1e-12:
        return ("bm",)

    sigma0 = float(np.mean(sg))
    if np.max(np.abs(sg - sigma0)) <= 1e-10 * (1.0 + sigma0):
        coef = np.polynomial.polynomial.polyfit(xs, mu, 1)
        fit = coef[0] + coef[1] * xs
        if np.max(np.abs(mu - fit)) <= 1e-10 * (1.0 + np.max(np.abs(mu))):
            q = float(coef[1])
            if q < 0:
                delta = -q
                m = float(coef[0]) / delta
                return ("ou", delta, m, sigma0)
    return None


def _bm_pair(spec):
    s = math.sqrt(2.0 * spec.alpha)

    def psi(x):
        return np.exp(s * np.asarray(x, dtype=float))

    def phi(x):
        return np.exp(-s * np.asarray(x, dtype=float))

    F_lo = 0.0 if not math.isfinite(spec.lo) else math.exp(2 * s * spec.lo)
    lo = spec.lo if math.isfinite(spec.lo) else -math.inf
    hi = spec.hi if math.isfinite(spec.hi) else math.inf
    return FundamentalPair(
        psi=psi, phi=phi,
        dpsi=lambda x: s * psi(x), dphi=lambda x: -s * phi(x),
        anchor=0.0, provenance="analytic_bm",
        window=(lo, hi), F_limit_lo=F_lo,
        _F_inv_analytic=lambda y: np.log(y) / (2.0 * s),
    )


def _bm_zero_rate_pair(spec):
    lo = spec.lo

    def one_like(x):
        return np.ones_like(np.asarray(x, dtype=float))

    return FundamentalPair(
        psi=lambda x: np.asarray(x, dtype=float) - lo,
        phi=one_like,
        dpsi=one_like,
        dphi=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        anchor=lo + 1.0, provenance="analytic_bm_zero_rate",
        window=(lo, math.inf), F_limit_lo=0.0,
        _F_inv_analytic=lambda y: np.asarray(y, dtype=float) + lo,
    )


def _ou_pair(spec, delta, m, sigma0):
    nu = -spec.alpha / delta
    if nu >= 0:
        raise CatalogMissError("OU catalog needs alpha > 0")
    root = math.sqrt(2.0 * delta)

    def z_of(x):
        return (np.asarray(x, dtype=float) - m) / sigma0

    def gauss(z):
        return np.exp(0.5 * delta * z * z)

    def psi(x):
        z = z_of(x)
        return gauss(z) * parabolic_cylinder(nu, -z * root)

    def phi(x):
        z = z_of(x)
        return gauss(z) * parabolic_cylinder(nu, z * root)

    # D'_nu(w) = nu D_(nu-1)(w) - (w/2) D_nu(w) collapses the chain rule to
    # a single lower-order cylinder function
    def dpsi(x):
        z = z_of(x)
        return (root * (-nu) / sigma0) * gauss(z) * parabolic_cylinder(nu - 1.0, -z * root)

    def dphi(x):
        z = z_of(x)
        return (root * nu / sigma0) * gauss(z) * parabolic_cylinder(nu - 1.0, z * root)

    lo = spec.lo if math.isfinite(spec.lo) else -math.inf
    hi = spec.hi if math.isfinite(spec.hi) else math.inf
    win_lo = lo if math.isfinite(lo) else m - 12.0 * sigma0
    win_hi = hi if math.isfinite(hi) else m + 12.0 * sigma0
    return FundamentalPair(
        psi=psi, phi=phi, dpsi=dpsi, dphi=dphi,
        anchor=m, provenance="analytic_ou",
        window=(win_lo, win_hi), F_limit_lo=0.0 if not math.isfinite(lo) else None,
    )


def analytic_fundamentals(spec):
    """Closed-form pair for catalog diffusions (BM, OU); raises otherwise.

    Catalog pairs keep their conventional normalization (psi(0) = phi(0) = 1
    for Brownian motion), which fixes the scale of reported slopes.
    """
    match = _match_catalog(spec)
    if match is None:
        raise CatalogMissError("diffusion is not a catalog member")
    if match[0] == "bm":
        if spec.alpha > 0:
            return _bm_pair(spec)
        if spec.absorbing:
            return _bm_zero_rate_pair(spec)
        raise CatalogMissError("zero-discount BM needs an absorbing boundary")
    _, delta, m, sigma0 = match
    return _ou_pair(spec, delta, m, sigma0)


# ---------------------------------------------------------------------------
# Numeric construction by shooting on the initial slope
# ---------------------------------------------------------------------------

class _Segmented:
    """Piecewise dense ODE solution with per-segment log scale factors."""

    def __init__(self, segments, component):
        # segments: list of (x_from, x_to, OdeSolution, log_scale), ordered
        self.segments = segments
        self.component = component
        self.x_lo = min(min(s[0], s[1]) for s in segments)
        self.x_hi = max(max(s[0], s[1]) for s in segments)

    def __call__(self, x):
        xs = np.asarray(x, dtype=float)
        scalar = xs.ndim == 0
        xs = np.atleast_1d(xs).astype(float)
        out = np.empty_like(xs)
        done = np.zeros(xs.shape, dtype=bool)
        for x0, x1, sol, logscale in self.segments:
            lo, hi = min(x0, x1), max(x0, x1)
            mask = ~done & (xs >= lo - 1e-12) & (xs <= hi + 1e-12)
            if np.any(mask):
                vals = sol(np.clip(xs[mask], lo, hi))[self.component]
                out[mask] = vals * math.exp(logscale)
                done[mask] = True
        if not np.all(done):
            bad = xs[~done][0]
            raise ImpulseError(
                f"x={bad} outside the constructed window "
                f"[{self.x_lo}, {self.x_hi}]")
        return float(out[0]) if scalar else out


def _make_rhs(spec):
    mu, sig, alpha = spec.drift, spec.vol, spec.alpha

    def rhs(x, u):
        s2 = float(sig(x)) ** 2
        return [u[1], (2.0 / s2) * (alpha * u[0] - float(mu(x)) * u[1])]

    return rhs


def _integrate(rhs, x0, x1, u0, rtol, events=None):
    """Integrate with rescaling whenever |u| passes the overflow cap."""
    segments = []
    logscale = 0.0
    state = list(u0)
    start = x0
    for _ in range(64):
        def cap_event(x, u):
            return abs(u[0]) - RESCALE_CAP
        cap_event.terminal = True
        evs = [cap_event] + list(events or [])
        sol = solve_ivp(
            rhs, (start, x1), state, method="DOP853", dense_output=True,
            rtol=rtol, atol=1e-16, events=evs)
        if not sol.success:
            raise ImpulseError(f"ODE integration failed: {sol.message}")
        segments.append((start, sol.t[-1], sol.sol, logscale))
        hit_user_event = any(len(te) for te in sol.t_events[1:])
        if sol.status == 1 and not hit_user_event and len(sol.t_events[0]):
            # rescale and continue
            start = sol.t[-1]
            u_end = sol.y[:, -1]
            scale = abs(u_end[0])
            logscale += math.log(scale)
            state = [u_end[0] / scale, u_end[1] / scale]
            continue
        return segments, sol
    raise ImpulseError("exceeded rescale budget during integration")


def _wkb_roots(spec, x):
    """Local growth/decay rates: roots of (sigma^2/2) k^2 + mu k - alpha."""
    mu = float(spec.drift(x))
    s2 = float(spec.vol(x)) ** 2
    disc = math.sqrt(mu * mu + 2.0 * spec.alpha * s2)
    return (-mu + disc) / s2, (-mu - disc) / s2


def _shoot_slope(spec, rhs, c, x_end, increasing, rtol):
    """Find the initial slope at c selecting the monotone positive solution.

    For psi (increasing) we integrate leftward: the true solution decays
    below 1, so crossing 0 means the slope is too high and crossing 2 means
    contamination by the complementary (growing) solution, slope too low.
    When neither event fires before the far end, the contamination sign is
    read from the endpoint slope against the local WKB rate of the wanted
    branch, which keeps the bisection converging to the knife edge.
    For phi the roles mirror when integrating rightward.
    """

    def hit_zero(x, u):
        return u[0]
    hit_zero.terminal = True

    def hit_two(x, u):
        return u[0] - 2.0
    hit_two.terminal = True

    k_plus, k_minus = _wkb_roots(spec, x_end)
    k_want = k_plus if increasing else k_minus

    def classify(theta):
        _, sol = _integrate(rhs, c, x_end, [1.0, theta], rtol,
                            events=[hit_zero, hit_two])
        zero_hit = len(sol.t_events[1]) > 0
        two_hit = len(sol.t_events[2]) > 0
        if zero_hit or two_hit:
            if increasing:
                return 1 if zero_hit else -1
            return -1 if zero_hit else 1
        u_end, du_end = sol.y[0, -1], sol.y[1, -1]
        resid = du_end - k_want * u_end
        # on either branch the residual carries the sign that says the
        # slope was too high: psi leftward has resid ~ -B phi (k+ - k-),
        # phi rightward has resid ~ +B psi (k+ - k-), and B > 0 means
        # "too low" for psi but "too high" for phi
        return 1 if resid > 0 else -1

    lo, hi = (-1.0, 1.0)
    for _ in range(80):
        if classify(lo) <= 0:
            break
        lo *= 4.0
    else:
        raise ImpulseError("shooting failed to bracket from below")
    for _ in range(80):
        if classify(hi) >= 0:
            break
        hi *= 4.0
    else:
        raise ImpulseError("shooting failed to bracket from above")

    for _ in range(90):
        mid = 0.5 * (lo + hi)
        if hi - lo <= 5e-16 * max(1.0, abs(mid)):
            break
        if classify(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _zero_rate_numeric(spec, c, window, rtol):
    """alpha = 0: phi is constant and psi follows the scale function."""
    x_lo, x_hi = window
    mu, sig = spec.drift, spec.vol
    xs = np.linspace(x_lo, x_hi, 4001)
    ratio = 2.0 * np.asarray(mu(xs), dtype=float) / np.asarray(sig(xs), dtype=float) ** 2
    ratio = np.broadcast_to(ratio, xs.shape)
    integral = np.concatenate([[0.0], np.cumsum(0.5 * (ratio[1:] + ratio[:-1]) * np.diff(xs))])
    anchor_val = np.interp(c, xs, integral)
    s_density = np.exp(-(integral - anchor_val))
    scale = np.concatenate([[0.0], np.cumsum(0.5 * (s_density[1:] + s_density[:-1]) * np.diff(xs))])
    scale_c = np.interp(c, xs, scale)

    def psi(x):
        return 1.0 + np.interp(np.asarray(x, dtype=float), xs, scale) - scale_c

    def dpsi(x):
        return np.interp(np.asarray(x, dtype=float), xs, s_density)

    def one_like(x):
        return np.ones_like(np.asarray(x, dtype=float))

    return FundamentalPair(
        psi=psi, phi=one_like, dpsi=dpsi,
        dphi=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        anchor=c, provenance="numeric",
        window=(x_lo, x_hi), F_limit_lo=None,
    )


def _coefficients_ok(spec, xs):
    try:
        sg = np.asarray(spec.vol(xs), dtype=float)
        mu = np.asarray(spec.drift(xs), dtype=float)
    except ImpulseError:
        return False
    return bool(np.all(np.isfinite(sg)) and np.all(sg > 0) and np.all(np.isfinite(mu)))


def numeric_fundamentals(spec, c=None, tol=1e-8, window=None):
    """Build the pair by adaptive integration outward from the anchor c.

    The increasing/decreasing branches are selected by shooting on the
    initial slope; the pair is normalized to psi(c) = phi(c) = 1 and
    rescaled whenever the integrated magnitude passes 1e100.
    """
    if window is None:
        lo = spec.lo if math.isfinite(spec.lo) else -20.0
        hi = spec.hi if math.isfinite(spec.hi) else 20.0
        window = (lo, hi)
    x_lo, x_hi = float(window[0]), float(window[1])
    if c is None:
        c = 0.5 * (x_lo + x_hi)
    c = float(c)
    if not x_lo < c < x_hi:
        raise ValidationError("normalization point must be interior")

    # extend past the working window where the coefficients stay valid:
    # branch-selection errors decay like exp(-(k+ - k-) * margin), so the
    # margin buys enough e-folds of the WKB rate gap to push them below
    # the pair tolerance
    span = x_hi - x_lo
    ext_lo, ext_hi = x_lo, x_hi
    if spec.alpha > 0:
        gap_lo = max(_wkb_roots(spec, x_lo)[0] - _wkb_roots(spec, x_lo)[1],
                     1e-6)
        gap_hi = max(_wkb_roots(spec, x_hi)[0] - _wkb_roots(spec, x_hi)[1],
                     1e-6)
        margin_lo = min(max(0.25 * span, 16.0 / gap_lo), 4.0 * span)
        margin_hi = min(max(0.25 * span, 16.0 / gap_hi), 4.0 * span)
    else:
        margin_lo = margin_hi = 0.25 * span
    # the extension may leave the declared state space: only the ODE
    # coefficients need to evaluate there, the pair is used inside
    for frac in (1.0, 0.5, 0.25):
        lo_try = x_lo - frac * margin_lo
        if _coefficients_ok(spec, np.linspace(lo_try, x_lo, 16)):
            ext_lo = lo_try
            break
    for frac in (1.0, 0.5, 0.25):
        hi_try = x_hi + frac * margin_hi
        if _coefficients_ok(spec, np.linspace(x_hi, hi_try, 16)):
            ext_hi = hi_try
            break

    rtol = min(1e-11, max(tol * 1e-3, 1e-13))

    if spec.alpha == 0.0:
        return _zero_rate_numeric(spec, c, (ext_lo, ext_hi), rtol)

    rhs = _make_rhs(spec)

    theta_psi = _shoot_slope(spec, rhs, c, ext_lo, increasing=True, rtol=rtol)
    left_psi, _ = _integrate(rhs, c, ext_lo, [1.0, theta_psi], rtol)
    right_psi, _ = _integrate(rhs, c, ext_hi, [1.0, theta_psi], rtol)

    theta_phi = _shoot_slope(spec, rhs, c, ext_hi, increasing=False, rtol=rtol)
    right_phi, _ = _integrate(rhs, c, ext_hi, [1.0, theta_phi], rtol)
    left_phi, _ = _integrate(rhs, c, ext_lo, [1.0, theta_phi], rtol)

    psi = _Segmented(left_psi + right_psi, 0)
    dpsi = _Segmented(left_psi + right_psi, 1)
    phi = _Segmented(left_phi + right_phi, 0)
    dphi = _Segmented(left_phi + right_phi, 1)

    pair = FundamentalPair(
        psi=psi, phi=phi, dpsi=dpsi, dphi=dphi,
        anchor=c, provenance="numeric",
        window=(ext_lo, ext_hi), F_limit_lo=None,
    )
    # basic sanity on the constructed monotone branches
    xs = np.linspace(x_lo, x_hi, 41)
    if np.any(pair.psi(xs) <= 0) or np.any(pair.phi(xs) <= 0):
        raise ImpulseError("shooting produced a sign-changing solution")
    if np.any(np.diff(pair.F(xs)) <= 0):
        raise ImpulseError("constructed F is not strictly increasing")
    return pair


def fundamentals_for(spec, c=None, tol=1e-8, window=None):
    """Catalog pair when available, numeric construction otherwise."""
    try:
        return analytic_fundamentals(spec)
    except CatalogMissError:
        return numeric_fundamentals(spec, c=c, tol=tol, window=window)
