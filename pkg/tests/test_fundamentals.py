import math

import numpy as np
import pytest
from scipy.special import erfc, pbdv

from impulse_bands import (ValidationError, analytic_fundamentals,
                           hermite_fn, numeric_fundamentals,
                           parabolic_cylinder)
from impulse_bands.errors import CatalogMissError
from impulse_bands.model import DiffusionSpec
from impulse_bands.expressions import parse_expr


def bm_spec(alpha=0.2, boundary="natural", lo=-math.inf):
    return DiffusionSpec(
        drift=parse_expr("0", ("x",)),
        vol=parse_expr("1", ("x",)),
        alpha=alpha, lo=lo, hi=math.inf, boundary=boundary)


def ou_spec():
    params = {"delta": 0.1, "m": 0.9, "sigma": 0.35}
    return DiffusionSpec(
        drift=parse_expr("delta*(m - x)", ("x",), params),
        vol=parse_expr("sigma", ("x",), params),
        alpha=0.105, lo=0.0, hi=math.inf, boundary="absorbing")


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------

def test_hermite_minus_one_at_zero():
    # H_{-1}(0) = int_0^inf exp(-t^2) dt = sqrt(pi)/2
    assert hermite_fn(-1.0, 0.0) == pytest.approx(math.sqrt(math.pi) / 2,
                                                  rel=1e-12)


def test_hermite_positive():
    zs = np.linspace(-3, 3, 13)
    for nu in (-0.5, -1.05, -2.6):
        assert np.all(hermite_fn(nu, zs) > 0)


def test_hermite_derivative_identity():
    # H'_nu(z) = 2 nu H_(nu-1)(z)
    nu, z, h = -1.05, 0.5, 1e-4
    fd = (hermite_fn(nu, z + h) - hermite_fn(nu, z - h)) / (2 * h)
    assert fd == pytest.approx(2 * nu * hermite_fn(nu - 1, z), rel=1e-5)


def test_hermite_rejects_nonnegative_order():
    with pytest.raises(ValidationError):
        hermite_fn(0.0, 1.0)


def test_cylinder_vs_erfc_closed_form():
    # D_{-1}(z) = exp(z^2/4) sqrt(pi/2) erfc(z/sqrt(2))
    for z in np.linspace(-3, 3, 25):
        closed = math.exp(z * z / 4) * math.sqrt(math.pi / 2) \
            * erfc(z / math.sqrt(2))
        assert parabolic_cylinder(-1.0, z) == pytest.approx(closed, rel=1e-8)


def test_cylinder_vs_scipy():
    for nu in (-0.35, -1.05, -2.05):
        for z in np.linspace(-4, 4, 17):
            ref = pbdv(nu, z)[0]
            assert parabolic_cylinder(nu, z) == pytest.approx(ref, rel=1e-8)


def test_cylinder_decay_at_plus_infinity():
    assert parabolic_cylinder(-1.05, 10.0) < parabolic_cylinder(-1.05, 5.0)
    assert parabolic_cylinder(-1.05, 10.0) > 0


def test_cylinder_rejects_nonnegative_order():
    with pytest.raises(ValidationError):
        parabolic_cylinder(0.5, 1.0)


# ---------------------------------------------------------------------------
# analytic catalog
# ---------------------------------------------------------------------------

def test_bm_pair_values():
    pair = analytic_fundamentals(bm_spec())
    s = math.sqrt(0.4)
    assert pair.F(0.0) == pytest.approx(1.0)
    assert pair.psi(0.0) == pytest.approx(1.0)
    assert pair.phi(0.0) == pytest.approx(1.0)
    assert pair.F(1.0) == pytest.approx(math.exp(2 * s), rel=1e-12)
    assert pair.F(1.0) == pytest.approx(3.5427, rel=1e-4)
    assert pair.F_inv(pair.F(1.7)) == pytest.approx(1.7, rel=1e-12)


def test_ou_pair_monotone():
    pair = analytic_fundamentals(ou_spec())
    xs = np.linspace(0.0, 2.0, 41)
    psi = pair.psi(xs)
    phi = pair.phi(xs)
    assert np.all(np.diff(psi) > 0)
    assert np.all(np.diff(phi) < 0)
    assert np.all(psi > 0) and np.all(phi > 0)
    assert np.all(np.diff(pair.F(xs)) > 0)


def test_zero_rate_bm_pair():
    pair = analytic_fundamentals(bm_spec(alpha=0.0, boundary="absorbing",
                                         lo=0.0))
    xs = np.linspace(0.0, 10.0, 11)
    np.testing.assert_allclose(pair.F(xs), xs)
    assert pair.F_limit_lo == 0.0


def test_not_in_catalog():
    spec = DiffusionSpec(
        drift=parse_expr("-x^3", ("x",)),
        vol=parse_expr("1", ("x",)),
        alpha=0.3, lo=-math.inf, hi=math.inf, boundary="natural")
    with pytest.raises(CatalogMissError):
        analytic_fundamentals(spec)


def test_wronskian_positive():
    for pair in (analytic_fundamentals(bm_spec()),
                 analytic_fundamentals(ou_spec())):
        xs = np.linspace(0.1, 2.0, 17)
        assert np.all(pair.wronskian(xs) > 0)


def _ode_residual(spec, pair, xs, h=1e-4):
    out = []
    sig = np.asarray(spec.vol(xs), dtype=float)
    mu = np.asarray(spec.drift(xs), dtype=float)
    for u in (pair.psi, pair.phi):
        u0, up, um = u(xs), u(xs + h), u(xs - h)
        d1 = (up - um) / (2 * h)
        d2 = (up - 2 * u0 + um) / (h * h)
        res = 0.5 * sig * sig * d2 + mu * d1 - spec.alpha * u0
        out.append(np.max(np.abs(res) / (1.0 + np.abs(u0))))
    return max(out)


def test_ode_residual_analytic():
    spec = bm_spec()
    assert _ode_residual(spec, analytic_fundamentals(spec),
                         np.linspace(-5, 5, 21)) < 1e-6
    spec = ou_spec()
    assert _ode_residual(spec, analytic_fundamentals(spec),
                         np.linspace(0.05, 2.2, 21)) < 1e-6


# ---------------------------------------------------------------------------
# numeric construction
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def numeric_bm_pair():
    return numeric_fundamentals(bm_spec(), c=0.0, tol=1e-8, window=(-12, 12))


def test_numeric_bm_matches_analytic(numeric_bm_pair):
    pair = numeric_bm_pair
    s = math.sqrt(0.4)
    xs = np.linspace(-5.0, 5.0, 41)
    np.testing.assert_allclose(pair.psi(xs), np.exp(s * xs), rtol=1e-6)
    np.testing.assert_allclose(pair.phi(xs), np.exp(-s * xs), rtol=1e-6)
    np.testing.assert_allclose(pair.dpsi(xs), s * np.exp(s * xs), rtol=1e-5)


def test_numeric_normalization(numeric_bm_pair):
    assert numeric_bm_pair.psi(0.0) == pytest.approx(1.0, abs=1e-12)
    assert numeric_bm_pair.phi(0.0) == pytest.approx(1.0, abs=1e-12)


def test_numeric_ou_matches_catalog():
    spec = ou_spec()
    c = 1.0
    num = numeric_fundamentals(spec, c=c, tol=1e-8, window=(0.0, 2.5))
    ana = analytic_fundamentals(spec)
    xs = np.linspace(0.0, 2.0, 33)
    # numeric pairs are normalized at c; rescale the catalog to compare
    np.testing.assert_allclose(
        num.psi(xs), ana.psi(xs) / ana.psi(c), rtol=1e-5)
    np.testing.assert_allclose(
        num.phi(xs), ana.phi(xs) / ana.phi(c), rtol=1e-5)


def test_numeric_ode_residual(numeric_bm_pair):
    spec = bm_spec()
    assert _ode_residual(spec, numeric_bm_pair,
                         np.linspace(-8, 8, 33)) < 1e-6


def test_numeric_interior_anchor_required():
    with pytest.raises(ValidationError):
        numeric_fundamentals(bm_spec(), c=30.0, window=(-10, 10))
