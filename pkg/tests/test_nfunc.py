import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aqc import nfunc as nf
from aqc.errors import (ClassViolationError, DegenerateConjugateError, DomainError,
                        InvalidNFunctionError, UnsupportedFunctionError)


def test_power_values_and_derivatives():
    psi = nf.power(3.0, coef=1 / 3)
    t = np.array([0.0, 1.0, 2.0])
    assert np.allclose(psi(t), t ** 3 / 3)
    assert np.allclose(psi.deriv(t), t ** 2)
    assert np.allclose(psi.deriv2(t), 2 * t)


def test_shift_of_cubic_matches_closed_form():
    # phi'(s) = s^2, so phi_1(t) = int_0^t (1+s) s ds = t^2/2 + t^3/3
    phi = nf.power(3.0, coef=1 / 3)
    t = np.array([0.5, 2.0, 10.0])
    assert np.allclose(nf.shift(phi, 1.0)(t), t ** 2 / 2 + t ** 3 / 3, rtol=1e-10)


def test_shift_of_square_is_itself():
    phi = nf.power(2.0)
    assert nf.shift(phi, 3.7) is phi


def test_shift_zero_and_errors():
    phi = nf.llogl()
    assert nf.shift(phi, 0.0) is phi
    with pytest.raises(DomainError):
        nf.shift(phi, -1.0)
    bare = nf.NFunction(lambda t: t * t, None)
    with pytest.raises(UnsupportedFunctionError):
        nf.shift(bare, 1.0)


def test_shift_second_derivative_against_differences():
    sh = nf.shift(nf.llogl(), 2.0)
    t = np.array([0.3, 1.0, 5.0])
    e = 1e-5
    fd = (sh.deriv(t + e) - sh.deriv(t - e)) / (2 * e)
    assert np.allclose(sh.deriv2(t), fd, rtol=1e-6)
    # near zero the shift is quadratic with curvature phi'(a)/a
    a = 2.0
    assert math.isclose(float(sh.deriv2(np.array([0.0]))[0]), float(nf.llogl().deriv(np.array([a]))[0]) / a,
                        rel_tol=1e-12)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0, 4.5])
def test_biconjugation_power(p):
    psi = nf.power(p, coef=1 / p)
    t = np.logspace(-4, 4, 200)
    bic = nf.numeric_conjugate(nf.numeric_conjugate(psi))
    assert np.allclose(bic(t), psi(t), rtol=1e-6)


def test_numeric_conjugate_matches_closed_form_exp_pair():
    t = np.logspace(-3, 1.5, 100)
    a = nf.numeric_conjugate(nf.exp_nf())(t)
    b = nf.exp_conjugate()(t)
    assert np.allclose(a, b, rtol=1e-8)


def test_exp_conjugate_closed_form():
    t = np.array([0.5, 1.0, 3.0])
    assert np.allclose(nf.exp_conjugate()(t), (1 + t) * np.log1p(t) - t)


def test_degenerate_conjugate():
    lin = nf.linear(2.0)
    with pytest.raises(DegenerateConjugateError) as info:
        nf.conjugate(lin)
    assert info.value.threshold == 2.0
    c = nf.conjugate(lin, allow_degenerate=True)
    assert c(np.array([1.0]))[0] == 0.0 and np.isinf(c(np.array([3.0]))[0])
    s = nf.conjugate(nf.sqrt1p(), allow_degenerate=True, numeric=True)
    x = np.array([0.5, 0.99, 1.5])
    out = s(x)
    assert np.isfinite(out[:2]).all() and np.isinf(out[2])
    assert np.allclose(out[:2], 1 - np.sqrt(1 - x[:2] ** 2), rtol=1e-8)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0, 5.0])
def test_delta2_of_powers_is_exact(p):
    rep = nf.delta2_estimate(nf.power(p))
    if float(p).is_integer():
        assert rep.delta2 == 2.0 ** p
    else:
        # (2t)^p / t^p is only correctly rounded, not exact, for fractional p
        assert abs(rep.delta2 - 2.0 ** p) <= 4 * np.spacing(2.0 ** p)
    assert not rep.delta2_unbounded


def test_llogl_growth_constants():
    rep = nf.delta2_estimate(nf.llogl())
    assert abs(rep.delta2 - 4.0) < 1e-3
    assert nf.nabla2_estimate(nf.llogl()).nabla2_unbounded
    assert nf.delta2_estimate(nf.exp_nf()).delta2_unbounded


def test_nabla2_of_powers():
    # nabla2(t^p) = delta2(t^q) = 2^q with q the dual exponent
    assert math.isclose(nf.nabla2_estimate(nf.power(3.0)).nabla2, 2 ** 1.5, rel_tol=1e-6)
    assert math.isclose(nf.nabla2_estimate(nf.power(2.0)).nabla2, 4.0, rel_tol=1e-6)


def test_zero_function_is_rejected():
    with pytest.raises(InvalidNFunctionError):
        nf.delta2_estimate(nf.NFunction(lambda t: 0.0 * t, lambda t: 0.0 * t))


def test_shift_comparability():
    rep = nf.shift_comparability_scan(nf.power(3.0), [0.5, 1.0, 10.0])
    assert rep.holds
    with pytest.raises(ClassViolationError):
        nf.shift_comparability_scan(nf.llogl(), [1.0])


@pytest.mark.parametrize("psi", [nf.power(2.0), nf.power(3.5), nf.llogl(), nf.exp_nf(), nf.sqrt1p(),
                                 nf.exp_conjugate()])
def test_axioms(psi):
    assert all(v for k, v in nf.check_axioms(psi).data.items() if isinstance(v, bool))


def test_piecewise_dispatch_and_descriptor_roundtrip():
    pw = nf.piecewise([1.0], [nf.Branch(nf.power(2.0, 0.5)), nf.Branch(nf.linear(1.0), offset=-0.5)])
    t = np.array([0.5, 1.0, 2.0])
    assert np.allclose(pw(t), [0.125, 0.5, 1.5])
    back = nf.from_dict(pw.to_dict())
    assert np.allclose(back(t), pw(t))


def test_v1_is_stable_for_tiny_arguments():
    z = np.array([[1e-10, 0.0]])
    assert nf.v1(z)[0] == pytest.approx(5e-21, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.sampled_from([2.0, 3.0, "llogl"]))
def test_young_inequality(s, t, which):
    psi = nf.llogl() if which == "llogl" else nf.power(which)
    conj = nf.conjugate(psi)
    a = float(psi(np.array([s]))[0])
    b = float(conj(np.array([t]))[0])
    assert s * t <= a + b + 1e-9 * max(1.0, s * t)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 50.0), st.floats(0.0, 20.0))
def test_shift_is_monotone_in_t(a, t):
    sh = nf.shift(nf.power(3.0), a)
    v = sh(np.array([t, t + 0.5]))
    assert v[1] >= v[0] >= 0
