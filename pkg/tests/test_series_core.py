import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sps2.errors import StructuralError
from sps2.series_core import (ArcSpec, EpsExpansion, XSeries, eps_mul, euler_derivative,
                              fit_gevrey, gevrey_bound_holds, with_gevrey_fit, xseries_mul)


def xs(c, radius=1.0):
    return XSeries(np.asarray(c, complex), radius)


def test_xseries_product_identities():
    np.testing.assert_allclose(xseries_mul(xs([1, 1, 0]), xs([1, -1, 0])).coeffs, [1, 0, -1])
    a = xs([2, 3j, -1])
    np.testing.assert_allclose(xseries_mul(a, xs([1, 0, 0])).coeffs, a.coeffs)


def test_xseries_geometric_square():
    # double-sum oracle: coefficient n of (sum x^i)^2 counts pairs i + j = n
    want = [sum(1 for i in range(n + 1)) for n in range(4)]
    got = xseries_mul(xs([1, 1, 1, 1]), xs([1, 1, 1, 1])).coeffs
    np.testing.assert_allclose(got, want)
    np.testing.assert_allclose(got, [1, 2, 3, 4])


def test_xseries_mismatch_and_radius():
    with pytest.raises(StructuralError):
        xseries_mul(xs([1, 2]), xs([1, 2, 3]))
    assert xseries_mul(xs([1, 2], 0.5), xs([1, 2], 2.0)).radius == 0.5
    with pytest.raises(StructuralError):
        XSeries(np.ones(3), 0.0)


def test_eps_products():
    a = EpsExpansion.from_terms({(0, 1): 2.0, (1, 0): -1j}, K=3, N=2)
    one = EpsExpansion.constant(1.0, K=3, N=2)
    np.testing.assert_allclose(eps_mul(a, one).coeffs, a.coeffs)
    e = EpsExpansion.from_eps([0, 1], K=3, N=0)
    np.testing.assert_allclose(eps_mul(e, e).coeffs[:, 0], [0, 0, 1, 0])
    f = EpsExpansion.from_eps([math.factorial(k) for k in range(4)], K=3, N=0)
    # brute-force convolution of factorials
    want = [sum(math.factorial(i) * math.factorial(k - i) for i in range(k + 1)) for k in range(4)]
    np.testing.assert_allclose(eps_mul(f, f).coeffs[:, 0], want)
    np.testing.assert_allclose(want, [1, 2, 5, 16])


def test_eps_arc_mismatch():
    a = EpsExpansion.constant(1.0, K=2, N=1)
    b = EpsExpansion.constant(1.0, K=2, N=1, arc=ArcSpec(0.0, 0.2))
    with pytest.raises(StructuralError):
        eps_mul(a, b)


def test_euler_derivative_examples():
    c = EpsExpansion.constant(3.0, K=1, N=3)
    assert not np.any(euler_derivative(c).coeffs)
    x = EpsExpansion.from_terms({(0, 1): 1.0}, K=1, N=3)
    np.testing.assert_allclose(euler_derivative(x).coeffs, x.coeffs)
    p = EpsExpansion.from_terms({(0, 2): 1.0, (1, 3): 1.0}, K=1, N=3)
    want = EpsExpansion.from_terms({(0, 2): 2.0, (1, 3): 3.0}, K=1, N=3)
    np.testing.assert_allclose(euler_derivative(p).coeffs, want.coeffs)


def test_arc_hat_extension():
    a = ArcSpec(-0.2, 0.5)
    assert a.hat_extension == (-0.2 - math.pi / 2, 0.5 + math.pi / 2)
    with pytest.raises(StructuralError):
        ArcSpec(1.0, 0.0)


@pytest.mark.parametrize("base", [1.0, 2.0])
def test_fit_gevrey_factorial_growth(base):
    K = 12
    a = EpsExpansion.from_eps([base ** k * math.factorial(k) for k in range(K + 1)], K=K, N=2)
    C, M = fit_gevrey(a)
    assert abs(M / base - 1) < 0.05
    assert gevrey_bound_holds(a, (C, M))
    assert with_gevrey_fit(a).gevrey_fit == (C, M)


def test_fit_gevrey_zero_and_short():
    assert fit_gevrey(EpsExpansion.zeros(K=4, N=2)) == (0.0, 1.0)
    with pytest.raises(StructuralError):
        fit_gevrey(EpsExpansion.zeros(K=1, N=2))


def test_horner_evaluation_is_finite_sum():
    a = xs([1, 2, 3], radius=0.5)
    assert a(0.2) == pytest.approx(1 + 0.4 + 3 * 0.04)


# -- properties ---------------------------------------------------------------

cnum = st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False)


def eps_exp(K=3, N=3):
    return st.lists(cnum, min_size=(K + 1) * (N + 1), max_size=(K + 1) * (N + 1)).map(
        lambda v: EpsExpansion(np.array(v, complex).reshape(K + 1, N + 1)))


def close(a, b, rel=1e-14):
    scale = max(1.0, float(np.max(np.abs(a.coeffs))), float(np.max(np.abs(b.coeffs))))
    return float(np.max(np.abs(a.coeffs - b.coeffs))) <= rel * scale * 16


@settings(max_examples=40, deadline=None)
@given(eps_exp(), eps_exp(), eps_exp())
def test_ring_axioms(a, b, c):
    assert close((a + b) + c, a + (b + c))
    assert close(eps_mul(a, b + c), eps_mul(a, b) + eps_mul(a, c))
    assert close(eps_mul(a, b), eps_mul(b, a))


@settings(max_examples=40, deadline=None)
@given(eps_exp(), eps_exp())
def test_euler_is_a_derivation(a, b):
    lhs = euler_derivative(eps_mul(a, b))
    rhs = eps_mul(euler_derivative(a), b) + eps_mul(a, euler_derivative(b))
    assert close(lhs, rhs)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100.0), st.integers(0, 2 ** 16))
def test_fit_gevrey_scale_consistent(c, seed):
    rng = np.random.default_rng(seed)
    K = 8
    vals = [math.factorial(k) * 1.5 ** k * (1 + 0.3 * rng.random()) for k in range(K + 1)]
    a = EpsExpansion.from_eps(vals, K=K, N=1)
    C1, M1 = fit_gevrey(a)
    C2, M2 = fit_gevrey(EpsExpansion(c * a.coeffs))
    assert abs(M2 - M1) <= 1e-10 * M1
    assert abs(C2 - c * C1) <= 1e-10 * c * C1
