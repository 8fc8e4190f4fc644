import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sps2.borel_laplace import (BorelFunction, borel_pade_sum, convolve, formal_borel, laplace,
                                resum_riccati, solve_borel_ode, solve_strip_pde, star_equation,
                                straighten, straightening, strip_residual, taylor_convolve,
                                trapezoid_convolve)
from sps2.errors import (DomainError, HypothesisError, PoleOnRayError, ResonanceError,
                         StructuralError)
from sps2.formal_solver import RiccatiProblem, solve_formal_riccati
from sps2.series_core import ArcSpec, EpsExpansion, XSeries

PI = ArcSpec(math.pi, math.pi)
EULER_AT_TENTH = 0.0915633339397880818760698157665  # e^10 E1(10), mpmath


def sampled(fn, step, xi_max=4.0, taylor=(1.0,), direction=0.0):
    r = np.arange(int(round(xi_max / step)) + 1) * step
    return BorelFunction(XSeries(np.asarray(taylor, complex), np.inf), direction,
                         fn(r).astype(complex), step)


def test_formal_borel_examples():
    np.testing.assert_allclose(formal_borel([0, 1]).taylor.coeffs, [1])
    np.testing.assert_allclose(formal_borel([0, 0, 1]).taylor.coeffs, [0, 1])
    geo = formal_borel(np.r_[0.0, np.ones(10)]).taylor.coeffs
    np.testing.assert_allclose(geo, [1 / math.factorial(m) for m in range(10)])
    with pytest.raises(HypothesisError):
        formal_borel([1.0, 1.0])


def test_convolve_units():
    one = sampled(np.ones_like, 1 / 64)
    c = convolve(one, one)
    np.testing.assert_allclose(c.taylor.coeffs, [0])  # truncated germ of length 1
    np.testing.assert_allclose(c.grid, one.r, atol=1e-12)
    bad = sampled(np.ones_like, 1 / 32)
    with pytest.raises(StructuralError):
        convolve(one, bad)


def test_convolve_exponentials():
    h = 1 / 256
    e = sampled(np.exp, h, xi_max=8.0)
    c = convolve(e, e)
    want = e.r * np.exp(e.r)
    assert np.max(np.abs(c.grid - want) / np.maximum(want, 1)) < 1e-6


def test_taylor_rule_small_orders():
    f = np.array([0, 1, 0], complex)
    g = np.array([0, 0, 0.5], complex)
    # xi * xi^2/2 = xi^4/4!
    out = taylor_convolve(np.r_[f, 0, 0], np.r_[g, 0, 0])
    np.testing.assert_allclose(out, [0, 0, 0, 0, 1 / 24])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 20))
def test_convolution_commutative_and_associative(seed):
    rng = np.random.default_rng(seed)
    coef = rng.normal(size=(3, 4)) + 1j * rng.normal(size=(3, 4))

    def triple(h):
        r = np.arange(int(2 / h) + 1) * h
        f, g, k = (np.polynomial.polynomial.polyval(r, c) * np.exp(-0.5 * r) for c in coef)
        return (trapezoid_convolve(f, g, h), trapezoid_convolve(g, f, h),
                trapezoid_convolve(trapezoid_convolve(f, g, h), k, h),
                trapezoid_convolve(f, trapezoid_convolve(g, k, h), h))

    fg, gf, a1, b1 = triple(1 / 128)
    assert np.max(np.abs(fg - gf)) <= 1e-12 * max(1.0, np.max(np.abs(fg)))
    _, _, a2, b2 = triple(1 / 64)
    A = (4 * a1[::2] - a2) / 3
    B = (4 * b1[::2] - b2) / 3
    assert np.max(np.abs(A - B)) <= 1e-8 * max(1.0, np.max(np.abs(A)))


def test_borel_ode_zero():
    z = sampled(np.zeros_like, 1 / 32, taylor=(0.0,))
    s = solve_borel_ode(z)
    assert not np.any(s.grid)


def model_ode(h, x=0.5, xi_max=2.0):
    a0 = sampled(lambda r: -x * np.ones_like(r), h, xi_max, taylor=(-x, 0, 0, 0))
    return solve_borel_ode(a0, u1=1.0)


def test_borel_ode_linear_closed_form():
    # s' = -x + s, s(0) = 0  =>  s = -x (e^r - 1); Richardson over h and 2h
    h, x = 1 / 256, 0.5
    fine, coarse = model_ode(h, x), model_ode(2 * h, x)
    rich = (4 * fine.grid[::2] - coarse.grid) / 3
    want = -x * np.expm1(coarse.r)
    assert np.max(np.abs(rich - want)) < 1e-8
    assert np.max(np.abs(fine.grid[::2] - want)) < 1e-4
    np.testing.assert_allclose(fine.taylor.coeffs[:4], [0, -x, -x / 2, -x / 6], atol=1e-15)
    C1, C2 = fine.exp_fit
    assert np.all(np.abs(fine.grid) <= C1 * np.exp(C2 * fine.r) * (1 + 1e-9))
    assert fine.info["residual"] < 1e-8


def constant_riccati(K=12):
    # x-independent coefficients, so the strip problem and the Borel ODE coincide
    a = EpsExpansion.from_eps([0, 0.3, -0.2, 0.1], K, 2, arc=PI)
    b = EpsExpansion.from_eps([1.0, 0.2, 0.1], K, 2, arc=PI)
    c = EpsExpansion.from_eps([0, 0.25, 0.1], K, 2, arc=PI)
    return RiccatiProblem(a, b, c, PI)


def ode_from_star(star, theta, step, xi_max):
    rho = complex(star.b0.coeffs[0])
    J = int(round(xi_max / step))
    fns = [BorelFunction.from_coeffs(al[:, 0] / -rho, theta, np.inf).sampled(step, J)
           for al in star.alpha]
    return solve_borel_ode(fns[0], fns[1], fns[2], star.u1.coeffs[0] / -rho,
                           star.u2.coeffs[0] / -rho)


def test_borel_ode_germ_matches_formal_solution():
    p = constant_riccati()
    star = star_equation(p)
    sigma = ode_from_star(star, math.pi, 1 / 32, 2.0)
    s = solve_formal_riccati(p).coeffs[:, 0]
    # Borel transform of s* = s - eps s1
    n = min(p.K - 1, 8)
    want = [0.0] + [s[m + 1] / math.factorial(m) for m in range(1, n)]
    np.testing.assert_allclose(sigma.taylor.coeffs[:n], want, atol=1e-8)


def test_strip_reduces_to_borel_ode():
    p = constant_riccati()
    star = star_equation(p)
    step, xi_max = 1 / 32, 2.0
    sp = straighten(star, math.pi, x_starts=[0.3, 0.2j], step=step, xi_max=xi_max)
    tau = solve_strip_pde(sp).tau
    sigma = ode_from_star(star, math.pi, step, xi_max)
    for k in range(2):
        assert np.max(np.abs(tau[k, 0] - sigma.grid)) < 1e-6
        assert np.max(np.abs(tau[k, 5] - tau[k, 0][:len(tau[k, 5])] * (np.arange(
            len(tau[k, 5])) <= 64 - 5))) < 1e-6


def test_strip_trivial_cases():
    p = RiccatiProblem(EpsExpansion.zeros(8, 4, arc=PI), EpsExpansion.constant(1.0, 8, 4, arc=PI),
                       EpsExpansion.zeros(8, 4, arc=PI), PI)
    sp = straighten(star_equation(p), math.pi, x_starts=[0.2], step=1 / 16, xi_max=2.0)
    assert not np.any(solve_strip_pde(sp).tau)
    # beta0 depending on xi only: tau = -int_0^r beta0
    p = RiccatiProblem(EpsExpansion.from_eps([0, 0, 0.5, 0.25], 8, 4, arc=PI),
                       EpsExpansion.constant(1.0, 8, 4, arc=PI), EpsExpansion.zeros(8, 4, arc=PI),
                       PI)
    sp = straighten(star_equation(p), math.pi, x_starts=[0.2, -0.1], step=1 / 64, xi_max=2.0)
    tau = solve_strip_pde(sp).tau
    r = np.arange(sp.J + 1) * sp.step
    beta = sp.beta0[0, 0]
    # beta0 = e^{i pi}(0.5 + 0.25 e^{i pi} r): polynomial, so the trapezoid integral is exact
    want = -(-0.5 * r + 0.25 * r ** 2 / 2)
    np.testing.assert_allclose(beta, -0.5 + 0.25 * r, atol=1e-14)
    np.testing.assert_allclose(tau[0, 0], want, atol=1e-12)
    np.testing.assert_allclose(tau[1, 10, :sp.J - 9], want[:sp.J - 9], atol=1e-12)


def test_straightening_closed_forms():
    st0 = straightening(XSeries([2.0, 0, 0, 0]), math.pi)
    x = np.array([0.1, 0.3j])
    np.testing.assert_allclose(st0.xt(x), x)
    np.testing.assert_allclose(st0.z(x), -2.0 * np.log(x))
    st1 = straightening(XSeries(2.0 * np.array([1.0, 1.0, 0, 0, 0, 0])), math.pi)
    np.testing.assert_allclose(st1.xt(x), x * np.exp(x), atol=1e-15)
    np.testing.assert_allclose(st1.x_of_xt(x * np.exp(x)), x, atol=1e-14)


def test_strip_periodicity():
    rng = np.random.default_rng(4)
    K, N = 10, 4
    a = 0.2 * (rng.normal(size=(K + 1, N + 1)) + 0j)
    a[0] = 0
    b = np.zeros((K + 1, N + 1), complex)
    b[0, 0], b[0, 1], b[1, 2] = 1.0, 0.3, 0.2
    c = np.zeros_like(b)
    c[1, 1] = 0.2
    p = RiccatiProblem(EpsExpansion(a, 0.5, PI), EpsExpansion(b, 0.5, PI),
                       EpsExpansion(c, 0.5, PI), PI)
    star = star_equation(p)
    z0 = straighten(star, math.pi, x_starts=[0.3], step=1 / 16, xi_max=2.0).z0[0]
    per = straighten(star, math.pi, x_starts=[0.3], step=1 / 16, xi_max=2.0).period
    sp = straighten(star, math.pi, z_starts=[z0, z0 + per], step=1 / 16, xi_max=2.0)
    for beta in (sp.beta0, sp.beta1, sp.beta2):
        assert np.max(np.abs(beta[0] - beta[1])) < 1e-8
    tau = solve_strip_pde(sp).tau
    assert np.max(np.abs(tau[0] - tau[1])) < 1e-8
    assert strip_residual(sp, tau) < 1e-6


def test_straighten_resonant_direction():
    p = RiccatiProblem.model(K=8, N=4)
    with pytest.raises(ResonanceError):
        straighten(star_equation(p), 0.0, x_starts=[0.1])


def test_laplace_elementary():
    h = 1 / 32
    one = sampled(np.ones_like, h).with_exp_fit()
    assert laplace(one, [0.1]).values[0] == pytest.approx(0.1, abs=1e-12)
    lin = sampled(lambda r: r, h, taylor=(0, 1)).with_exp_fit()
    assert laplace(lin, [0.1]).values[0] == pytest.approx(0.01, abs=1e-12)
    ex = BorelFunction.from_coeffs([1 / math.factorial(m) for m in range(30)]).sampled(h, 128)
    ex = BorelFunction(XSeries(ex.taylor.coeffs, np.inf), 0.0, np.exp(ex.r), h).with_exp_fit()
    assert abs(laplace(ex, [0.1]).values[0] - 1 / 9) < 1e-8
    with pytest.raises(DomainError) as info:
        laplace(sampled(lambda r: np.exp(3 * r), h).with_exp_fit(), [0.5])
    assert info.value.info["max_abs_eps"] < 0.5


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=2, max_size=6), st.floats(0.01, 0.1),
       st.floats(-0.5, 0.5))
def test_borel_laplace_round_trip(coeffs, mag, arg):
    c = np.r_[0.0, coeffs]
    f = formal_borel(c).sampled(1 / 32, 128)
    f = BorelFunction(XSeries(f.taylor.coeffs, np.inf), 0.0, f.grid, f.step).with_exp_fit()
    eps = mag * np.exp(1j * arg)
    want = np.polynomial.polynomial.polyval(eps, c)
    assert abs(laplace(f, [eps]).values[0] - want) < 1e-10


def test_borel_pade_examples():
    v, _ = borel_pade_sum(np.r_[0.0, np.ones(16)], 0.1)
    assert abs(1 + v - 1 / 0.9) < 1e-6
    euler = [0.0] + [(-1) ** k * math.factorial(k) for k in range(16)]
    v, err = borel_pade_sum(euler, 0.1)
    assert abs(v - EULER_AT_TENTH) < 1e-3
    assert borel_pade_sum(np.zeros(12), 0.1) == (0, 0.0)
    with pytest.raises(PoleOnRayError):
        borel_pade_sum([0.0] + [math.factorial(k) for k in range(1, 14)], 0.1)
    with pytest.raises(StructuralError):
        borel_pade_sum([0.0, 1.0, 1.0], 0.1)


def test_resum_zero_forcing():
    p = RiccatiProblem(EpsExpansion.zeros(20, 8, arc=PI),
                       EpsExpansion.constant(1.0, 20, 8, arc=PI),
                       EpsExpansion.zeros(20, 8, arc=PI), PI)
    sol = resum_riccati(p, eps_samples=[-0.05], lines=8, borel_order=20)
    assert np.max(np.abs(sol.coeffs)) == 0


def test_resum_model_small():
    p = RiccatiProblem.model(K=40, N=16)
    eps = np.array([-0.1, -0.05 * np.exp(0.3j)])
    sol = resum_riccati(p, eps_samples=eps, lines=16)
    for e in eps:
        for x in (0.4, 0.25j, -0.1 + 0.2j):
            assert abs(sol(x, e) + e * x / (1 - e)) < 1e-6
    assert sol.residual < 1e-5
