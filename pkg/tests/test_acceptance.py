"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import math
import time

import numpy as np
import pytest

from sps2.borel_laplace import borel_pade_sum, resum_riccati
from sps2.formal_solver import (RiccatiProblem, fit_coefficient_bounds, formal_normal_form,
                                majorant_sequence, solve_formal_riccati)
from sps2.levelt import (TriangularSystem, coupling_c12, coupling_from_basepoint,
                         levelt_filtration, triangular_riccati, triangularise, vanishing_bounds,
                         vector_angle)
from sps2.matrix_system import pre_diagonalise_full
from sps2.series_core import ArcSpec, fit_gevrey, gevrey_bound_holds
from sps2.verify import (appendix_estimates_suite, random_polynomial_system,
                         rearrangement_suite, slow_direction)


@pytest.fixture
def emit(capsys):
    def out(tag, ok, detail):
        with capsys.disabled():
            print(f"\n{tag}: {'PASS' if ok else 'FAIL'} ({detail})")
        return ok
    return out


def riccati_of(sys):
    pd = pre_diagonalise_full(sys)
    return triangular_riccati(pd.system.array, pd.radius, sys.arc)


@pytest.fixture(scope="module")
def normal_forms():
    t = time.perf_counter()
    systems = [random_polynomial_system(seed, K=13, N=24) for seed in range(20)]
    nfs = [formal_normal_form(s, 12) for s in systems]
    return systems, nfs, time.perf_counter() - t


def test_c1_formal_residual(normal_forms, emit):
    _, nfs, elapsed = normal_forms
    # residual measured per eps order relative to the size of that order's terms
    worst = max(float(np.max(nf.relative_residual)) for nf in nfs)
    ok = emit("C1 formal residual", worst < 1e-11 and elapsed < 10,
              f"max relative residual {worst:.2e}, {elapsed:.1f} s")
    assert ok


def test_c2_gevrey_certification(normal_forms, emit):
    systems, _, _ = normal_forms
    worst = 0.0
    ok = True
    for s in systems:
        p = riccati_of(s)
        sh = solve_formal_riccati(p)
        fit = fit_gevrey(sh)
        ok &= all(map(math.isfinite, fit)) and gevrey_bound_holds(sh, fit)
        sup = sh.sup_orders()
        A, B = fit_coefficient_bounds(p.a, p.b, p.c)
        A0 = p.b0().reciprocal().sup_norm()
        ms = majorant_sequence(A, B, A0, 1.0, "riccati", len(sup) - 1).terms
        ratio = max(sup[k] / math.factorial(k) / ms[k] for k in range(1, len(sup)) if ms[k])
        worst = max(worst, ratio)
    ok &= worst <= 1.0
    assert emit("C2 Gevrey certification", ok, f"max |s_k|/(k! M_k) = {worst:.3f}")


def test_c3_model_closed_form(emit):
    t = time.perf_counter()
    p = RiccatiProblem.model(K=40, N=24)
    eps = -np.linspace(0.02, 0.1, 5) * np.exp(1j * np.array([-0.3, -0.15, 0.0, 0.15, 0.3]))
    x = np.array([0.5, 0.25j, -0.1, 0.3 + 0.2j, -0.2 - 0.35j])
    sol = resum_riccati(p, eps_samples=eps, lines=16)
    err = max(abs(sol(xv, e) + e * xv / (1 - e)) for e in eps for xv in x)
    elapsed = time.perf_counter() - t
    assert emit("C3 Borel-Laplace closed form", err <= 1e-6 and elapsed < 60,
                f"max error {err:.2e}, {elapsed:.1f} s")


def test_c4_estimate_suites(emit):
    app = appendix_estimates_suite(max_order=8, conv_order=16)
    rand = rearrangement_suite(K=8)
    model = rearrangement_suite(K=1, problem="model")
    ok = app["passed"] and app["germ_rule_exact"] and app["beta_exact"] \
        and rand["monotone_after_3"] and model["residuals"][0] <= 1e-8
    assert emit("C4 estimate suites", ok,
                f"{app['checks']} checks, {len(app['failures'])} failures, rearrangement "
                f"{rand['residuals'][2]:.1e} -> {rand['residuals'][-1]:.1e}")


TRI_EPS = [0.1, 0.05, 0.025]


@pytest.fixture(scope="module")
def triangular_runs():
    return [triangularise(random_polynomial_system(seed), TRI_EPS, check=False)
            for seed in range(10)]


def test_c5_triangularisation(triangular_runs, emit):
    res = u0 = 0.0
    decreasing = True
    for G, T in triangular_runs:
        res = max(res, G.residual)
        u0 = max(u0, float(np.max(np.abs(T.u[:, 0]))))
        pts = T.radius * 0.9 * np.exp(2j * np.pi * np.arange(64) / 64)
        mx = [float(np.max(np.abs(T.u_series(e)(pts)))) for e in TRI_EPS]
        decreasing &= all(b < a for a, b in zip(mx, mx[1:]))
    ok = res <= 1e-5 and u0 <= 1e-9 and decreasing
    assert emit("C5 triangularisation", ok,
                f"residual {res:.1e}, |u(0)| {u0:.1e}, max|u| decreasing {decreasing}")


def test_c6_vanishing_bounds(triangular_runs, emit):
    kx = ke = 0.0
    for _, T in triangular_runs:
        a, b = vanishing_bounds(T)
        kx, ke = max(kx, a), max(ke, b)
    # constructed example: nu12/eps = -1, u = eps x (g0 + x/20)
    eps, g0, n = 0.1, 0.35 - 0.2j, 24
    pad = lambda c: np.r_[np.asarray(c, complex), np.zeros(n - len(c))]
    T = TriangularSystem(np.array([eps], complex), np.array([[0.0, eps]], complex),
                         np.zeros((2, n), complex), pad([0, eps * g0, 0.05 * eps])[None], 0.5,
                         0.5)
    c = coupling_c12(T, eps)
    log_err = abs(c.log_coeff + g0)
    # basepoint independence away from resonance
    Tb = TriangularSystem(np.array([eps], complex), np.array([[-0.25, 0.1]], complex),
                          np.array([pad([0.3]), pad([-0.2])]),
                          pad([0, 0.02, -0.01, 0.005])[None], 0.5, 0.5)
    cb = coupling_c12(Tb, eps)
    x = np.array([0.1, 0.15 + 0.05j])
    base = max(float(np.max(np.abs(coupling_from_basepoint(Tb, eps, cb, xs, x, nodes=128)
                                   - cb(x)))) for xs in (0.4, 0.3j, -0.2 + 0.3j))
    ok = kx < 1e3 and ke < 1e3 and log_err <= 1e-6 and base <= 1e-8
    assert emit("C6 vanishing bounds", ok,
                f"kappa_x {kx:.2f}, kappa_eps {ke:.2f}, log coefficient error {log_err:.1e}, "
                f"basepoint {base:.1e}")


LEVELT_EPS = [0.1, 0.05, 0.02, 0.001]


@pytest.fixture(scope="module")
def frames():
    t = time.perf_counter()
    out = []
    for seed in range(5):
        s = random_polynomial_system(seed)
        out.append((s, levelt_filtration(s, LEVELT_EPS, check=False)))
    return out, time.perf_counter() - t


def test_c7_levelt_vs_integrator(frames, emit):
    runs, t_frames = frames
    t = time.perf_counter()
    worst = 0.0
    ordered = True
    for s, fr in runs:
        r0 = fr.radius
        for q, e in enumerate(fr.eps):
            if abs(e) < 0.01:
                continue
            d = slow_direction(s, e, 1e-6 * r0, 1e-3 * r0)
            worst = max(worst, vector_angle(d, fr.e1(1e-3 * r0, e)))
            s1, s2 = fr.checks["exponents"][q]
            ordered &= s1 > s2
    elapsed = t_frames + time.perf_counter() - t
    ok = worst <= 1e-3 and ordered and elapsed < 300
    assert emit("C7 Levelt vs integrator", ok,
                f"max angle {worst:.1e} rad, exponents ordered {ordered}, {elapsed:.0f} s")


def test_c8_frame_limits(frames, emit):
    runs, _ = frames
    x0 = max(fr.checks["x0"] for _, fr in runs)
    e0 = max(fr.checks["eps0"] for _, fr in runs)
    eps_min = max(abs(fr.checks["eps_min"]) for _, fr in runs)
    ok = x0 <= 1e-6 and e0 <= 1e-3 and eps_min <= 1e-3
    assert emit("C8 frame limits", ok, f"x -> 0 angle {x0:.1e}, eps -> 0 angle {e0:.1e}")


def test_c9_cross_method(emit):
    worst = 0.0
    for seed in range(3):
        s = random_polynomial_system(seed, K=40, N=24)
        p = riccati_of(s)
        sol = resum_riccati(p, eps_samples=[0.1, 0.05, 0.02], check=False)
        for e in (0.1, 0.05, 0.02):
            for xv in (0.2, 0.1j, -0.15):
                v, _ = borel_pade_sum(sol.formal, e, 0.0, x=xv)
                worst = max(worst, abs(sol(xv, e) - v))
    arc = ArcSpec(-0.3, 0.3)
    s = random_polynomial_system(2, K=40, N=24, arc=arc)
    eps = [0.05 * np.exp(1j * a) for a in (-0.4, -0.1, 0.1, 0.4)] + [0.1 * np.exp(0.05j)]
    glue = resum_riccati(riccati_of(s), arc, eps_samples=eps, check=False).gluing_error
    ok = worst <= 1e-4 and glue <= 1e-6
    assert emit("C9 cross-method overlap", ok,
                f"Pade gap {worst:.1e}, gluing {glue:.1e}")
