"""Independent oracles.

A fixed-eps ODE integrator, eigenvector oracles, numeric checks of the
factorial/convolution estimates and the rearrangement check for the
successive approximations. Borel-plane results are used only through their
public sampled outputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .borel_laplace import (BorelFunction, StripProblem, ode_integral_map, solve_borel_ode,
                            solve_strip_pde, strip_integral_map, taylor_convolve,
                            trapezoid_convolve)
from .errors import StiffnessError, StructuralError
from .matrix_system import SystemSpec
from .series_core import ArcSpec, XSeries

STIFF_EPS = 1e-3
ODE_RTOL = 1e-10


# ---------------------------------------------------------------------------
# random test systems
# ---------------------------------------------------------------------------

def random_polynomial_system(seed, scale=0.1, gap=(0.8, 1.5), cond=3.0, x_degree=3,
                             eps_degree=2, disc_radius=0.5, arc=None, K=None, N=None):
    """Random ``A(x, eps)``: a generic ``A(0, 0)`` plus a small polynomial perturbation.

    ``A(0, 0) = V diag(m1, m2) V^{-1}`` with ``Re(m2 - m1)`` in ``gap`` (so the
    pair is ordered for directions near 0) and ``cond(V) < cond``.
    """
    rng = np.random.default_rng(seed)
    m1 = -0.5 - 0.5 * rng.random()
    m2 = m1 + gap[0] + (gap[1] - gap[0]) * rng.random()
    d = 0.2j * rng.normal()
    m1 += d
    m2 += d + 0.1j * rng.normal()
    while True:
        V = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        if np.linalg.cond(V) < cond:
            break
    K = eps_degree if K is None else K
    N = x_degree if N is None else N
    arr = np.zeros((2, 2, K + 1, N + 1), complex)
    arr[:, :, 0, 0] = V @ np.diag([m1, m2]) @ np.linalg.inv(V)
    for k in range(eps_degree + 1):
        for n in range(x_degree + 1):
            if k == 0 and n == 0:
                continue
            arr[:, :, k, n] = scale * (rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))
    return SystemSpec.from_array(arr, arc=arc or ArcSpec(0.0, 0.0), disc_radius=disc_radius)


# ---------------------------------------------------------------------------
# fixed-eps integrator
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class OdeTrace:
    """Solution samples of ``eps x psi' + A psi = 0`` along a path.

    ``values[k] * exp(log_scale[k])`` is the solution at ``path[k]``.
    """

    path: np.ndarray
    values: np.ndarray
    log_scale: np.ndarray
    eps: complex
    method_order: int
    rtol: float
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise StiffnessError("non-finite solution values")

    @property
    def final(self):
        return self.values[-1]

    def direction(self, k=-1):
        v = self.values[k]
        return v / np.linalg.norm(v)


def _matrix_fn(sys):
    if isinstance(sys, SystemSpec):
        return lambda x, e: sys(x, e)
    if callable(sys):
        return sys
    raise StructuralError("expected a SystemSpec or a callable A(x, eps)")


def integrate_fixed_eps(sys, eps, x_from, x_to, init, rtol=ODE_RTOL, segments=16,
                        samples=0, method="DOP853") -> OdeTrace:
    """Integrate ``eps x psi' = -A(x, eps) psi`` from ``x_from`` to ``x_to``.

    The path is the straight line in ``log x`` (radial when both points share
    an argument). The solution is renormalised after each of ``segments``
    pieces, the norms being kept in ``log_scale``.
    """
    if abs(eps) < STIFF_EPS:
        raise StiffnessError("eps below the stiffness guard", eps=complex(eps), guard=STIFF_EPS)
    if x_from == 0 or x_to == 0:
        raise StructuralError("path must avoid x = 0")
    A = _matrix_fn(sys)
    l0, l1 = np.log(complex(x_from)), np.log(complex(x_to))
    dl = l1 - l0

    def rhs(s, y):
        x = np.exp(l0 + s * dl)
        return -dl * (A(x, eps) @ y) / eps

    y = np.asarray(init, complex).copy()
    knots = np.linspace(0.0, 1.0, segments + 1)
    path = [np.exp(l0)]
    vals = [y.copy()]
    scale = [0.0]
    logn = 0.0
    nfev = 0
    for a, b in zip(knots[:-1], knots[1:]):
        t_eval = None if samples == 0 else np.linspace(a, b, samples + 1)[1:]
        sol = integrate.solve_ivp(rhs, (a, b), y, method=method, rtol=rtol,
                                  atol=1e-14 * max(1.0, float(np.linalg.norm(y))),
                                  t_eval=t_eval)
        nfev += sol.nfev
        if sol.status != 0:
            raise StiffnessError("integrator failed", message=sol.message, s=float(a))
        ys = sol.y.T if samples else sol.y[:, -1:].T
        ts = sol.t if samples else sol.t[-1:]
        for t, v in zip(ts, ys):
            path.append(np.exp(l0 + t * dl))
            vals.append(v.copy())
            scale.append(logn)
        y = sol.y[:, -1]
        nrm = float(np.linalg.norm(y))
        if not np.isfinite(nrm) or nrm == 0:
            raise StiffnessError("solution left the floating range", s=float(b))
        logn += math.log(nrm)
        y = y / nrm
    # store normalised values with their own scale
    v = np.array(vals)
    sc = np.array(scale)
    norms = np.linalg.norm(v, axis=1)
    v = v / norms[:, None]
    sc = sc + np.log(norms)
    order = 8 if method == "DOP853" else 5
    return OdeTrace(np.array(path), v, sc, complex(eps), order, rtol, {"nfev": nfev})


def linearity_check(sys, eps, x_from, x_to, rng=None):
    """Max relative gap between the run from ``a + b`` and the sum of the runs from ``a`` and ``b``."""
    rng = np.random.default_rng(0) if rng is None else rng
    a = rng.normal(size=2) + 1j * rng.normal(size=2)
    b = rng.normal(size=2) + 1j * rng.normal(size=2)
    runs = [integrate_fixed_eps(sys, eps, x_from, x_to, v, segments=1) for v in (a, b, a + b)]
    full = [r.final * math.exp(r.log_scale[-1]) for r in runs]
    gap = np.linalg.norm(full[2] - full[0] - full[1])
    return float(gap / max(np.linalg.norm(full[2]), 1e-300))


def slow_direction(sys, eps, x_inner, x_outer, rng=None):
    """Direction at ``x_outer`` of a generic solution started at ``x_inner``.

    Moving outward the solution that is smallest at ``x = 0`` grows fastest,
    so a generic start converges onto its line.
    """
    rng = np.random.default_rng(1) if rng is None else rng
    init = rng.normal(size=2) + 1j * rng.normal(size=2)
    return integrate_fixed_eps(sys, eps, x_inner, x_outer, init).direction()


def residue_eigenvectors(sys: SystemSpec, eps):
    """Eigenpairs of ``A(0, eps)``."""
    return np.linalg.eig(sys(0.0, eps))


def leading_eigenvectors(sys: SystemSpec, x):
    """Eigenpairs of ``A(x, 0)``."""
    return np.linalg.eig(sys(x, 0.0))


def fitted_slope(x, log_norms):
    return float(np.polyfit(np.log(np.abs(x)), log_norms, 1)[0])


# ---------------------------------------------------------------------------
# factorial and convolution estimates
# ---------------------------------------------------------------------------

R_GRID = (0.5, 1.0, 2.0, 4.0)
L_GRID = (0.0, 1.0, 2.0)


def _quad(f, a, b):
    return integrate.quad(f, a, b, epsabs=0, epsrel=1e-13, limit=200)[0]


def appendix_estimates_suite(max_order=8, conv_order=16, step=1 / 256):
    """Numeric checks of three estimates used to bound the successive terms.

    ``increasing``: ``int_0^R r**n/n! e^{L r} dr <= R**(n+1)/(n+1)! e^{L R}``.
    ``beta``: ``int_0^R (R-r)**m r**n dr = m! n!/(m+n+1)! R**(m+n+1)`` by
    quadrature, plus the exact germ rule of the Borel convolution for
    ``m + n <= conv_order``.
    ``convolution``: ``|f_i * f_j| <= M_i M_j xi**(i+j+1)/(i+j+1)! e^{L xi}``
    for sampled ``f_i`` with ``|f_i| <= M_i xi**i/i! e^{L xi}``.
    """
    failures = []
    checks = 0
    for R in R_GRID:
        for n in range(max_order + 1):
            for L in L_GRID:
                lhs = _quad(lambda r: r ** n / math.factorial(n) * math.exp(L * r), 0, R)
                rhs = R ** (n + 1) / math.factorial(n + 1) * math.exp(L * R)
                checks += 1
                if lhs > rhs * (1 + 1e-12):
                    failures.append(("increasing", R, n, L, lhs, rhs))
    beta_ok = True
    for R in R_GRID:
        for m in range(max_order + 1):
            for n in range(max_order + 1):
                lhs = _quad(lambda r: (R - r) ** m * r ** n, 0, R)
                rhs = math.factorial(m) * math.factorial(n) / math.factorial(m + n + 1) \
                    * R ** (m + n + 1)
                checks += 1
                if abs(lhs - rhs) > 1e-11 * max(1.0, rhs):
                    beta_ok = False
                    failures.append(("beta", R, m, n, lhs, rhs))
    germ_ok = True
    for m in range(conv_order + 1):
        for n in range(conv_order + 1 - m):
            f = np.zeros(m + n + 2)
            g = np.zeros(m + n + 2)
            f[m] = 1.0 / math.factorial(m)
            g[n] = 1.0 / math.factorial(n)
            h = taylor_convolve(f, g)
            want = np.zeros_like(h)
            want[m + n + 1] = 1.0 / math.factorial(m + n + 1)
            checks += 1
            if np.max(np.abs(h - want)) > 1e-15 * abs(want[m + n + 1]):
                germ_ok = False
                failures.append(("germ", m, n, float(np.max(np.abs(h - want)))))
    rng = np.random.default_rng(7)
    xi = np.arange(int(4 / step) + 1) * step
    for L in L_GRID:
        for i in range(max_order + 1):
            for j in range(max_order + 1 - i):
                Mi, Mj = 1 + rng.random(), 1 + rng.random()
                ph_i = np.exp(1j * rng.normal() * xi)
                ph_j = np.exp(1j * rng.normal() * xi)
                fi = Mi * xi ** i / math.factorial(i) * np.exp(L * xi) * ph_i * rng.uniform(0.5, 1)
                fj = Mj * xi ** j / math.factorial(j) * np.exp(L * xi) * ph_j * rng.uniform(0.5, 1)
                conv = np.abs(trapezoid_convolve(fi, fj, step))
                bound = Mi * Mj * xi ** (i + j + 1) / math.factorial(i + j + 1) * np.exp(L * xi)
                # slack: trapezoid error of the majorant convolution itself
                Fi = Mi * xi ** i / math.factorial(i) * np.exp(L * xi)
                Fj = Mj * xi ** j / math.factorial(j) * np.exp(L * xi)
                slack = np.abs(trapezoid_convolve(Fi, Fj, step).real - bound)
                checks += 1
                floor = 1e-11 * float(np.max(bound))  # FFT roundoff
                if np.any(conv > bound + slack * (1 + 1e-9) + floor):
                    failures.append(("convolution", L, i, j))
    return {"checks": checks, "failures": failures, "passed": not failures,
            "beta_exact": beta_ok, "germ_rule_exact": germ_ok}


def rearrangement_suite(K=8, problem=None, step=1 / 64, xi_max=4.0):
    """Substitute partial sums of the successive terms into the integral equation.

    With ``P_k = sum_{n<=k} s_n``, ``residual[k] = max|RHS(P_k) - P_{k+1}|``;
    for linear problems this is zero, otherwise it collects terms of grade
    ``>= k + 2`` and decays with ``k``.
    ``problem`` is ``None`` (a fixed randomised Borel ODE), ``"model"`` or a
    dict of :func:`solve_borel_ode` arguments; a :class:`StripProblem` runs the
    strip version.
    """
    if isinstance(problem, StripProblem):
        sol = solve_strip_pde(problem, keep_terms=True)
        terms = sol.partial_terms
        rhs = lambda P: strip_integral_map(problem, P)
    else:
        args = _ode_problem(problem, step, xi_max)
        s = solve_borel_ode(**args)
        terms = s.info["partial_terms"]
        rhs = lambda P: ode_integral_map(P, args["alpha0"], args.get("alpha1"),
                                         args.get("alpha2"), args.get("u1", 0.0),
                                         args.get("u2", 0.0))
    residuals = []
    P = np.zeros_like(terms[0])
    for k in range(1, min(K, len(terms) - 1) + 1):
        P = P + terms[k - 1]
        nxt = P + terms[k]
        residuals.append(float(np.max(np.abs(rhs(P) - nxt))))
    tail = residuals[2:]
    monotone = all(b <= a * (1 + 1e-9) + 1e-300 for a, b in zip(tail, tail[1:]))
    return {"residuals": residuals, "monotone_after_3": monotone,
            "zero": not np.any(np.abs(np.array(terms)) > 0)}


def _ode_problem(problem, step, xi_max):
    J = int(round(xi_max / step))
    r = np.arange(J + 1) * step
    if problem is None:
        rng = np.random.default_rng(11)
        def bf(c):
            c = np.asarray(c, complex)
            return BorelFunction(XSeries(c, np.inf), 0.0,
                                 np.polynomial.polynomial.polyval(r, c), step)
        c0 = 0.5 * (rng.normal(size=4) + 1j * rng.normal(size=4))
        c1 = 0.3 * (rng.normal(size=3) + 1j * rng.normal(size=3))
        c2 = 0.2 * (rng.normal(size=2) + 1j * rng.normal(size=2))
        return dict(alpha0=bf(c0), alpha1=bf(c1), alpha2=bf(c2), u1=0.4 - 0.2j, u2=0.3 + 0.1j)
    if problem == "model":
        x = 0.5
        a0 = BorelFunction(XSeries(np.array([-x], complex), np.inf), 0.0,
                           np.full(J + 1, -x, complex), step)
        return dict(alpha0=a0, u1=1.0)
    if problem == "zero":
        a0 = BorelFunction(XSeries(np.zeros(1, complex), np.inf), 0.0,
                           np.zeros(J + 1, complex), step)
        return dict(alpha0=a0)
    return dict(problem)

