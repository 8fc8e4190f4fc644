"""Borel plane machinery and directional Laplace resummation.

Conventions
-----------
The formal Borel transform sends ``sum_{k>=1} a_k eps**k`` to
``sum_k a_k zeta**(k-1) / (k-1)!`` so that the Laplace transform
``int_0^oo exp(-zeta/eps) f(zeta) dzeta`` inverts it and division by ``eps``
becomes ``d/dzeta``.

A Laplace direction ``theta`` fixes the ray ``zeta = exp(i theta) r``.
Sampled Borel functions store ``f(exp(i theta) r_j)`` at ``r_j = j h``. On the
ray a zeta-convolution becomes ``exp(i theta)`` times the plain convolution
in ``r``; all quadratures are trapezoidal.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import mpmath
import numpy as np
from numpy.linalg import LinAlgError
from scipy.interpolate import pade

from .errors import (ConvergenceError, DivergenceError, DomainError, HypothesisError, PoleOnRayError,
                     ResonanceError, Sps2Error, StructuralError, ValidationError)
from .formal_solver import RiccatiProblem, solve_formal_riccati, working_radius
from .matrix_system import series_radius_estimate
from .series_core import (ArcSpec, EpsExpansion, XSeries, circle_points, eps_mul,
                          euler_derivative, xseries_from_samples)

DEFAULT_STEP = 1 / 32
DEFAULT_XI_MAX = 4.0
DEFAULT_LINES = 32
DEFAULT_BOREL_ORDER = 40
MAX_TERMS = 128
TERM_TOL = 1e-12
DOMAIN_MARGIN = 0.5
CHUNK_ELEMENTS = 400_000


def _factorials(n):
    return np.array([math.factorial(k) for k in range(n)], float)


def fit_exponential(r, values):
    """``(C1, C2)`` with ``|values| <= C1 exp(C2 r)`` on every sample.

    ``C2`` is the slope of a least-squares fit of ``log|values|`` over the upper
    half of the grid; ``C1`` is then the smallest constant that dominates all
    samples.
    """
    r = np.asarray(r, float)
    v = np.abs(np.asarray(values))
    if v.size == 0 or not np.any(v > 0):
        return (0.0, 0.0)
    half = len(r) // 2
    rr, vv = r[half:], v[half:]
    keep = vv > 1e-300
    if keep.sum() >= 2:
        C2 = float(np.polyfit(rr[keep], np.log(vv[keep]), 1)[0])
    else:
        C2 = 0.0
    C2 = max(C2, 0.0)
    with np.errstate(divide="ignore"):
        C1 = float(np.max(v * np.exp(-C2 * r)))
    return (C1 * (1 + 1e-12), C2)


# ---------------------------------------------------------------------------
# Borel functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BorelFunction:
    """Function of ``zeta`` given by a Taylor germ and, optionally, ray samples.

    Parameters
    ----------
    taylor : XSeries
        Coefficients of ``zeta**m`` (not rotated).
    direction : float
        Ray argument ``theta``.
    grid : ndarray, optional
        ``f(exp(i theta) j h)`` for ``j = 0..J``.
    step : float, optional
    exp_fit : tuple, optional
        ``(C1, C2)`` with ``|grid_j| <= C1 exp(C2 j h)``.
    """

    taylor: XSeries
    direction: float = 0.0
    grid: np.ndarray | None = None
    step: float | None = None
    exp_fit: tuple | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.grid is not None:
            if self.step is None or self.step <= 0:
                raise StructuralError("sampled Borel functions need a positive step")
            g = np.asarray(self.grid, complex)
            g.setflags(write=False)
            object.__setattr__(self, "grid", g)
            if not np.all(np.isfinite(g)):
                raise StructuralError("Borel samples must be finite")
        if self.exp_fit is not None and self.grid is not None:
            C1, C2 = self.exp_fit
            bound = C1 * np.exp(C2 * self.r)
            if np.any(np.abs(self.grid) > bound * (1 + 1e-9) + 1e-300):
                raise StructuralError("exponential fit does not dominate the samples")

    @property
    def r(self):
        return np.arange(len(self.grid)) * self.step

    @property
    def J(self):
        return len(self.grid) - 1

    def rotated_taylor(self):
        """Coefficients of ``r**m`` for ``r -> f(exp(i theta) r)``."""
        c = self.taylor.coeffs
        return c * np.exp(1j * self.direction * np.arange(len(c)))

    def germ(self, r):
        return np.polynomial.polynomial.polyval(np.asarray(r), self.rotated_taylor())

    def taylor_agreement(self, upto=None):
        """Max relative gap between germ and samples on ``r <= upto``."""
        if self.grid is None:
            return 0.0
        upto = 0.25 * self.taylor.radius if upto is None else upto
        m = self.r <= upto
        if not np.any(m):
            return 0.0
        g = self.germ(self.r[m])
        scale = max(1.0, float(np.max(np.abs(self.grid[m]))))
        return float(np.max(np.abs(g - self.grid[m])) / scale)

    def sampled(self, step, J):
        """Samples of the germ on ``r_j = j step``."""
        r = np.arange(J + 1) * step
        return BorelFunction(self.taylor, self.direction, self.germ(r), step, None, dict(self.info))

    def with_exp_fit(self):
        return BorelFunction(self.taylor, self.direction, self.grid, self.step,
                             fit_exponential(self.r, self.grid), dict(self.info))

    @classmethod
    def from_coeffs(cls, coeffs, direction=0.0, radius=None):
        c = np.asarray(coeffs, complex)
        if radius is None:
            radius = series_radius_estimate(c)
        return cls(XSeries(c, radius), direction)


def borel_coefficients(a: EpsExpansion, tol=1e-12):
    """Borel germ coefficients ``(K, N+1)``: row ``m`` is ``a_{m+1}(x) / m!``."""
    c = a.coeffs
    if np.max(np.abs(c[0])) > tol * max(1.0, a.max_abs()):
        raise HypothesisError("formal Borel transform needs a vanishing eps**0 term")
    return c[1:] / _factorials(a.K)[:, None]


def formal_borel(a, x=None, direction=0.0) -> BorelFunction:
    """Formal Borel transform of an eps-series.

    ``a`` is an :class:`EpsExpansion` (evaluated at ``x`` when given) or a
    plain sequence of eps coefficients ``a_0, a_1, ...``.
    """
    if isinstance(a, EpsExpansion):
        if x is None:
            if a.N > 0 and np.any(a.coeffs[:, 1:] != 0):
                raise StructuralError("x-dependent series: pass the sample point x")
            c = a.coeffs[:, 0]
        else:
            c = a.at_x(x)
    else:
        c = np.asarray(a, complex)
    if len(c) < 2:
        raise StructuralError("need at least the eps**1 coefficient")
    if abs(c[0]) > 1e-12 * max(1.0, float(np.max(np.abs(c)))):
        raise HypothesisError("formal Borel transform needs a vanishing eps**0 term")
    return BorelFunction.from_coeffs(c[1:] / _factorials(len(c) - 1), direction)


def taylor_convolve(f, g):
    """Borel convolution of germs: ``zeta**i/i! * zeta**j/j! = zeta**(i+j+1)/(i+j+1)!``."""
    f = np.asarray(f, complex)
    g = np.asarray(g, complex)
    n = max(len(f), len(g))
    fact = _factorials(n + 1)
    F = f * fact[:len(f)]
    G = g * fact[:len(g)]
    H = np.convolve(F, G)[:n - 1]
    out = np.zeros(n, complex)
    out[1:] = H / fact[1:n]
    return out


def trapezoid_convolve(f, g, h):
    """``int_0^{r_j} f(r_j - u) g(u) du`` by the trapezoidal rule, along the last axis."""
    f = np.asarray(f, complex)
    g = np.asarray(g, complex)
    n = f.shape[-1]
    size = 2 * n
    full = np.fft.ifft(np.fft.fft(f, size) * np.fft.fft(g, size))[..., :n]
    return h * (full - 0.5 * f[..., :1] * g - 0.5 * f * g[..., :1])


def cumulative_trapezoid(f, h):
    f = np.asarray(f, complex)
    out = np.zeros_like(f)
    out[..., 1:] = h * (np.cumsum(f, axis=-1)[..., 1:] - 0.5 * f[..., :1] - 0.5 * f[..., 1:])
    return out


def convolve(f: BorelFunction, g: BorelFunction) -> BorelFunction:
    """Borel-plane convolution ``int_0^zeta f(zeta - u) g(u) du``."""
    if not math.isclose(f.direction, g.direction, abs_tol=1e-14):
        raise StructuralError("convolution of Borel functions on different rays")
    taylor = taylor_convolve(f.taylor.coeffs, g.taylor.coeffs)
    radius = min(f.taylor.radius, g.taylor.radius)
    grid = None
    step = None
    if f.grid is not None and g.grid is not None:
        if not math.isclose(f.step, g.step, rel_tol=1e-12) or f.J != g.J:
            raise StructuralError("convolution of Borel samples with different grids")
        step = f.step
        grid = np.exp(1j * f.direction) * trapezoid_convolve(f.grid, g.grid, step)
    return BorelFunction(XSeries(taylor, radius), f.direction, grid, step)


# ---------------------------------------------------------------------------
# successive approximations on a ray
# ---------------------------------------------------------------------------

def _scalar_grid(f, step, J, direction):
    if f is None:
        return np.zeros(J + 1, complex), np.zeros(1, complex)
    if f.grid is None:
        f = f.sampled(step, J)
    if not math.isclose(f.direction, direction, abs_tol=1e-14):
        raise StructuralError("inputs live on different rays")
    if f.J != J or not math.isclose(f.step, step, rel_tol=1e-12):
        raise StructuralError("inputs carry different grids")
    return f.grid, f.taylor.coeffs


def _germ_ode(a0, a1, a2, u1, u2, n):
    """Taylor germ of the solution of ``s' = a0 + u1 s + a1*s + u2 s*s + a2*s*s``, ``s(0) = 0``."""
    def pad(c):
        out = np.zeros(n, complex)
        m = min(n, len(c))
        out[:m] = c[:m]
        return out
    a0, a1, a2 = pad(a0), pad(a1), pad(a2)
    s = np.zeros(n, complex)
    for m in range(n - 1):
        ss = taylor_convolve(s, s)
        rhs = a0[m] + u1 * s[m] + taylor_convolve(a1, s)[m] + u2 * ss[m] \
            + taylor_convolve(a2, ss)[m]
        s[m + 1] = rhs / (m + 1)
    return s


def solve_borel_ode(alpha0: BorelFunction, alpha1: BorelFunction | None = None,
                    alpha2: BorelFunction | None = None, u1: complex = 0.0, u2: complex = 0.0,
                    step=None, J=None, tol=TERM_TOL, max_terms=MAX_TERMS) -> BorelFunction:
    """Solve ``ds/dzeta = a0 + u1 s + a1*s + u2 s*s + a2*s*s`` with ``s(0) = 0``.

    The solution is the sum of the graded terms
    ``s_1 = int a0`` and
    ``s_n = int (u1 s_{n-1} + a1*s_{n-2} + u2 S_{n-2} + a2*S_{n-3})``
    with ``S_m = sum_{i+j=m} s_i*s_j``; the loop stops once three consecutive
    terms fall below ``tol`` relative to the partial sum.
    """
    theta = alpha0.direction
    if alpha0.grid is not None:
        step = alpha0.step if step is None else step
        J = alpha0.J if J is None else J
    step = DEFAULT_STEP if step is None else step
    J = int(round(DEFAULT_XI_MAX / step)) if J is None else J
    g0, t0 = _scalar_grid(alpha0, step, J, theta)
    g1, t1 = _scalar_grid(alpha1, step, J, theta)
    g2, t2 = _scalar_grid(alpha2, step, J, theta)
    ph = np.exp(1j * theta)
    has_quad = bool(u2 != 0 or np.any(g2 != 0))
    terms = [np.zeros(J + 1, complex)]
    squares = [np.zeros(J + 1, complex)]  # squares[m] = S_m
    total = np.zeros(J + 1, complex)
    small = 0
    converged = False
    for n in range(1, max_terms + 1):
        if n == 1:
            rhs = ph * g0
        else:
            rhs = ph * u1 * terms[n - 1]
            if n >= 3:
                rhs = rhs + ph ** 2 * trapezoid_convolve(g1, terms[n - 2], step)
            if has_quad and n >= 3:
                rhs = rhs + ph ** 2 * u2 * squares[n - 2]
            if has_quad and n >= 4:
                rhs = rhs + ph ** 3 * trapezoid_convolve(g2, squares[n - 3], step)
        term = cumulative_trapezoid(rhs, step)
        terms.append(term)
        total = total + term
        if has_quad:
            sq = sum(trapezoid_convolve(terms[i], terms[n - i], step) for i in range(1, n))
            squares.append(sq if n >= 2 else np.zeros(J + 1, complex))
        size = float(np.max(np.abs(term)))
        scale = max(float(np.max(np.abs(total))), 1e-300)
        small = small + 1 if size <= tol * scale or size == 0 else 0
        if small >= 3 or not np.any(total):
            converged = True
            break
        if not np.isfinite(size):
            break
    if not converged:
        raise DivergenceError("Borel ODE iteration did not settle", terms=n,
                              last_term=size, partial_sum=float(np.max(np.abs(total))))
    n_germ = max(len(t0), len(t1), len(t2)) + 1
    germ = _germ_ode(t0, t1, t2, u1, u2, n_germ)
    radius = min(f.taylor.radius for f in (alpha0, alpha1, alpha2) if f is not None)
    res = _ode_residual(total, g0, g1, g2, u1, u2, step, theta)
    out = BorelFunction(XSeries(germ, radius), theta, total, step,
                        info={"terms": len(terms) - 1, "residual": res,
                              "partial_terms": terms[1:]})
    return out.with_exp_fit()


def _ode_residual(s, g0, g1, g2, u1, u2, step, theta):
    ph = np.exp(1j * theta)
    ss = trapezoid_convolve(s, s, step)
    rhs = ph * (g0 + u1 * s) + ph ** 2 * (trapezoid_convolve(g1, s, step) + u2 * ss) \
        + ph ** 3 * trapezoid_convolve(g2, ss, step)
    r = s - cumulative_trapezoid(rhs, step)
    return float(np.max(np.abs(r)) / max(1.0, np.max(np.abs(s))))


def ode_integral_map(s, alpha0, alpha1, alpha2, u1, u2):
    """Right side of the integral form of the Borel ODE evaluated at samples ``s``."""
    step, theta = alpha0.step, alpha0.direction
    J = alpha0.J
    g0, _ = _scalar_grid(alpha0, step, J, theta)
    g1, _ = _scalar_grid(alpha1, step, J, theta)
    g2, _ = _scalar_grid(alpha2, step, J, theta)
    ph = np.exp(1j * theta)
    ss = trapezoid_convolve(s, s, step)
    rhs = ph * (g0 + u1 * s) + ph ** 2 * (trapezoid_convolve(g1, s, step) + u2 * ss) \
        + ph ** 3 * trapezoid_convolve(g2, ss, step)
    return cumulative_trapezoid(rhs, step)


# ---------------------------------------------------------------------------
# the equation for s* and its straightening
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StarEquation:
    """``x ds*/dx - b0 s*/eps = F0 + F1 s* + F2 s*^2`` for ``s = eps s1 + s*``."""

    s1: XSeries
    b0: XSeries
    F0: EpsExpansion
    F1: EpsExpansion
    F2: EpsExpansion
    u1: XSeries
    u2: XSeries
    alpha: tuple  # Borel germs of F0, F1 - u1, F2 - u2 as (K, N+1) arrays


def star_equation(p: RiccatiProblem) -> StarEquation:
    b0 = p.b0()
    s1 = -(p.a.order(1) * b0.reciprocal())
    K, N, radius, arc = p.K, p.N, p.radius, p.theta_arc
    S1 = EpsExpansion.zeros(K, N, radius, arc)
    S1c = S1.coeffs.copy()
    S1c[1] = s1.coeffs
    S1 = EpsExpansion(S1c, radius, arc)
    bracket = p.a + eps_mul(p.b, S1) + eps_mul(p.c, eps_mul(S1, S1)) \
        - euler_derivative(S1).shift(1)
    scale = max(1.0, bracket.max_abs())
    F0 = bracket.shift(-1, tol=1e-9 * scale)
    b_rest = p.b - EpsExpansion.from_x(b0, K, arc).with_radius(radius)
    F1 = (b_rest + 2 * eps_mul(p.c, S1)).shift(-1, tol=1e-9 * scale)
    F2 = p.c.shift(-1, tol=1e-9 * scale)
    u1, u2 = F1.order(0), F2.order(0)
    F1r = F1 - EpsExpansion.from_x(u1, K, arc).with_radius(radius)
    F2r = F2 - EpsExpansion.from_x(u2, K, arc).with_radius(radius)
    alpha = tuple(borel_coefficients(F) for F in (F0, F1r, F2r))
    return StarEquation(s1, b0, F0, F1, F2, u1, u2, alpha)


@dataclass(frozen=True, eq=False)
class StripProblem:
    """Coefficients of ``(d/dz - d/dr) tau = b0 + v1 tau + b1*tau + v2 tau*tau + b2*tau*tau``.

    Data are sampled on ``L`` characteristic lines ``z = z0 + t``, ``t = i h``,
    and on ``r = j h`` with ``i + j <= J`` (entries outside the triangle are 0).
    """

    v1: np.ndarray      # (L, J+1)
    v2: np.ndarray      # (L, J+1)
    beta0: np.ndarray   # (L, J+1, J+1)
    beta1: np.ndarray
    beta2: np.ndarray
    step: float
    theta: float
    rho: complex
    z0: np.ndarray      # (L,)
    x_lines: np.ndarray  # (L, J+1) points of the disc on each line
    delta: float = 0.0
    fundamental: tuple = (0.0, 0.0)

    def __post_init__(self):
        L, n = self.v1.shape
        for b in (self.beta0, self.beta1, self.beta2):
            if b.shape != (L, n, n):
                raise StructuralError("strip samples do not share the triangular grid")
        if self.w >= 0:
            raise ResonanceError("Re(exp(-i theta) rho) must be negative", theta=self.theta)

    @property
    def J(self):
        return self.v1.shape[1] - 1

    @property
    def L(self):
        return self.v1.shape[0]

    @property
    def w(self) -> float:
        return float(np.real(np.exp(-1j * self.theta) * self.rho))

    @property
    def w0(self) -> float:
        return 1.01 * math.pi * abs(self.w)

    @property
    def period(self) -> complex:
        """Shift of ``z`` that returns to the same point of the disc."""
        return 2j * math.pi * np.exp(-1j * self.theta) * self.rho

    @property
    def has_quadratic(self):
        return bool(np.any(self.v2 != 0) or np.any(self.beta2 != 0))


def triangle_mask(J):
    i = np.arange(J + 1)
    return (i[:, None] + i[None, :]) <= J


@dataclass(frozen=True, eq=False)
class Straightening:
    """Coordinate ``xt = x exp(Phi(x))`` with ``rho x dxt/dx = b0 xt``."""

    rho: complex
    theta: float
    phi: XSeries      # Phi(x) = int_0^x (b0/rho - 1) dt/t
    inverse: XSeries  # x as a series in xt

    def xt(self, x):
        x = np.asarray(x, complex)
        return x * np.exp(self.phi(x))

    def log_xt(self, x):
        x = np.asarray(x, complex)
        return np.log(x) + self.phi(x)

    def z(self, x):
        return np.exp(-1j * self.theta) * self.rho * self.log_xt(x)

    def x_of_xt(self, xt, guess=None, iters=30):
        """Invert ``xt(x)`` by the reverted series polished with Newton steps."""
        xt = np.asarray(xt, complex)
        x = self.inverse(xt) if guess is None else np.asarray(guess, complex)
        dphi = self.phi.derivative()
        for _ in range(iters):
            e = np.exp(self.phi(x))
            f = x * e - xt
            fp = e * (1 + x * dphi(x))
            dx = f / fp
            x = x - dx
            if np.all(np.abs(dx) <= 1e-15 * np.maximum(np.abs(x), 1e-300)):
                break
        return x

    def x_of_z(self, z):
        return self.x_of_xt(np.exp(np.asarray(z) * np.exp(1j * self.theta) / self.rho))


def straightening(b0: XSeries, theta: float) -> Straightening:
    rho = complex(b0.coeffs[0])
    phi = (b0 / rho - 1.0).log_integral()
    xt = (phi.exp()).mul_x()
    return Straightening(rho, theta, phi, xt.revert())


def _eval_borel_rows(coeffs, x, r, theta):
    """``alpha(x, exp(i theta) r)`` for germ rows ``coeffs[m](x)``; broadcast to ``x.shape + r.shape``."""
    K = coeffs.shape[0]
    cx = np.polynomial.polynomial.polyval(x, coeffs.T)  # shape (K,) + x.shape
    cx = np.moveaxis(cx, 0, -1)                           # x.shape + (K,)
    powers = (np.exp(1j * theta) * np.asarray(r, complex))[..., None] ** np.arange(K)
    return cx @ powers.T


def straighten(star: StarEquation, theta: float, x_starts=None, z_starts=None,
               step=DEFAULT_STEP, xi_max=DEFAULT_XI_MAX, radius=None) -> StripProblem:
    """Sample the strip problem on characteristic lines through the given points.

    Each line ``z0 + t`` maps back to ``x(t)`` with ``xt(x(t)) = xt(x0) exp(t e^{i theta}/rho)``,
    a logarithmic spiral into the origin.
    """
    b0 = star.b0
    rho = complex(b0.coeffs[0])
    if np.real(np.exp(-1j * theta) * rho) >= 0:
        raise ResonanceError("direction is resonant for this equation", theta=theta, rho=rho)
    st = straightening(b0, theta)
    J = int(round(xi_max / step))
    if not math.isclose(J * step, xi_max, rel_tol=1e-12):
        raise StructuralError("step must divide the Borel grid length")
    t = np.arange(J + 1) * step
    if z_starts is not None:
        z0 = np.atleast_1d(np.asarray(z_starts, complex))
        lxt0 = z0 * np.exp(1j * theta) / rho
        x0 = st.x_of_xt(np.exp(lxt0))
    else:
        x0 = np.atleast_1d(np.asarray(x_starts, complex))
        lxt0 = st.log_xt(x0)
        z0 = np.exp(-1j * theta) * rho * lxt0
    lxt = lxt0[:, None] + t[None, :] * np.exp(1j * theta) / rho
    guess = x0[:, None] * np.exp((t * np.exp(1j * theta) / rho))[None, :]
    x = st.x_of_xt(np.exp(lxt), guess=guess)
    if radius is not None and np.max(np.abs(x)) > radius * (1 + 1e-9):
        raise StructuralError("characteristic line leaves the working disc")
    ph = np.exp(1j * theta)
    b0x = b0(x)
    v1 = ph * star.u1(x) / b0x
    v2 = ph ** 2 * star.u2(x) / b0x
    mask = triangle_mask(J)
    betas = []
    for p, coeffs in zip((1, 2, 3), star.alpha):
        vals = _eval_borel_rows(coeffs, x, t, theta) * (ph ** p / b0x)[..., None]
        betas.append(np.where(mask, vals, 0.0))
    M = float(max(np.max(np.abs(v1)), np.max(np.abs(v2)), 1e-300))
    Lfit = 0.0
    for b in betas:
        row = np.max(np.abs(b), axis=(0, 1))
        C1, C2 = fit_exponential(t, row)
        M = max(M, C1)
        Lfit = max(Lfit, C2)
    return StripProblem(v1, v2, betas[0], betas[1], betas[2], step, theta, rho, z0, x,
                        delta=step, fundamental=(M, Lfit))


# ---------------------------------------------------------------------------
# strip solver
# ---------------------------------------------------------------------------

class _Triangle:
    """Index bookkeeping for the anti-diagonal integral operator."""

    def __init__(self, J):
        d, l = np.meshgrid(np.arange(J + 1), np.arange(J + 1), indexing="ij")
        valid = l <= d
        self.J = J
        self.d = d[valid]
        self.l = l[valid]
        self.i = self.d - self.l
        self.mask = triangle_mask(J)

    def integrate(self, F, h):
        """``I(F)(z, r) = -int_0^r F(z + r - u, u) du`` on every line."""
        L = F.shape[0]
        n = self.J + 1
        A = np.zeros((L, n, n), complex)
        A[:, self.d, self.l] = F[:, self.i, self.l]
        C = h * (np.cumsum(A, axis=2) - 0.5 * A[:, :, :1] - 0.5 * A)
        C[:, :, 0] = 0.0
        out = np.zeros((L, n, n), complex)
        out[:, self.i, self.l] = -C[:, self.d, self.l]
        return out


@dataclass(frozen=True, eq=False)
class StripSolution:
    tau: np.ndarray     # (L, J+1, J+1), zero outside the triangle
    terms: int
    residual: float
    exp_fit: list       # per line (C1, C2) for tau(z0, r)
    partial_sizes: list
    partial_terms: list | None = None


def solve_strip_pde(p: StripProblem, tol=TERM_TOL, max_terms=MAX_TERMS, keep_terms=False,
                    chunk=None) -> StripSolution:
    """Sum the graded successive approximations on every line of ``p``.

    ``tau_1 = I(beta0)`` and
    ``tau_n = I(v1 tau_{n-1} + beta1*tau_{n-2} + v2 S_{n-2} + beta2*S_{n-3})``.
    Row convolutions are done by FFT on a zero-padded grid, so the Fourier
    transforms of all terms are kept to build ``S_m = sum tau_i*tau_j``.
    """
    J = p.J
    if chunk is None:
        chunk = max(1, CHUNK_ELEMENTS // ((J + 1) * 2 * (J + 1)))
    parts = []
    for start in range(0, p.L, chunk):
        sl = slice(start, start + chunk)
        parts.append(_solve_strip_lines(p, sl, tol, max_terms, keep_terms))
    tau = np.concatenate([q[0] for q in parts])
    terms = max(q[1] for q in parts)
    sizes = [q[2] for q in parts]
    kept = None
    if keep_terms:
        kept = [np.concatenate([q[3][n] if n < len(q[3]) else np.zeros_like(q[3][0])
                                for q in parts]) for n in range(max(len(q[3]) for q in parts))]
    res = strip_residual(p, tau)
    r = np.arange(J + 1) * p.step
    fits = [fit_exponential(r, tau[k, 0]) for k in range(p.L)]
    if res > 1e-6:
        raise ValidationError("strip integral equation residual too large", residual=res)
    return StripSolution(tau, terms, res, fits, sizes, kept)


def _solve_strip_lines(p, sl, tol, max_terms, keep_terms):
    J, h = p.J, p.step
    tri = _Triangle(J)
    mask = tri.mask
    size = 2 * (J + 1)
    fft = lambda a: np.fft.fft(a, size, axis=-1)
    ifft = lambda a: np.fft.ifft(a, axis=-1)[..., :J + 1]
    v1 = p.v1[sl][:, :, None]
    v2 = p.v2[sl][:, :, None]
    b0, b1, b2 = p.beta0[sl], p.beta1[sl], p.beta2[sl]
    B1 = fft(b1)
    B2 = fft(b2)
    quad = bool(np.any(v2 != 0) or np.any(b2 != 0))
    lin1 = bool(np.any(b1 != 0))
    L = b0.shape[0]
    zero = np.zeros((L, J + 1, J + 1), complex)
    terms = [zero]
    That = [None]
    S_real = {0: zero, 1: zero}
    total = zero.copy()
    small = 0
    sizes = []
    converged = False
    for n in range(1, max_terms + 1):
        if n == 1:
            F = b0
        else:
            F = v1 * terms[n - 1]
            if lin1 and n >= 3:
                F = F + h * (ifft(B1 * That[n - 2]) - 0.5 * b1[:, :, :1] * terms[n - 2])
            if quad and n >= 3:
                F = F + v2 * S_real[n - 2]
            if quad and n >= 4:
                S = S_real[n - 3]
                F = F + h * (ifft(B2 * fft(S)) - 0.5 * b2[:, :, :1] * S)
        F = np.where(mask, F, 0.0)
        term = np.where(mask, tri.integrate(F, h), 0.0)
        terms.append(term)
        That.append(fft(term) if (lin1 or quad) else None)
        if quad:
            # S_n = sum_{i+j=n} tau_i * tau_j (tau_i(., 0) = 0, so no endpoint correction)
            acc = np.zeros_like(That[1]) if n >= 2 else None
            for i in range(1, (n + 1) // 2):
                acc = acc + 2 * That[i] * That[n - i]
            if n >= 2 and n % 2 == 0:
                acc = acc + That[n // 2] * That[n // 2]
            S_real[n] = np.where(mask, h * ifft(acc), 0.0) if n >= 2 else zero
        total = total + term
        sz = float(np.max(np.abs(term)))
        sizes.append(sz)
        scale = max(float(np.max(np.abs(total))), 1e-300)
        small = small + 1 if (sz <= tol * scale or sz == 0) else 0
        if small >= 3 or not np.any(total):
            converged = True
            break
        if not np.isfinite(sz):
            break
        if not keep_terms and n >= 4:
            terms[n - 3] = None
    if not converged:
        raise DivergenceError("strip iteration did not settle", terms=n, last_term=sizes[-1],
                              partial_sum=float(np.max(np.abs(total))))
    kept = [t for t in terms[1:]] if keep_terms else None
    return total, n, sizes, kept


def strip_integral_map(p: StripProblem, tau):
    """``I(beta0 + v1 tau + beta1*tau + v2 tau*tau + beta2*tau*tau)`` on the grid."""
    J, h = p.J, p.step
    tri = _Triangle(J)
    mask = tri.mask
    conv = lambda f, g: trapezoid_convolve(f, g, h)
    tt = np.where(mask, conv(tau, tau), 0.0)
    F = p.beta0 + p.v1[:, :, None] * tau + conv(p.beta1, tau) + p.v2[:, :, None] * tt \
        + conv(p.beta2, tt)
    F = np.where(mask, F, 0.0)
    return np.where(mask, tri.integrate(F, h), 0.0)


def strip_residual(p: StripProblem, tau) -> float:
    r = tau - strip_integral_map(p, tau)
    return float(np.max(np.abs(r)) / max(1.0, np.max(np.abs(tau))))


# ---------------------------------------------------------------------------
# Laplace transform
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LaplaceResult:
    values: np.ndarray
    tail_bound: np.ndarray
    germ_cut: float


def _germ_moments(coeffs, lam, r0):
    """``int_0^r0 exp(-lam r) sum_m c_m r**m dr`` with exact incomplete-gamma moments."""
    total = mpmath.mpc(0)
    lam_m = mpmath.mpc(lam)
    for m, c in enumerate(coeffs):
        if c == 0:
            continue
        mom = mpmath.gammainc(m + 1, 0, lam_m * r0) / lam_m ** (m + 1)
        total += mpmath.mpc(c) * mom
    return complex(total)


def germ_cut(coeffs, step, xi_max, quantum=4, radius=None):
    """Split point ``r0`` between the Taylor germ and the samples.

    Half the root-test radius of the germ, capped at half the grid, and snapped
    down to a multiple of ``quantum * step`` so that coarser Richardson grids
    still contain it. A declared infinite ``radius`` (entire germ) overrides
    the root test.
    """
    if radius is not None and math.isinf(radius):
        R = math.inf
    else:
        R = series_radius_estimate(np.asarray(coeffs))
    r0 = min(0.5 * R, 0.5 * xi_max)
    q = quantum * step
    return max(q, q * math.floor(r0 / q + 1e-9))


def laplace_samples(values, step, theta, eps, germ=None, r0=0.0, exp_fit=None,
                    richardson=True):
    """``exp(i theta) int_0^oo exp(-exp(i theta) r / eps) f(r) dr`` from ray samples.

    ``germ`` holds rotated Taylor coefficients of ``f`` in ``r`` used on
    ``[0, r0]``; samples cover ``[r0, J step]``. On the samples the exponential
    is integrated exactly against the piecewise-linear interpolant of ``f``
    (accurate even when ``|lam| h`` is not small), then Richardson-extrapolated
    against the every-other-sample rule.
    """
    values = np.asarray(values, complex)
    J = len(values) - 1
    ph = np.exp(1j * theta)
    eps = np.atleast_1d(np.asarray(eps, complex))
    j0 = int(round(r0 / step)) if germ is not None else 0
    out = np.zeros(len(eps), complex)
    tails = np.zeros(len(eps))
    r = np.arange(J + 1) * step
    for q, e in enumerate(eps):
        lam = ph / e
        if exp_fit is not None:
            C1, C2 = exp_fit
            if np.real(lam) <= C2 + DOMAIN_MARGIN:
                cosang = math.cos(float(np.angle(e)) - theta)
                raise DomainError("eps outside the Laplace domain for this direction",
                                  eps=complex(e), max_abs_eps=max(cosang, 0.0) / (C2 + DOMAIN_MARGIN))
            tails[q] = C1 * math.exp((C2 - np.real(lam)) * r[-1]) / (np.real(lam) - C2)
        acc = 0.0
        if germ is not None and j0 > 0:
            acc += _germ_moments(germ, lam, r0)
        acc += _exp_linear(values[j0:], r[j0], step, lam, richardson)
        out[q] = ph * acc
    return LaplaceResult(out, tails, r0)


def _exp_weights(mu):
    """Exact weights of ``int_0^1 exp(-mu s) ((1-s) f0 + s f1) ds``."""
    if abs(mu) < 1e-3:
        w0 = 0.5 - mu / 6 + mu ** 2 / 24 - mu ** 3 / 120
        w1 = 0.5 - mu / 3 + mu ** 2 / 8 - mu ** 3 / 30
        return w0, w1
    em = np.exp(-mu)
    return (mu - 1 + em) / mu ** 2, (1 - em - mu * em) / mu ** 2


def _exp_linear_once(f, start, h, lam):
    if len(f) < 2:
        return 0.0
    w0, w1 = _exp_weights(lam * h)
    decay = np.exp(-lam * (start + h * np.arange(len(f) - 1)))
    return h * np.sum(decay * (w0 * f[:-1] + w1 * f[1:]))


def _exp_linear(f, start, h, lam, richardson):
    t1 = _exp_linear_once(f, start, h, lam)
    if not richardson or (len(f) - 1) % 2 or len(f) < 5:
        return t1
    t2 = _exp_linear_once(f[::2], start, 2 * h, lam)
    return (4 * t1 - t2) / 3


def laplace(f, eps_samples, richardson=True):
    """Directional Laplace transform of a sampled Borel function.

    Returns a :class:`LaplaceResult`; ``tail_bound`` is the analytic bound on the
    part of the integral beyond the last sample.
    """
    if isinstance(f, BorelFunction):
        if f.grid is None:
            raise StructuralError("Laplace transform needs ray samples")
        fit = f.exp_fit or fit_exponential(f.r, f.grid)
        germ = f.rotated_taylor()
        xi_max = f.J * f.step
        r0 = (germ_cut(germ, f.step, xi_max, quantum=2, radius=f.taylor.radius)
              if len(germ) > 2 or math.isinf(f.taylor.radius) else 0.0)
        if np.isnan(f.taylor.radius) or f.taylor.radius <= 0:
            r0 = 0.0
        return laplace_samples(f.grid, f.step, f.direction, eps_samples,
                               germ=germ if r0 > 0 else None, r0=r0, exp_fit=fit,
                               richardson=richardson)
    raise StructuralError("laplace expects a BorelFunction")


# ---------------------------------------------------------------------------
# Borel-Pade oracle
# ---------------------------------------------------------------------------

def _pade_laplace(b, eps, theta, m):
    n = len(b) - 1 - m
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        p, q = pade(b, m, n)
    ph = np.exp(1j * theta)
    roots = np.roots(q.coeffs) if q.order > 0 else np.array([])
    lam = ph / eps
    if np.real(lam) <= 0:
        raise DomainError("eps outside the half plane of the direction", eps=eps)
    rmax = 60.0 / np.real(lam)
    for z in roots:
        rr = z / ph
        if rr.real >= -1e-12 and rr.real <= rmax and abs(rr.imag) <= 1e-3 * max(1.0, abs(rr)):
            raise PoleOnRayError("Pade pole on the Laplace ray", pole=complex(z))
    # Gauss-Laguerre in u = Re(lam) r keeps the exponential weight exact.
    u, wts = np.polynomial.laguerre.laggauss(120)
    lr = np.real(lam)
    r = u / lr
    zeta = ph * r
    f = p(zeta) / q(zeta) * np.exp(-1j * np.imag(lam) * r)
    return complex(ph * np.sum(wts * f) / lr)


def borel_pade_sum(a, eps, theta=0.0, x=None):
    """Borel-Pade sum of a formal series at ``eps``.

    Returns ``(value, error_estimate)``, the estimate being the gap between
    the two highest diagonal-ish Pade orders.
    """
    if isinstance(a, EpsExpansion):
        c = a.at_x(x) if x is not None else a.coeffs[:, 0]
    else:
        c = np.asarray(a, complex)
    if len(c) < 9:
        raise StructuralError("Borel-Pade needs at least 8 eps orders")
    if abs(c[0]) > 1e-12 * max(1.0, float(np.max(np.abs(c)))):
        raise HypothesisError("series must vanish at eps = 0")
    b = c[1:] / _factorials(len(c) - 1)
    if not np.any(b):
        return 0.0 + 0j, 0.0
    # normalise the germ to tame the Pade linear algebra
    scale = series_radius_estimate(b)
    scale = 1.0 if not np.isfinite(scale) or scale <= 0 else scale
    bn = b * scale ** np.arange(len(b))
    vals = []
    # exactly rational germs make the larger Pade systems singular; shorten until solvable
    for L in range(len(bn), 1, -1):
        try:
            vals.append(_pade_laplace(bn[:L], eps / scale, theta, (L - 1) // 2) * scale)
        except LinAlgError:
            continue
        if len(vals) == 2:
            break
    if not vals:
        raise ConvergenceError("no Pade approximant of the Borel germ is solvable")
    v1 = vals[0]
    return v1, abs(v1 - vals[-1])


# ---------------------------------------------------------------------------
# resummed Riccati solutions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RegularSolution:
    """Resummed solution sampled at finitely many eps, as x-series on ``|x| <= radius``.

    ``coeffs[q]`` are the Taylor coefficients in ``x`` of ``s(x, eps[q])``.
    """

    eps: np.ndarray
    coeffs: np.ndarray
    radius: float
    formal: EpsExpansion
    s1: XSeries
    directions: np.ndarray
    direction_of: np.ndarray
    gluing_error: float
    residual: float
    info: dict = field(default_factory=dict)

    def index(self, eps):
        k = np.nonzero(np.isclose(self.eps, eps, rtol=1e-12, atol=1e-15))[0]
        if len(k) == 0:
            raise DomainError("eps is not one of the resummed samples", eps=complex(eps))
        return int(k[0])

    def at(self, eps) -> XSeries:
        return XSeries(self.coeffs[self.index(eps)], self.radius)

    def __call__(self, x, eps):
        return self.at(eps)(x)


def _line_germs(formal: EpsExpansion, x0, theta, K):
    """Rotated Borel germ of ``s* = s - eps s1`` at every line start."""
    c = np.polynomial.polynomial.polyval(x0, formal.coeffs[:K + 1].T).T  # (L, K+1)
    germ = np.zeros((len(x0), K), complex)
    germ[:, 1:] = c[:, 2:K + 1] / _factorials(K)[1:K]
    return germ * np.exp(1j * theta * np.arange(K))


def resum_star_on_lines(p: RiccatiProblem, star, formal, theta, x0, eps, step, xi_max,
                        richardson=True):
    """``s*(x0, eps)`` for every line start and eps, with diagnostics."""
    K = formal.K
    germs = _line_germs(formal, x0, theta, K)

    def one(h):
        sp = straighten(star, theta, x_starts=x0, step=h, xi_max=xi_max)
        sol = solve_strip_pde(sp)
        return sp, sol

    sp, sol = one(step)
    vals = np.zeros((len(x0), len(eps)), complex)
    tails = np.zeros((len(x0), len(eps)))
    cuts = []
    quantum = 4 if richardson else 2
    for k in range(len(x0)):
        r0 = germ_cut(germs[k], step, xi_max, quantum)
        cuts.append(r0)
        res = laplace_samples(sol.tau[k, 0], step, theta, eps, germ=germs[k], r0=r0,
                              exp_fit=sol.exp_fit[k])
        vals[k] = res.values
        tails[k] = res.tail_bound
    info = {"terms": sol.terms, "strip_residual": sol.residual,
            "exp_fit": sol.exp_fit, "germ_cut": cuts, "fundamental": sp.fundamental}
    if richardson:
        sp2, sol2 = one(2 * step)
        coarse = np.zeros_like(vals)
        for k in range(len(x0)):
            res = laplace_samples(sol2.tau[k, 0], 2 * step, theta, eps, germ=germs[k],
                                  r0=cuts[k], exp_fit=sol2.exp_fit[k])
            coarse[k] = res.values
        info["richardson_gap"] = float(np.max(np.abs(vals - coarse)))
        vals = (4 * vals - coarse) / 3
    info["tail_bound"] = float(np.max(tails)) if tails.size else 0.0
    return vals, info


def default_eps_samples(arc: ArcSpec, mags=(0.1, 0.05, 0.02)):
    mid = 0.5 * (arc.theta_minus + arc.theta_plus)
    return np.array([m * np.exp(1j * mid) for m in mags])


def resum_riccati(p: RiccatiProblem, arc: ArcSpec | None = None, eps_samples=None,
                  lines=DEFAULT_LINES, step=DEFAULT_STEP, xi_max=DEFAULT_XI_MAX,
                  borel_order=DEFAULT_BOREL_ORDER, radius_fraction=0.8,
                  richardson=True, check=True) -> RegularSolution:
    """Borel-Laplace sum of the formal solution, glued across directions.

    ``s = eps s1 + s*``; ``s*`` is computed on ``|x| = radius_fraction * r``
    from the strip problem of every direction and turned into x-series by a
    discrete Cauchy integral. Each eps is served by the direction nearest to
    its argument; neighbouring directions are compared on shared samples.
    """
    arc = arc or p.theta_arc
    eps = default_eps_samples(arc) if eps_samples is None else np.atleast_1d(
        np.asarray(eps_samples, complex))
    try:
        pK = p if p.K >= borel_order else p.resized(K=borel_order)
        formal = solve_formal_riccati(pK)
        radius = working_radius(pK.b0(), pK.radius)
        star = star_equation(pK)
    except Sps2Error as e:
        e.stage = e.stage or "formal"
        raise
    rc = radius_fraction * radius
    x0 = circle_points(rc, lines)
    dirs = arc.directions()
    for th in dirs:
        if np.real(np.exp(-1j * th) * star.b0.coeffs[0]) >= 0:
            raise ResonanceError("resonant direction inside the arc", theta=float(th))
    d_of = np.array([int(np.argmin(np.abs(np.angle(np.exp(1j * (np.angle(e) - dirs))))))
                     for e in eps])
    star_vals = np.zeros((len(x0), len(eps)), complex)
    by_dir = {}
    infos = []
    for d, th in enumerate(dirs):
        need = np.nonzero(d_of == d)[0]
        # neighbours share samples for the gluing comparison
        extra = [q for q in range(len(eps))
                 if abs(d_of[q] - d) == 1 and _admissible(eps[q], th)]
        use = sorted(set(need.tolist()) | set(extra))
        if not use:
            continue
        vals, info = resum_star_on_lines(pK, star, formal, float(th), x0, eps[use], step,
                                         xi_max, richardson)
        infos.append(info)
        for col, q in enumerate(use):
            by_dir[(d, q)] = vals[:, col]
        for q in need:
            star_vals[:, q] = by_dir[(d, q)]
    glue = 0.0
    for (d, q), v in by_dir.items():
        if d_of[q] != d:
            glue = max(glue, float(np.max(np.abs(v - by_dir[(d_of[q], q)]))))
    coeffs = np.zeros((len(eps), lines), complex)
    s1 = star.s1
    for q, e in enumerate(eps):
        cs = xseries_from_samples(star_vals[:, q], rc)
        s1c = np.zeros(lines, complex)
        m = min(lines, len(s1.coeffs))
        s1c[:m] = s1.coeffs[:m]
        coeffs[q] = e * s1c + cs
    sol = RegularSolution(eps, coeffs, rc, formal, s1, dirs, d_of, glue, 0.0,
                          {"lines": infos, "radius": radius})
    res = riccati_solution_residual(p, sol)
    sol = RegularSolution(eps, coeffs, rc, formal, s1, dirs, d_of, glue, res, sol.info)
    if check and res > 1e-5:
        raise ValidationError("resummed Riccati residual too large", residual=res,
                              stage="resum")
    return sol


def _admissible(eps, theta):
    return math.cos(float(np.angle(eps)) - float(theta)) > 0.2


def riccati_solution_residual(p: RiccatiProblem, sol: RegularSolution, fraction=0.6,
                              n=24) -> float:
    """Relative sup of ``eps x s' - (a + b s + c s^2)`` on ``|x| <= fraction * radius``."""
    worst = 0.0
    pts = np.concatenate([circle_points(fraction * sol.radius, n),
                          circle_points(0.5 * fraction * sol.radius, n)])
    for q, e in enumerate(sol.eps):
        s = XSeries(sol.coeffs[q], sol.radius)
        sv = s(pts)
        dv = e * pts * s.derivative()(pts)
        a, b, c = p.evaluate(pts, e)
        terms = [dv, a, b * sv, c * sv * sv]
        scale = max(max(float(np.max(np.abs(t))) for t in terms), 1e-300)
        r = dv - (a + b * sv + c * sv * sv)
        worst = max(worst, float(np.max(np.abs(r))) / scale)
    return worst
