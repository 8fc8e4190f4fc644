"""Triangularisation, explicit solution bases and Levelt frames.

Everything here is computed at finitely many sampled values of eps, as
x-series on the disc ``|x| <= radius`` produced by the resummation step.

The system is ``eps x psi' + A psi = 0``. After the gauge ``G = G2 G1 P`` it
becomes ``Lambda + U`` with ``U = [[0, u], [0, 0]]`` and
``psi = G^{-1} phi``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .borel_laplace import DEFAULT_BOREL_ORDER, DEFAULT_LINES, RegularSolution, resum_riccati
from .errors import (HypothesisError, Sps2Error, StructuralError, ValidationError)
from .formal_solver import RiccatiProblem
from .matrix_system import (SpectralData, SystemSpec, classical_data, pre_diagonalise_full,
                            xmat_eval, xmat_mul)
from .series_core import ArcSpec, EpsExpansion, XSeries, circle_points, xseries_from_samples

TRIANGULAR_TOL = 1e-5
FRAME_TOL = 1e-5
X0_ANGLE_TOL = 1e-6
EPS0_ANGLE_TOL = 1e-3
RESONANCE_TUBE = 1e-6
RECURSION_SWITCH = 25.0
CAUCHY_POINTS = 256


def _pad(c, n):
    out = np.zeros(n, complex)
    m = min(n, len(c))
    out[:m] = c[:m]
    return out


def _series_at_eps(E: EpsExpansion, eps, n):
    return _pad(E.at_eps(eps).coeffs, n)


def vector_angle(u, v):
    """Angle between the complex lines spanned by two 2-vectors (last axis)."""
    u = np.asarray(u, complex)
    v = np.asarray(v, complex)
    cross = np.abs(u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0])
    nrm = np.linalg.norm(u, axis=-1) * np.linalg.norm(v, axis=-1)
    return np.arcsin(np.clip(cross / nrm, 0.0, 1.0))


def xmat_inv(G):
    """Inverse of a 2x2 matrix of x-series."""
    n = G.shape[-1]
    det = np.convolve(G[0, 0], G[1, 1])[:n] - np.convolve(G[0, 1], G[1, 0])[:n]
    inv_det = XSeries(det, 1.0).reciprocal().coeffs
    adj = np.array([[G[1, 1], -G[0, 1]], [-G[1, 0], G[0, 0]]])
    return np.array([[np.convolve(adj[i, j], inv_det)[:n] for j in range(2)] for i in range(2)])


# ---------------------------------------------------------------------------
# triangular systems
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TriangularSystem:
    """``Lambda + [[0, u], [0, 0]]`` at sampled eps.

    Parameters
    ----------
    eps : ndarray
        Sampled eps values.
    nu : ndarray, shape (n_eps, 2)
        ``nu_i(eps) = lambda_i(0, eps)``.
    mu : ndarray, shape (2, n)
        x-series of ``mu_i`` with ``lambda_i = nu_i + x mu_i(x)``.
    u : ndarray, shape (n_eps, n)
        x-series of the upper-right entry.
    radius : float
    basepoint : complex
        Normalisation point on the boundary circle.
    """

    eps: np.ndarray
    nu: np.ndarray
    mu: np.ndarray
    u: np.ndarray
    radius: float
    basepoint: complex
    spectral: SpectralData | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        scale = max(1.0, float(np.max(np.abs(self.u))) if self.u.size else 1.0)
        if self.u.size and np.max(np.abs(self.u[:, 0])) > 1e-9 * scale:
            raise HypothesisError("u(0, eps) must vanish")

    @property
    def n(self):
        return self.u.shape[-1]

    def index(self, eps):
        k = np.nonzero(np.isclose(self.eps, eps, rtol=1e-12, atol=1e-15))[0]
        if len(k) == 0:
            raise StructuralError("eps is not one of the sampled values", eps=complex(eps))
        return int(k[0])

    def u_series(self, eps) -> XSeries:
        return XSeries(self.u[self.index(eps)], self.radius)

    def lam_series(self, eps, i) -> XSeries:
        q = self.index(eps)
        c = np.zeros(self.n, complex)
        c[0] = self.nu[q, i]
        c[1:] = self.mu[i, :self.n - 1]
        return XSeries(c, self.radius)

    def mu12(self) -> XSeries:
        return XSeries(self.mu[0] - self.mu[1], self.radius)

    def nu12(self, eps) -> complex:
        q = self.index(eps)
        return complex(self.nu[q, 0] - self.nu[q, 1])

    def matrix(self, x, eps):
        x = np.asarray(x, complex)
        out = np.zeros(x.shape + (2, 2), complex)
        out[..., 0, 0] = self.lam_series(eps, 0)(x)
        out[..., 1, 1] = self.lam_series(eps, 1)(x)
        out[..., 0, 1] = self.u_series(eps)(x)
        return out


@dataclass(frozen=True, eq=False)
class TriangularGauge:
    """``G = G2 G1 P`` as x-series matrices at each sampled eps."""

    eps: np.ndarray
    G: np.ndarray       # (n_eps, 2, 2, n)
    P: np.ndarray
    s: np.ndarray       # (n_eps, n) Riccati solution
    g: np.ndarray       # (n_eps, 2, n) diagonal factors
    radius: float
    residual: float
    conventions: dict = field(default_factory=dict)

    def index(self, eps):
        k = np.nonzero(np.isclose(self.eps, eps, rtol=1e-12, atol=1e-15))[0]
        if len(k) == 0:
            raise StructuralError("eps is not one of the sampled values", eps=complex(eps))
        return int(k[0])

    def at(self, eps):
        return self.G[self.index(eps)]

    def inverse(self, eps):
        return xmat_inv(self.at(eps))

    def __call__(self, x, eps):
        return xmat_eval(self.at(eps), x)


def triangular_riccati(A: np.ndarray, radius, arc) -> RiccatiProblem:
    """``eps x s' = a21 + (a11 - a22) s - a12 s**2`` from a pre-diagonalised array."""
    a = EpsExpansion(A[1, 0], radius, arc)
    b = EpsExpansion(A[0, 0] - A[1, 1], radius, arc)
    c = EpsExpansion(-A[0, 1], radius, arc)
    return RiccatiProblem(a, b, c, arc)


def triangularise(sys: SystemSpec, eps_samples=None, lines=DEFAULT_LINES,
                  borel_order=DEFAULT_BOREL_ORDER, check=True, **resum_kw):
    """Gauge the system to ``Lambda + U`` at the given eps samples.

    ``G1 = [[1, 0], [s, 1]]`` with ``s`` the resummed Riccati solution;
    ``G2 = diag(g11, g22)`` with ``eps x g_ii' = v_ii g_ii`` and
    ``g_ii(x*) = 1`` at ``x* = radius``. Returns ``(G, T)``.
    """
    work = sys.resized(max(sys.K, borel_order), lines - 1)
    try:
        pd = pre_diagonalise_full(work)
    except Sps2Error as e:
        e.stage = e.stage or "pre_diagonalise"
        raise
    Ap = pd.system.array
    arc = sys.arc
    p = triangular_riccati(Ap, pd.radius, arc)
    try:
        sol = resum_riccati(p, arc, eps_samples, lines=lines, borel_order=borel_order,
                            check=check, **resum_kw)
    except Sps2Error as e:
        e.stage = e.stage or "resum"
        raise
    rc = sol.radius
    n = lines
    xstar = complex(rc)
    sd = pd.spectral
    eps = sol.eps
    Gs, Ps, us, gs = [], [], [], []
    nus = np.zeros((len(eps), 2), complex)
    for q, e in enumerate(eps):
        s = _pad(sol.coeffs[q], n)
        a = [[_series_at_eps(EpsExpansion(Ap[i, j], pd.radius, arc), e, n) for j in range(2)]
             for i in range(2)]
        lam = [_series_at_eps(l, e, n) for l in sd.lambdas]
        conv = lambda f, g: np.convolve(f, g)[:n]
        v11 = a[0][0] - lam[0] - conv(a[0][1], s)
        v22 = a[1][1] - lam[1] + conv(a[0][1], s)
        g = []
        for v in (v11, v22):
            Phi = XSeries(v / e, rc).log_integral()
            g.append((Phi - Phi(xstar)).exp().coeffs)
        u = conv(conv(a[0][1], g[0]), XSeries(g[1], rc).reciprocal().coeffs)
        P = np.array([[_series_at_eps(EpsExpansion(pd.gauge.array[i, j], pd.radius, arc), e, n)
                       for j in range(2)] for i in range(2)])
        G1 = np.zeros((2, 2, n), complex)
        G1[0, 0, 0] = G1[1, 1, 0] = 1.0
        G1[1, 0] = s
        G2 = np.zeros((2, 2, n), complex)
        G2[0, 0], G2[1, 1] = g
        Gs.append(xmat_mul(G2, xmat_mul(G1, P)))
        Ps.append(P)
        us.append(u)
        gs.append(np.array(g))
        nus[q] = [lam[0][0], lam[1][0]]
    mu = np.array([_pad(m.coeffs, n) for m in (sd.mu1, sd.mu2)])
    T = TriangularSystem(eps, nus, mu, np.array(us), rc, xstar, sd,
                         {"riccati": sol, "pre": pd})
    res = triangular_gauge_residual(sys, T, np.array(Gs))
    conventions = {"gauge_action": "G A G^-1 - eps x G' G^-1",
                   "diagonal_factor": "eps x g_ii' = v_ii g_ii, g_ii(x*) = 1"}
    G = TriangularGauge(eps, np.array(Gs), np.array(Ps), sol.coeffs, np.array(gs), rc, res,
                        conventions)
    if check and res > TRIANGULAR_TOL:
        raise ValidationError("triangularisation residual too large", residual=res,
                              stage="triangularise")
    return G, T


def triangular_gauge_residual(sys: SystemSpec, T: TriangularSystem, G, fraction=0.6, m=24):
    """Relative sup of ``eps x G' - G A + (Lambda + U) G`` on two circles inside the disc."""
    pts = np.concatenate([circle_points(fraction * T.radius, m),
                          circle_points(0.5 * fraction * T.radius, m)])
    worst = 0.0
    for q, e in enumerate(T.eps):
        Gq = G[q]
        Gv = xmat_eval(Gq, pts)
        dG = xmat_eval(Gq * np.arange(Gq.shape[-1]), pts) * e
        A = sys(pts, e)
        TA = T.matrix(pts, e)
        terms = [dG, Gv @ A, TA @ Gv]
        scale = max(float(np.max(np.abs(t))) for t in terms)
        r = dG - Gv @ A + TA @ Gv
        worst = max(worst, float(np.max(np.abs(r))) / scale)
    return worst


# ---------------------------------------------------------------------------
# flow integrals and the coupling c12
# ---------------------------------------------------------------------------

def _log_path(x, xstar):
    x = np.asarray(x, complex)
    if np.any(x == 0):
        raise StructuralError("integration path runs through x = 0")
    return np.log(x) - np.log(complex(xstar))


def flow_integrals(T: TriangularSystem, eps, x, basepoint=None, log=False):
    """``f_i = exp(-int_{x*}^x lambda_i dt / (eps t))`` and ``f_ij = f_i / f_j``.

    With ``lambda_i = nu_i + x mu_i`` this is
    ``(x/x*)**(-nu_i/eps) exp(-(M_i(x) - M_i(x*)) / eps)``, ``M_i = int_0^x mu_i``,
    with the principal branch of ``log x``. ``log=True`` returns the logarithms.
    """
    xstar = T.basepoint if basepoint is None else basepoint
    q = T.index(eps)
    L = _log_path(x, xstar)
    logs = []
    for i in range(2):
        M = XSeries(T.mu[i], T.radius).integral()
        logs.append(-(T.nu[q, i] / eps) * L - (M(x) - M(xstar)) / eps)
    l1, l2 = logs
    if log:
        return l1, l2, l1 - l2, l2 - l1
    return np.exp(l1), np.exp(l2), np.exp(l1 - l2), np.exp(l2 - l1)


@dataclass(frozen=True, eq=False)
class Coupling:
    """``c12`` at one eps; solves ``eps x c' + lambda_12 c = -u`` with ``c(0) = 0``.

    ``c12(x) = regular(x) + log_coeff * E(x) x**(N+1) log x`` where the second
    term is present only at resonance ``nu12/eps = -(N+1)``.
    """

    eps: complex
    nu12: complex
    radius: float
    route: str
    regular: np.ndarray
    resonant: bool = False
    log_order: int | None = None
    log_coeff: complex = 0.0
    E: XSeries | None = None
    ghat: np.ndarray | None = None

    def __call__(self, x):
        x = np.asarray(x, complex)
        val = XSeries(self.regular, self.radius)(x)
        if self.resonant and self.log_coeff != 0:
            val = val + self.log_coeff * self.E(x) * x ** (self.log_order + 1) * np.log(x)
        return val

    def series(self) -> XSeries:
        if self.resonant and self.log_coeff != 0:
            raise StructuralError("coupling carries a logarithm; no power series")
        return XSeries(self.regular, self.radius)

    def derivative(self, x, delta=1e-3):
        """Radial five-point derivative (used for the log branch)."""
        x = np.asarray(x, complex)
        h = x * delta
        f = lambda t: self(t)
        return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h)


def resonant_index(ratio, n, tube=RESONANCE_TUBE):
    """``N`` with ``|ratio + N + 1| < tube`` for ``0 <= N < n``, else ``None``."""
    for N in range(n):
        if abs(ratio + N + 1) < tube:
            return N
    return None


def coupling_c12(T: TriangularSystem, eps, route="auto", points=CAUCHY_POINTS) -> Coupling:
    """Coupling entry of the second solution for the triangular system at ``eps``.

    Series route: with ``E = exp(-int_0^x mu_12 / eps)`` and
    ``ghat(t) = u(t) / (eps t E(t))`` (Taylor coefficients by a discrete Cauchy
    integral on ``|t| = radius``)
    ``c12 = -E(x) x sum_n ghat_n x**n / (n + 1 + nu12/eps)``.
    At ``nu12/eps = -(N+1)`` the ``N`` term becomes ``-E ghat_N x**(N+1) log x``.

    Recursion route: ``(eps n + nu12) c_n = -u_n - sum_{m>=1} mu12_{m-1} c_{n-m}``;
    used when ``|int mu_12 / eps|`` is too large for ``E`` to be sampled
    accurately.
    """
    q = T.index(eps)
    nu = T.nu12(eps)
    ratio = nu / eps
    n = T.n
    r = T.radius
    u = T.u[q]
    mu12 = T.mu12()
    Phi = mu12.integral()
    pts = circle_points(r, points)
    size = float(np.max(np.abs(Phi(pts) / eps)))
    N = resonant_index(ratio, n)
    if route == "auto":
        route = "series" if (size <= RECURSION_SWITCH or N is not None) else "recursion"
    if route == "recursion":
        if N is not None:
            raise StructuralError("recursion route cannot carry the log branch")
        lam = np.zeros(n, complex)
        lam[0] = nu
        lam[1:] = mu12.coeffs[:n - 1]
        c = np.zeros(n, complex)
        for k in range(1, n):
            c[k] = (-u[k] - np.dot(lam[1:k + 1], c[k - 1::-1])) / (eps * k + nu)
        return Coupling(eps, nu, r, "recursion", c)
    E = (Phi * (-1.0 / eps)).exp()
    uv = XSeries(u, r)(pts)
    ghat = xseries_from_samples(uv / (eps * pts * E(pts)), r, n - 1)
    denom = np.arange(n) + 1 + ratio
    H = np.zeros(n, complex)
    log_coeff = 0.0
    resonant = False
    for k in range(n):
        if N is not None and k == N:
            if abs(ghat[k]) > 1e-10:
                resonant = True
                log_coeff = -ghat[k]
            continue
        H[k] = -ghat[k] / denom[k]
    xH = np.zeros(n, complex)
    xH[1:] = H[:n - 1]
    regular = np.convolve(E.coeffs, xH)[:n]
    return Coupling(eps, nu, r, "series", regular, resonant, N, complex(log_coeff), E, ghat)


def coupling_from_basepoint(T: TriangularSystem, eps, c: Coupling, xstar, x, nodes=64):
    """``f12(x) [c12(x*) - int_{x*}^x f21 u dt/(eps t)]`` along the straight path."""
    gl, gw = np.polynomial.legendre.leggauss(nodes)
    x = np.atleast_1d(np.asarray(x, complex))
    out = np.zeros(len(x), complex)
    us = T.u_series(eps)
    for k, xe in enumerate(x):
        s = 0.5 * (gl + 1)
        t = xstar + s * (xe - xstar)
        dt = 0.5 * (xe - xstar)
        _, _, _, f21 = flow_integrals(T, eps, t, basepoint=xstar)
        integral = np.sum(gw * f21 * us(t) / (eps * t)) * dt
        _, _, f12, _ = flow_integrals(T, eps, xe, basepoint=xstar)
        out[k] = f12 * (c(xstar) - integral)
    return out


def vanishing_bounds(T: TriangularSystem, couplings=None, fraction=0.9, m=32, rings=6):
    """Fitted constants of ``|c12| <= kappa |x|`` and ``|c12| <= kappa' |eps|`` on the grid."""
    couplings = couplings or [coupling_c12(T, e) for e in T.eps]
    radii = fraction * T.radius * np.geomspace(1e-3, 1.0, rings)
    pts = np.concatenate([circle_points(rr, m) for rr in radii])
    kx = ke = 0.0
    for c in couplings:
        vals = np.abs(c(pts))
        kx = max(kx, float(np.max(vals / np.abs(pts))))
        ke = max(ke, float(np.max(vals)) / abs(c.eps))
    return kx, ke


# ---------------------------------------------------------------------------
# solution bases
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SolutionBasis:
    """``phi1 = f1 e1`` and ``phi2 = f2 (e2 + c12 e1)`` on sample points, in log form."""

    x: np.ndarray
    eps: complex
    log_f1: np.ndarray
    log_f2: np.ndarray
    c12: np.ndarray

    @property
    def phi1(self):
        out = np.zeros((2,) + self.x.shape, complex)
        out[0] = np.exp(self.log_f1)
        return out

    @property
    def phi2(self):
        f2 = np.exp(self.log_f2)
        return np.array([f2 * self.c12, f2])

    def log_norms(self):
        n1 = np.real(self.log_f1)
        n2 = np.real(self.log_f2) + 0.5 * np.log1p(np.abs(self.c12) ** 2)
        return n1, n2

    def growth_exponents(self):
        """Slopes of ``log|phi_i|`` against ``log|x|``."""
        lx = np.log(np.abs(self.x))
        n1, n2 = self.log_norms()
        return float(np.polyfit(lx, n1, 1)[0]), float(np.polyfit(lx, n2, 1)[0])


def growth_rays(radius, decades=(1e-4, 1e-2), n=24, arg=0.0):
    return radius * np.geomspace(*decades, n) * np.exp(1j * arg)


def solution_basis(T: TriangularSystem, eps, x=None, coupling=None, check=True):
    """Explicit basis of the triangular system at ``eps`` on the points ``x``.

    The residual of ``eps x phi' + (Lambda + U) phi`` is measured with radial
    five-point differences of ``log f_i`` and ``c12`` and must stay below 1e-6.
    """
    x = growth_rays(T.radius) if x is None else np.atleast_1d(np.asarray(x, complex))
    c = coupling or coupling_c12(T, eps)
    l1, l2, _, _ = flow_integrals(T, eps, x, log=True)
    basis = SolutionBasis(x, eps, l1, l2, c(x))
    if check:
        res = solution_basis_residual(T, eps, x, c)
        if res > 1e-6:
            raise ValidationError("solution basis residual too large", residual=res)
    return basis


def solution_basis_residual(T, eps, x, c, delta=1e-3):
    x = np.asarray(x, complex)

    def d(f):
        h = x * delta
        return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h)

    lam1 = T.lam_series(eps, 0)(x)
    lam2 = T.lam_series(eps, 1)(x)
    u = T.u_series(eps)(x)
    logf = lambda i: (lambda t: flow_integrals(T, eps, t, log=True)[i])
    r1 = np.abs(eps * x * d(logf(0)) + lam1) / np.maximum(np.abs(lam1), 1e-300)
    r2 = np.abs(eps * x * d(logf(1)) + lam2) / np.maximum(np.abs(lam2), 1e-300)
    cv = c(x)
    lhs = eps * x * d(c) + (lam1 - lam2) * cv + u
    scale = np.maximum(np.abs(u) + np.abs((lam1 - lam2) * cv), 1e-300)
    r3 = np.abs(lhs) / scale
    return float(max(np.max(r1), np.max(r2), np.max(r3[scale > 1e-250]) if np.any(scale > 1e-250) else 0.0))


# ---------------------------------------------------------------------------
# Levelt frames
# ---------------------------------------------------------------------------

def resonant_eps_values(spectral: SpectralData, arc: ArcSpec, sector_radius, n_max=50,
                        iters=60):
    """``eps = (nu2(eps) - nu1(eps)) / (n + 1)`` inside the sector, by fixed-point iteration."""
    lo, hi = arc.hat_extension
    out = []
    for n in range(n_max):
        e = (spectral.m2 - spectral.m1) / (n + 1)
        if abs(e) >= sector_radius:
            continue
        ok = True
        for _ in range(iters):
            if abs(e) >= sector_radius:
                ok = False
                break
            nu1, nu2 = spectral.nu(e)
            e_new = (nu2 - nu1) / (n + 1)
            if not np.isfinite(e_new):
                ok = False
                break
            if abs(e_new - e) < 1e-15 * max(1.0, abs(e)):
                e = e_new
                break
            e = e_new
        if not ok or abs(e) >= sector_radius:
            continue
        a = float(np.angle(e))
        inside = any(lo - 1e-12 <= a + 2 * math.pi * k <= hi + 1e-12 for k in (-1, 0, 1))
        if inside:
            out.append(complex(e))
    return out


@dataclass(frozen=True, eq=False)
class LeveltFrame:
    """Frames ``e1, e2`` with ``psi_i = f_i e_i`` at the sampled eps.

    ``e1 = G^{-1} (1, 0)`` and ``e2 = G^{-1} ((0, 1) + c12 (1, 0))``; span(e1)
    is the slow (subdominant at ``x = 0``) line of the filtration.
    """

    eps: np.ndarray
    Ginv: np.ndarray          # (n_eps, 2, 2, n) x-series
    c12: list
    nu12: EpsExpansion
    resonant_eps: list
    radius: float
    triangular: TriangularSystem
    gauge: TriangularGauge
    checks: dict = field(default_factory=dict)

    def e1(self, x, eps):
        q = self.triangular.index(eps)
        return xmat_eval(self.Ginv[q], x)[..., :, 0]

    def e2(self, x, eps):
        q = self.triangular.index(eps)
        Gi = xmat_eval(self.Ginv[q], x)
        c = self.c12[q](x)
        return Gi[..., :, 1] + c[..., None] * Gi[..., :, 0] if np.ndim(c) else \
            Gi[..., :, 1] + c * Gi[..., :, 0]

    def quotient_generator(self, x, eps):
        """``e2`` with its component along ``e1`` removed."""
        a = self.e1(x, eps)
        b = self.e2(x, eps)
        proj = np.sum(np.conj(a) * b, axis=-1) / np.sum(np.abs(a) ** 2, axis=-1)
        return b - proj[..., None] * a

    def psi_log_norms(self, x, eps):
        T = self.triangular
        l1, l2, _, _ = flow_integrals(T, eps, x, log=True)
        n1 = np.real(l1) + np.log(np.linalg.norm(self.e1(x, eps), axis=-1))
        n2 = np.real(l2) + np.log(np.linalg.norm(self.e2(x, eps), axis=-1))
        return n1, n2

    def growth_exponents(self, eps, x=None):
        x = growth_rays(self.radius) if x is None else x
        n1, n2 = self.psi_log_norms(x, eps)
        lx = np.log(np.abs(x))
        return float(np.polyfit(lx, n1, 1)[0]), float(np.polyfit(lx, n2, 1)[0])


def _frame_residual(sys, T, frame, fraction=0.6, m=24):
    """Relative sup of ``eps x e_i' + A e_i - lambda_i e_i``."""
    pts = np.concatenate([circle_points(fraction * T.radius, m),
                          circle_points(0.5 * fraction * T.radius, m)])
    worst = 0.0
    for q, e in enumerate(T.eps):
        A = sys(pts, e)
        lam = [T.lam_series(e, i)(pts) for i in range(2)]
        Gi = frame.Ginv[q]
        c = frame.c12[q]
        n = Gi.shape[-1]
        if c.resonant and c.log_coeff != 0:
            cv, dc = c(pts), c.derivative(pts)
        else:
            cs = XSeries(_pad(c.regular, n), T.radius)
            cv, dc = cs(pts), cs.derivative()(pts)
        G0 = xmat_eval(Gi, pts)
        dG0 = xmat_eval(Gi[:, :, 1:] * np.arange(1, n), pts) if n > 1 else 0 * G0
        vecs = [(G0[..., :, 0], dG0[..., :, 0]),
                (G0[..., :, 1] + cv[:, None] * G0[..., :, 0],
                 dG0[..., :, 1] + dc[:, None] * G0[..., :, 0] + cv[:, None] * dG0[..., :, 0])]
        for i, (v, dv) in enumerate(vecs):
            lhs = e * pts[:, None] * dv
            Av = np.einsum("pij,pj->pi", A, v)
            r = lhs + Av - lam[i][:, None] * v
            scale = max(float(np.max(np.abs(lhs))), float(np.max(np.abs(Av))),
                        float(np.max(np.abs(lam[i][:, None] * v))))
            worst = max(worst, float(np.max(np.abs(r))) / scale)
    return worst


def frame_limit_angles(sys: SystemSpec, frame: LeveltFrame, x_points=None):
    """Angles against the eigenvector oracles.

    ``x0``: ``e_i(0, eps)`` against the eigenvectors of ``A(0, eps)`` paired by
    the eigenvalue nearest ``nu_i(eps)``. ``eps0``: ``e_i(x, eps_min)`` against
    the eigenvectors of ``A(x, 0)`` paired by nearness to ``m_i``'s branch.
    """
    T = frame.triangular
    x0 = []
    for q, e in enumerate(T.eps):
        w, V = np.linalg.eig(sys(0.0, e))
        for i, vec in enumerate((frame.e1(0.0, e), frame.e2(0.0, e))):
            k = int(np.argmin(np.abs(w - T.nu[q, i])))
            x0.append(float(vector_angle(vec, V[:, k])))
    q = int(np.argmin(np.abs(T.eps)))
    e = T.eps[q]
    x_points = circle_points(0.5 * T.radius, 8) if x_points is None else x_points
    cd = classical_data(sys)
    eps0 = []
    for xv in np.atleast_1d(x_points):
        w, V = np.linalg.eig(sys(xv, 0.0))
        for i, (vec, eta) in enumerate(((frame.e1(xv, e), cd.eta1), (frame.e2(xv, e), cd.eta2))):
            k = int(np.argmin(np.abs(w - eta(xv))))
            eps0.append(float(vector_angle(vec, V[:, k])))
    return {"x0": max(x0), "eps0": max(eps0), "eps_min": complex(e)}


def levelt_filtration(sys: SystemSpec, eps_samples=None, check=True, **kw) -> LeveltFrame:
    """Levelt frames of a generic nonresonant system at the sampled eps.

    Checks the frame equation ``eps x e_i' + A e_i = lambda_i e_i`` and the
    two limits (eigenvectors of ``A(0, eps)`` and of ``A(x, 0)``) and raises
    :class:`ValidationError` when any fails and ``check`` is set.
    """
    G, T = triangularise(sys, eps_samples, check=check, **kw)
    Ginv = np.array([xmat_inv(G.G[q]) for q in range(len(T.eps))])
    cs = [coupling_c12(T, e) for e in T.eps]
    sd = T.spectral
    nu12 = EpsExpansion(np.asarray((sd.lambda1 - sd.lambda2).coeffs[:, :1]), sd.lambda1.radius,
                        sys.arc)
    res_eps = resonant_eps_values(sd, sys.arc, sys.sector_radius)
    frame = LeveltFrame(T.eps, Ginv, cs, nu12, res_eps, T.radius, T, G)
    checks = {"triangular_residual": G.residual, "frame_residual": _frame_residual(sys, T, frame)}
    checks.update(frame_limit_angles(sys, frame))
    checks["exponents"] = [frame.growth_exponents(e) for e in T.eps]
    checks["expected_exponents"] = [(-float(np.real(T.nu[q, 0] / e)),
                                     -float(np.real(T.nu[q, 1] / e)))
                                    for q, e in enumerate(T.eps)]
    checks["kappa_x"], checks["kappa_eps"] = vanishing_bounds(T, cs)
    frame = LeveltFrame(T.eps, Ginv, cs, nu12, res_eps, T.radius, T, G, checks)
    if check:
        bad = []
        if checks["frame_residual"] > FRAME_TOL:
            bad.append("frame_residual")
        if checks["x0"] > X0_ANGLE_TOL:
            bad.append("x0")
        if checks["eps0"] > EPS0_ANGLE_TOL and abs(checks["eps_min"]) <= 1e-3 * (1 + 1e-9):
            bad.append("eps0")
        if bad:
            raise ValidationError("Levelt frame checks failed", failed=bad,
                                  **{k: checks[k] for k in ("frame_residual", "x0", "eps0")},
                                  stage="levelt")
    return frame
