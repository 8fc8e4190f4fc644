"""Order-by-order epsilon recursions.

* :func:`solve_formal_riccati` solves ``eps x s' = a + b s + c s**2`` with
  ``a_0 = c_0 = 0`` and ``b_0(0) != 0``.
* :func:`solve_formal_normal_form` builds the formal gauge to the diagonal
  normal form ``diag(lambda_1, lambda_2)``.
* :func:`majorant_sequence` evaluates the three majorant recursions used to
  certify factorial growth.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DivergenceError, HypothesisError, StructuralError
from .matrix_system import (GaugeTransform, SpectralData, SystemSpec, gauge_residual,
                            mat_eps_shift, mat_euler, mat_mul, pre_diagonalise_full)
from .series_core import ArcSpec, EpsExpansion, XSeries, eps_mul, euler_derivative

B0_FLOOR = 1e-10


@dataclass(frozen=True, eq=False)
class RiccatiProblem:
    """``eps x ds/dx = a + b s + c s**2``."""

    a: EpsExpansion
    b: EpsExpansion
    c: EpsExpansion
    theta_arc: ArcSpec = field(default_factory=ArcSpec)

    def __post_init__(self):
        shape = self.a.coeffs.shape
        if self.b.coeffs.shape != shape or self.c.coeffs.shape != shape:
            raise StructuralError("a, b, c must share truncation orders")
        scale = max(1.0, self.a.max_abs(), self.b.max_abs(), self.c.max_abs())
        if np.max(np.abs(self.a.coeffs[0])) > 1e-12 * scale:
            raise HypothesisError("a_0(x) must vanish")
        if np.max(np.abs(self.c.coeffs[0])) > 1e-12 * scale:
            raise HypothesisError("c_0(x) must vanish")
        if abs(self.b.coeffs[0, 0]) < B0_FLOOR:
            raise HypothesisError("b_0(0) must be nonzero")

    @property
    def rho(self) -> complex:
        return complex(self.b.coeffs[0, 0])

    @property
    def K(self):
        return self.a.K

    @property
    def N(self):
        return self.a.N

    @property
    def radius(self):
        return min(self.a.radius, self.b.radius, self.c.radius)

    def b0(self) -> XSeries:
        return self.b.order(0)

    def evaluate(self, x, eps):
        return self.a(x, eps), self.b(x, eps), self.c(x, eps)

    def resized(self, K=None, N=None):
        return RiccatiProblem(self.a.resized(K, N), self.b.resized(K, N), self.c.resized(K, N),
                              self.theta_arc)

    @classmethod
    def model(cls, K=16, N=24, radius=1.0, arc=None):
        """``a = eps x``, ``b = 1``, ``c = 0`` (closed form ``s = -eps x / (1 - eps)``)."""
        arc = arc or ArcSpec(math.pi, math.pi)
        a = EpsExpansion.from_terms({(1, 1): 1.0}, K, N, radius, arc)
        b = EpsExpansion.constant(1.0, K, N, radius, arc)
        c = EpsExpansion.zeros(K, N, radius, arc)
        return cls(a, b, c, arc)


def working_radius(b0: XSeries, radius: float, floor: float = 0.1) -> float:
    """Shrink ``radius`` so that ``b0`` has no zero on the closed disc."""
    c = b0.coeffs
    nz = np.nonzero(np.abs(c) > 1e-14 * np.max(np.abs(c)))[0]
    if len(nz) <= 1:
        return radius
    roots = np.polynomial.polynomial.polyroots(c[:nz[-1] + 1])
    inside = np.abs(roots)[np.abs(roots) <= radius]
    if len(inside) == 0:
        return radius
    r = 0.9 * float(np.min(inside))
    if r < floor * radius:
        raise ConvergenceError("b0 vanishes too close to the origin", radius=r)
    return r


def solve_formal_riccati(p: RiccatiProblem, K=None) -> EpsExpansion:
    """Formal solution ``s = sum_k s_k(x) eps**k`` with ``s_0 = 0`` and ``s_1 = -a_1 / b_0``.

    Order ``k`` of the equation reads
    ``x s_{k-1}' = a_k + sum_{i=0}^{k-1} b_i s_{k-i} + sum_{i+j+l=k} c_i s_j s_l``
    which is solved for ``s_k``.
    """
    K = p.K if K is None else min(K, p.K)
    n = p.N + 1
    radius = working_radius(p.b0(), p.radius)
    inv_b0 = p.b0().reciprocal().coeffs
    a, b, c = p.a.coeffs, p.b.coeffs, p.c.coeffs
    s = np.zeros((p.K + 1, n), complex)
    sq = np.zeros((p.K + 1, n), complex)  # sq[m] = sum_{j+l=m} s_j s_l
    ar = np.arange(n)

    def conv(u, v):
        return np.convolve(u, v)[:n]

    for k in range(1, K + 1):
        rhs = ar * s[k - 1] - a[k]
        for i in range(1, k):
            rhs -= conv(b[i], s[k - i])
        for i in range(1, k - 1):
            rhs -= conv(c[i], sq[k - i])
        s[k] = conv(inv_b0, rhs)
        # the square at order k+1 only needs s_1..s_k
        if k + 1 <= p.K:
            sq[k + 1] = sum(conv(s[j], s[k + 1 - j]) for j in range(1, k + 1))
    return EpsExpansion(s, radius, p.theta_arc)


def riccati_residual(p: RiccatiProblem, s: EpsExpansion) -> EpsExpansion:
    """``eps x s' - (a + b s + c s**2)``."""
    lhs = euler_derivative(s).shift(1)
    return lhs - (p.a + eps_mul(p.b, s) + eps_mul(p.c, eps_mul(s, s)))


def relative_order_residual(res, *terms):
    """Per-coefficient residual divided by the size of the terms at the same epsilon order."""
    scale = np.zeros(res.shape[-2])
    for t in terms:
        t = np.abs(t)
        scale = np.maximum(scale, t.reshape(-1, *t.shape[-2:]).max(axis=(0, 2)))
    scale = np.maximum(scale, 1e-300)
    r = np.abs(res).reshape(-1, *res.shape[-2:]).max(axis=(0, 2))
    return r / scale


# ---------------------------------------------------------------------------
# formal normal form
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FormalNormalForm:
    gauge: GaugeTransform
    spectral: SpectralData
    g12: EpsExpansion
    g21: EpsExpansion
    residual: np.ndarray          # absolute residual coefficients, (2, 2, K+1, N+1)
    relative_residual: np.ndarray  # per epsilon order
    K: int


def _riccati_from_entries(A, i, j, arc, radius):
    """Riccati problem for the off-diagonal unknown in row ``i``, column ``j``."""
    a = EpsExpansion(A[i][j], radius, arc)
    b = EpsExpansion(A[j][j] - A[i][i], radius, arc)
    c = EpsExpansion(-A[j][i], radius, arc)
    return RiccatiProblem(a, b, c, arc)


def solve_formal_normal_form(sys: SystemSpec, K=None):
    """Formal gauge ``G`` with ``eps x G' = G A - Lambda G`` through ``eps**K``.

    The system is first pre-diagonalised, then the unipotent factor
    ``[[1, g12], [g21, 1]]`` is found from two Riccati equations, and a final
    diagonal factor moves the resulting diagonal onto the spectral data.
    Returns ``(G, Lambda)``; see :func:`formal_normal_form` for the record.
    """
    r = formal_normal_form(sys, K)
    return r.gauge, r.spectral


def formal_normal_form(sys: SystemSpec, K=None) -> FormalNormalForm:
    K = sys.K if K is None else K
    work = sys.resized(K + 1)  # one spare order, consumed by the division by eps below
    pd = pre_diagonalise_full(work)
    Ap = pd.system.array
    arc = sys.arc
    radius = pd.radius
    Ae = [[Ap[i, j] for j in range(2)] for i in range(2)]
    g12 = solve_formal_riccati(_riccati_from_entries(Ae, 0, 1, arc, radius))
    g21 = solve_formal_riccati(_riccati_from_entries(Ae, 1, 0, arc, radius))
    a11, a12, a21, a22 = (EpsExpansion(Ap[i, j], radius, arc) for i, j in
                          ((0, 0), (0, 1), (1, 0), (1, 1)))
    dhat = (a11 + eps_mul(a21, g12), a22 + eps_mul(a12, g21))
    lams = pd.spectral.lambdas
    d = []
    for dh, lam in zip(dhat, lams):
        diff = (dh - lam).shift(-1, tol=1e-9 * max(1.0, dh.max_abs()))
        F = np.array([XSeries(row, radius).log_integral().coeffs for row in diff.coeffs])
        d.append(EpsExpansion(F, radius, arc).exp())
    G0 = np.zeros_like(Ap)
    G0[0, 0, 0, 0] = G0[1, 1, 0, 0] = 1.0
    G0[0, 1] = g12.coeffs
    G0[1, 0] = g21.coeffs
    D = np.zeros_like(Ap)
    D[0, 0] = d[0].coeffs
    D[1, 1] = d[1].coeffs
    G = mat_mul(mat_mul(D, G0), pd.gauge.array)[:, :, :K + 1]
    A = sys.resized(K).array
    lam_arr = pd.spectral.array()[:, :, :K + 1]
    res = gauge_residual(G, A, lam_arr)
    rel = relative_order_residual(res, mat_eps_shift(mat_euler(G), 1), mat_mul(G, A),
                                  mat_mul(lam_arr, G))
    spectral = _truncate_spectral(pd.spectral, K)
    gauge = GaugeTransform.from_array(G, "composite", radius, arc)
    return FormalNormalForm(gauge, spectral, g12.resized(K), g21.resized(K), res, rel, K)


def _truncate_spectral(sd: SpectralData, K):
    return SpectralData(sd.m1, sd.m2, sd.lambda1.resized(K), sd.lambda2.resized(K),
                        sd.kappa1.resized(K), sd.kappa2.resized(K), sd.mu1, sd.mu2)


# ---------------------------------------------------------------------------
# majorants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MajorantSequence:
    terms: tuple
    source: str
    geometric_fit: tuple = (0.0, 1.0)

    def __post_init__(self):
        if self.terms and self.terms[0] != 0:
            raise StructuralError("majorant sequences start with M_0 = 0")
        if any(t < 0 for t in self.terms):
            raise StructuralError("majorant terms must be nonnegative")


def fit_geometric(values, skip_zero=True):
    """``(C, M)`` with ``values[k] <= C M**k``, slope from a log least-squares fit."""
    v = np.asarray(values, float)
    k = np.arange(len(v))
    keep = v > 0 if skip_zero else np.ones_like(v, bool)
    if not np.any(keep):
        return (0.0, 1.0)
    y = np.log(v[keep])
    if keep.sum() >= 2:
        slope, icpt = np.polyfit(k[keep], y, 1)
    else:
        slope, icpt = 0.0, y[0]
    M = float(np.exp(slope))
    C = float(np.exp(max(icpt, np.max(y - k[keep] * slope))))
    return (C, M)


def majorant_sequence(A, B, A0, M, kind, K) -> MajorantSequence:
    """Evaluate one of the three majorant recursions up to index ``K``.

    ``quadratic``: ``M_k = A0 (A B^k + A sum B^i M_{k-i} + A sum sum B^i M_j M_{k-i-j})``.
    ``riccati``: as ``quadratic`` with ``M_{k-1}`` added inside the bracket
    (the derivative term of the Riccati recursion).
    ``borel``: ``M_n = M (M_{n-1} + M_{n-2} + sum_{i+j=n-2} M_i M_j + sum_{i+j=n-3} M_i M_j)``
    with ``M_1 = M``.
    """
    if kind not in ("quadratic", "riccati", "borel"):
        raise StructuralError(f"unknown majorant kind {kind!r}")
    if min(A, B, A0, M) < 0:
        raise StructuralError("majorant constants must be nonnegative")
    t = [0.0] * (K + 1)
    with np.errstate(over="raise"):
        for k in range(1, K + 1):
            if kind == "borel":
                if k == 1:
                    val = M
                else:
                    val = t[k - 1] + (t[k - 2] if k >= 2 else 0.0)
                    val += sum(t[i] * t[k - 2 - i] for i in range(0, k - 1))
                    if k >= 3:
                        val += sum(t[i] * t[k - 3 - i] for i in range(0, k - 2))
                    val *= M
            else:
                lin = sum(B ** i * t[k - i] for i in range(1, k))
                quad = sum(B ** i * t[j] * t[k - i - j]
                           for i in range(1, k) for j in range(1, k - i))
                val = A * B ** k + A * lin + A * quad
                if kind == "riccati":
                    val += t[k - 1]
                val *= A0
            if not math.isfinite(val):
                raise DivergenceError(f"majorant overflow at k={k}", k=k)
            t[k] = float(val)
    return MajorantSequence(tuple(t), kind, fit_geometric(t))


def fit_coefficient_bounds(*series: EpsExpansion):
    """``(A, B)`` with ``sup_x |f_k| <= A B**k`` for every given series and ``k >= 1``."""
    sups = np.max([s.sup_orders() for s in series], axis=0)
    v = sups.copy()
    v[0] = 0.0
    if not np.any(v > 0):
        return (0.0, 1.0)
    k = np.arange(len(v))
    keep = v > 0
    B = float(max(1e-3, np.max(v[keep] ** (1.0 / k[keep]) if np.any(keep) else 1.0)))
    B = max(B, 1e-3)
    A = float(np.max(v[keep] / B ** k[keep]))
    return (A, B)
