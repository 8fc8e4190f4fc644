"""Truncated power series in x and in (epsilon, x).

Two containers live here. :class:`XSeries` is a truncated Taylor series in
``x`` carrying the radius of the disc on which it is trusted.
:class:`EpsExpansion` stacks ``K+1`` such series as the coefficients of
``eps**0 .. eps**K``; internally it is a ``(K+1, N+1)`` complex array whose
entry ``[k, n]`` multiplies ``eps**k * x**n``.

All arithmetic is truncating (no hidden tails) and returns new objects.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.signal import convolve2d

from .errors import StructuralError

DEFAULT_X_ORDER = 24
DEFAULT_EPS_ORDER = 16
GEVREY_SAMPLES = 64
GEVREY_RADIUS_FRACTION = 0.9
GEVREY_SLACK = 0.10


@dataclass(frozen=True)
class ArcSpec:
    """Closed arc of directions ``[theta_minus, theta_plus]``."""

    theta_minus: float = 0.0
    theta_plus: float = 0.0

    def __post_init__(self):
        if not self.theta_minus <= self.theta_plus:
            raise StructuralError("arc must satisfy theta_minus <= theta_plus")

    @property
    def hat_extension(self) -> tuple[float, float]:
        return (self.theta_minus - math.pi / 2, self.theta_plus + math.pi / 2)

    @property
    def width(self) -> float:
        return self.theta_plus - self.theta_minus

    def grid(self, n: int = 65) -> np.ndarray:
        """``n`` equispaced directions including both endpoints."""
        if self.width == 0:
            return np.array([self.theta_minus])
        return np.linspace(self.theta_minus, self.theta_plus, n)

    def directions(self, spacing: float = math.pi / 3) -> np.ndarray:
        """Laplace directions covering the arc, at most ``spacing`` apart."""
        if self.width == 0:
            return np.array([self.theta_minus])
        k = int(math.ceil(self.width / spacing)) + 1
        return np.linspace(self.theta_minus, self.theta_plus, k)

    def as_list(self):
        return [float(self.theta_minus), float(self.theta_plus)]


def _as_coeffs(c, ndim):
    arr = np.array(c, dtype=complex, ndmin=ndim)
    if arr.ndim != ndim:
        raise StructuralError(f"expected a {ndim}-d coefficient array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# series in x
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class XSeries:
    """Truncated Taylor series ``sum_n coeffs[n] x**n`` valid on ``|x| < radius``."""

    coeffs: np.ndarray
    radius: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _as_coeffs(self.coeffs, 1))
        if not self.radius > 0:
            raise StructuralError("radius must be positive")

    @classmethod
    def constant(cls, value, order=DEFAULT_X_ORDER, radius=1.0):
        c = np.zeros(order + 1, dtype=complex)
        c[0] = value
        return cls(c, radius)

    @classmethod
    def monomial(cls, n=1, order=DEFAULT_X_ORDER, radius=1.0, value=1.0):
        c = np.zeros(order + 1, dtype=complex)
        if n <= order:
            c[n] = value
        return cls(c, radius)

    @property
    def trunc_order(self) -> int:
        return self.coeffs.shape[0] - 1

    def __call__(self, x):
        return np.polynomial.polynomial.polyval(x, self.coeffs)

    def _check(self, other):
        if other.trunc_order != self.trunc_order:
            raise StructuralError(
                f"truncation mismatch: {self.trunc_order} vs {other.trunc_order}")

    def _wrap(self, c, radius=None):
        return XSeries(c, self.radius if radius is None else radius)

    def __add__(self, other):
        if isinstance(other, XSeries):
            self._check(other)
            return self._wrap(self.coeffs + other.coeffs, min(self.radius, other.radius))
        c = self.coeffs.copy()
        c[0] += other
        return self._wrap(c)

    __radd__ = __add__

    def __neg__(self):
        return self._wrap(-self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, XSeries):
            return xseries_mul(self, other)
        return self._wrap(self.coeffs * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, XSeries):
            return self * other.reciprocal()
        return self._wrap(self.coeffs / other)

    def reciprocal(self, tol: float = 1e-10):
        c = self.coeffs
        if abs(c[0]) < tol:
            raise StructuralError("series not invertible: constant term vanishes")
        out = np.zeros_like(c)
        out[0] = 1.0 / c[0]
        for n in range(1, len(c)):
            out[n] = -out[0] * np.dot(c[1:n + 1], out[n - 1::-1])
        return self._wrap(out)

    def euler(self):
        """``x d/dx``."""
        return self._wrap(self.coeffs * np.arange(len(self.coeffs)))

    def derivative(self):
        c = np.zeros_like(self.coeffs)
        c[:-1] = self.coeffs[1:] * np.arange(1, len(self.coeffs))
        return self._wrap(c)

    def mul_x(self):
        c = np.zeros_like(self.coeffs)
        c[1:] = self.coeffs[:-1]
        return self._wrap(c)

    def div_x(self):
        """Exact division by ``x``; the constant term is discarded (caller checks it)."""
        c = np.zeros_like(self.coeffs)
        c[:-1] = self.coeffs[1:]
        return self._wrap(c)

    def log_integral(self):
        """``int_0^x f(t) dt / t``; the constant term of ``f`` is ignored."""
        c = np.zeros_like(self.coeffs)
        n = np.arange(1, len(c))
        c[1:] = self.coeffs[1:] / n
        return self._wrap(c)

    def integral(self):
        """``int_0^x f(t) dt``, truncated."""
        c = np.zeros_like(self.coeffs)
        c[1:] = self.coeffs[:-1] / np.arange(1, len(c))
        return self._wrap(c)

    def exp(self):
        c = self.coeffs
        out = np.zeros_like(c)
        out[0] = np.exp(c[0])
        j = np.arange(len(c))
        for n in range(1, len(c)):
            out[n] = np.dot(j[1:n + 1] * c[1:n + 1], out[n - 1::-1]) / n
        return self._wrap(out)

    def compose(self, inner: "XSeries"):
        """``self(inner(x))`` for ``inner(0) = 0``."""
        self._check(inner)
        out = XSeries.constant(0.0, self.trunc_order, inner.radius)
        for c in self.coeffs[::-1]:
            out = out * inner + c
        return out

    def revert(self):
        """Compositional inverse of a series with ``f(0) = 0`` and ``f'(0) != 0``."""
        c = self.coeffs
        if abs(c[1]) < 1e-14:
            raise StructuralError("series not revertible: linear coefficient vanishes")
        n = self.trunc_order
        y = XSeries.monomial(1, n, self.radius)
        higher = XSeries(np.concatenate([[0, 0], c[2:]]), self.radius)
        g = y / c[1]
        for _ in range(n):
            g = (y - higher.compose(g)) / c[1]
        return g

    def sup_norm(self, fraction=GEVREY_RADIUS_FRACTION, samples=GEVREY_SAMPLES):
        t = fraction * self.radius * np.exp(2j * np.pi * np.arange(samples) / samples)
        return float(np.max(np.abs(self(t))))

    def with_radius(self, radius):
        return XSeries(self.coeffs, radius)

    def resized(self, order):
        c = np.zeros(order + 1, dtype=complex)
        m = min(order, self.trunc_order) + 1
        c[:m] = self.coeffs[:m]
        return XSeries(c, self.radius)


def xseries_mul(a: XSeries, b: XSeries) -> XSeries:
    """Truncated Cauchy product."""
    a._check(b)
    n = a.trunc_order + 1
    return XSeries(np.convolve(a.coeffs, b.coeffs)[:n], min(a.radius, b.radius))


def xseries_from_samples(values, radius, trunc_order=None):
    """Taylor coefficients from samples on ``|x| = radius`` (discrete Cauchy integral).

    ``values[k]`` is the function at ``radius * exp(2 pi i k / n)``.
    """
    values = np.asarray(values, dtype=complex)
    n = values.shape[-1]
    c = np.fft.fft(values, axis=-1) / n
    c = c * radius ** (-np.arange(n, dtype=float))
    if trunc_order is not None:
        c = c[..., :trunc_order + 1]
    return c


def circle_points(radius, n):
    return radius * np.exp(2j * np.pi * np.arange(n) / n)


# ---------------------------------------------------------------------------
# series in (eps, x)
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EpsExpansion:
    """``sum_k f_k(x) eps**k`` stored as a ``(K+1, N+1)`` coefficient array."""

    coeffs: np.ndarray
    radius: float = 1.0
    arc: ArcSpec = field(default_factory=ArcSpec)
    gevrey_fit: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _as_coeffs(self.coeffs, 2))
        if not self.radius > 0:
            raise StructuralError("radius must be positive")

    # -- constructors ------------------------------------------------------
    @classmethod
    def zeros(cls, K=DEFAULT_EPS_ORDER, N=DEFAULT_X_ORDER, radius=1.0, arc=None):
        return cls(np.zeros((K + 1, N + 1), complex), radius, arc or ArcSpec())

    @classmethod
    def from_terms(cls, terms, K=DEFAULT_EPS_ORDER, N=DEFAULT_X_ORDER, radius=1.0, arc=None):
        """``terms`` maps ``(k, n)`` to the coefficient of ``eps**k x**n``.

        Terms beyond the truncation are dropped.
        """
        c = np.zeros((K + 1, N + 1), complex)
        for (k, n), v in terms.items():
            if k <= K and n <= N:
                c[k, n] += v
        return cls(c, radius, arc or ArcSpec())

    @classmethod
    def constant(cls, value, K=DEFAULT_EPS_ORDER, N=DEFAULT_X_ORDER, radius=1.0, arc=None):
        return cls.from_terms({(0, 0): value}, K, N, radius, arc)

    @classmethod
    def from_eps(cls, values, K=DEFAULT_EPS_ORDER, N=DEFAULT_X_ORDER, radius=1.0, arc=None):
        """An epsilon-only series with coefficients ``values[k]``."""
        c = np.zeros((K + 1, N + 1), complex)
        v = np.asarray(values, complex)[:K + 1]
        c[:len(v), 0] = v
        return cls(c, radius, arc or ArcSpec())

    @classmethod
    def from_x(cls, xs: XSeries, K=DEFAULT_EPS_ORDER, arc=None):
        c = np.zeros((K + 1, xs.trunc_order + 1), complex)
        c[0] = xs.coeffs
        return cls(c, xs.radius, arc or ArcSpec())

    # -- shape -------------------------------------------------------------
    @property
    def K(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def N(self) -> int:
        return self.coeffs.shape[1] - 1

    @property
    def trunc_order(self) -> int:
        return self.N

    @property
    def orders(self) -> list:
        return [XSeries(row, self.radius) for row in self.coeffs]

    def order(self, k) -> XSeries:
        return XSeries(self.coeffs[k], self.radius)

    def _like(self, c, radius=None):
        return EpsExpansion(c, self.radius if radius is None else radius, self.arc)

    def _check(self, other):
        if other.coeffs.shape != self.coeffs.shape:
            raise StructuralError(
                f"truncation mismatch: {self.coeffs.shape} vs {other.coeffs.shape}")
        if other.arc != self.arc:
            raise StructuralError(f"arc mismatch: {self.arc} vs {other.arc}")

    def resized(self, K=None, N=None):
        K = self.K if K is None else K
        N = self.N if N is None else N
        c = np.zeros((K + 1, N + 1), complex)
        k, n = min(K, self.K) + 1, min(N, self.N) + 1
        c[:k, :n] = self.coeffs[:k, :n]
        return self._like(c)

    def with_arc(self, arc):
        return EpsExpansion(self.coeffs, self.radius, arc, self.gevrey_fit)

    def with_radius(self, radius):
        return EpsExpansion(self.coeffs, radius, self.arc, self.gevrey_fit)

    # -- arithmetic --------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, EpsExpansion):
            self._check(other)
            return self._like(self.coeffs + other.coeffs, min(self.radius, other.radius))
        c = self.coeffs.copy()
        c[0, 0] += other
        return self._like(c)

    __radd__ = __add__

    def __neg__(self):
        return self._like(-self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, EpsExpansion):
            return eps_mul(self, other)
        return self._like(self.coeffs * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, EpsExpansion):
            return self * other.reciprocal()
        return self._like(self.coeffs / other)

    def reciprocal(self):
        f0 = self.order(0).reciprocal()
        out = np.zeros_like(self.coeffs)
        out[0] = f0.coeffs
        n = self.N + 1
        for k in range(1, self.K + 1):
            acc = np.zeros(n, complex)
            for i in range(1, k + 1):
                acc += np.convolve(self.coeffs[i], out[k - i])[:n]
            out[k] = -np.convolve(f0.coeffs, acc)[:n]
        return self._like(out)

    def exp(self):
        """Exponential, via ``k E_k = sum_j j F_j E_{k-j}`` in epsilon."""
        e0 = self.order(0).exp()
        out = np.zeros_like(self.coeffs)
        out[0] = e0.coeffs
        n = self.N + 1
        for k in range(1, self.K + 1):
            acc = np.zeros(n, complex)
            for j in range(1, k + 1):
                acc += j * np.convolve(self.coeffs[j], out[k - j])[:n]
            out[k] = acc / k
        return self._like(out)

    def shift(self, m: int, tol: float = 0.0):
        """Multiply by ``eps**m``; negative ``m`` divides and requires vanishing low orders.

        Division loses the top ``|m|`` orders, which are filled with zeros.
        """
        c = np.zeros_like(self.coeffs)
        if m >= 0:
            c[m:] = self.coeffs[:self.K + 1 - m]
        else:
            low = np.max(np.abs(self.coeffs[:-m])) if self.K >= 0 else 0.0
            if low > tol:
                raise StructuralError(f"cannot divide by eps^{-m}: low orders are {low:.3e}")
            c[:self.K + 1 + m] = self.coeffs[-m:]
        return self._like(c)

    def mul_x(self):
        c = np.zeros_like(self.coeffs)
        c[:, 1:] = self.coeffs[:, :-1]
        return self._like(c)

    def div_x(self):
        c = np.zeros_like(self.coeffs)
        c[:, :-1] = self.coeffs[:, 1:]
        return self._like(c)

    # -- evaluation --------------------------------------------------------
    def at_eps(self, eps) -> XSeries:
        """Sum over epsilon at a fixed value, leaving a series in x."""
        powers = eps ** np.arange(self.K + 1)
        return XSeries(powers @ self.coeffs, self.radius)

    def at_x(self, x) -> np.ndarray:
        """Coefficients of the epsilon series at a fixed ``x``."""
        return np.polynomial.polynomial.polyval(x, self.coeffs.T)

    def __call__(self, x, eps):
        return self.at_eps(eps)(x)

    def x_zero(self):
        """Keep only the ``x**0`` column (restriction to x = 0)."""
        c = np.zeros_like(self.coeffs)
        c[:, 0] = self.coeffs[:, 0]
        return self._like(c)

    def eps_zero(self):
        """Keep only the ``eps**0`` row (restriction to eps = 0)."""
        c = np.zeros_like(self.coeffs)
        c[0] = self.coeffs[0]
        return self._like(c)

    def sup_orders(self, fraction=GEVREY_RADIUS_FRACTION, samples=GEVREY_SAMPLES):
        """``sup_x |f_k(x)|`` estimated on ``|x| = fraction * radius``."""
        t = fraction * self.radius * np.exp(2j * np.pi * np.arange(samples) / samples)
        vals = np.polynomial.polynomial.polyval(t, self.coeffs.T)
        return np.max(np.abs(vals), axis=-1)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.coeffs))) if self.coeffs.size else 0.0


def eps_mul(a: EpsExpansion, b: EpsExpansion) -> EpsExpansion:
    """Truncated double Cauchy product."""
    a._check(b)
    c = convolve2d(a.coeffs, b.coeffs)[:a.K + 1, :a.N + 1]
    return EpsExpansion(c, min(a.radius, b.radius), a.arc)


def euler_derivative(a: EpsExpansion) -> EpsExpansion:
    """``x d/dx`` applied order by order."""
    return a._like(a.coeffs * np.arange(a.N + 1)[None, :])


def fit_gevrey(a: EpsExpansion, slack: float = GEVREY_SLACK) -> tuple:
    """Fit ``sup_x |f_k| <= C M**k k!`` and return ``(C, M)``.

    ``log(sup_k / k!)`` is regressed on ``k`` over the nonzero orders. ``M``
    is the fitted slope; ``C`` is the fitted intercept, raised just enough
    that the inflated bound ``C(1+slack) (M(1+slack))**k k!`` covers every
    stored order. The result is also attached to the returned series via
    :func:`with_gevrey_fit`.
    """
    if a.K + 1 < 3:
        raise StructuralError("fit_gevrey needs at least 3 orders")
    sup = a.sup_orders()
    scale = float(np.max(sup))
    if scale == 0.0:
        return (0.0, 1.0)
    k = np.arange(a.K + 1)
    keep = sup > scale * 1e-300
    keep &= sup > 0
    logk = np.array([math.lgamma(i + 1) for i in k])
    y = np.log(sup[keep]) - logk[keep]
    kk = k[keep]
    if len(kk) >= 2:
        slope, icpt = np.polyfit(kk, y, 1)
    else:
        slope, icpt = 0.0, float(y[0])
    M = float(np.exp(slope))
    C = float(np.exp(icpt))
    # smallest C for which the inflated bound holds on every stored order
    need = np.max(y - kk * math.log(M * (1 + slack)) - math.log(1 + slack))
    C = max(C, float(np.exp(need)))
    return (C, M)


def with_gevrey_fit(a: EpsExpansion, slack: float = GEVREY_SLACK) -> EpsExpansion:
    return EpsExpansion(a.coeffs, a.radius, a.arc, fit_gevrey(a, slack))


def gevrey_bound_holds(a: EpsExpansion, fit=None, slack: float = GEVREY_SLACK) -> bool:
    C, M = fit if fit is not None else a.gevrey_fit
    sup = a.sup_orders()
    k = np.arange(a.K + 1)
    bound = C * (1 + slack) * (M * (1 + slack)) ** k * np.array([math.factorial(i) for i in k], float)
    return bool(np.all(sup <= bound * (1 + 1e-12)))
