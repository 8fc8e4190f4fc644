"""The system ``eps x psi' + A(x, eps) psi = 0``, its spectral data and gauge actions.

Series-valued 2x2 matrices are handled as complex arrays of shape
``(2, 2, K+1, N+1)``; the public types wrap them together with the arc and
disc geometry.

Gauge convention: ``apply_gauge(G, A) = G A G^-1 - eps x (dG/dx) G^-1``.
If ``psi`` solves the system for ``A`` then ``G psi`` solves it for the
transformed matrix.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.signal import convolve2d

from .errors import ConvergenceError, GenericityError, ResonanceError, StructuralError
from .series_core import ArcSpec, EpsExpansion, XSeries

NONRESONANCE_MARGIN = 1e-8
ARC_GRID = 65
LIMIT_TOL = 1e-10


# ---------------------------------------------------------------------------
# array-level helpers
# ---------------------------------------------------------------------------

def _conv2(a, b):
    K, N = a.shape
    return convolve2d(a, b)[:K, :N]


def mat_mul(A, B):
    """Product of two series matrices of shape ``(2, 2, K+1, N+1)``."""
    out = np.zeros_like(A)
    for i in range(2):
        for j in range(2):
            out[i, j] = _conv2(A[i, 0], B[0, j]) + _conv2(A[i, 1], B[1, j])
    return out


def mat_euler(A):
    return A * np.arange(A.shape[-1])


def mat_eps_shift(A, m=1):
    out = np.zeros_like(A)
    if m >= 0:
        out[:, :, m:] = A[:, :, :A.shape[2] - m]
    else:
        out[:, :, :m] = A[:, :, -m:]
    return out


def series_reciprocal(c):
    """Reciprocal of a ``(K+1, N+1)`` coefficient array."""
    return EpsExpansion(c).reciprocal().coeffs


def mat_det(A):
    return _conv2(A[0, 0], A[1, 1]) - _conv2(A[0, 1], A[1, 0])


def mat_inv(A, tol=1e-12):
    det = mat_det(A)
    if abs(det[0, 0]) < tol:
        raise StructuralError("gauge transform is not invertible at the origin")
    inv_det = series_reciprocal(det)
    adj = np.empty_like(A)
    adj[0, 0], adj[1, 1] = A[1, 1], A[0, 0]
    adj[0, 1], adj[1, 0] = -A[0, 1], -A[1, 0]
    return np.stack([np.stack([_conv2(adj[i, j], inv_det) for j in range(2)]) for i in range(2)])


def mat_identity(K, N):
    out = np.zeros((2, 2, K + 1, N + 1), complex)
    out[0, 0, 0, 0] = out[1, 1, 0, 0] = 1.0
    return out


def mat_eval(A, x, eps):
    """Evaluate a series matrix at ``(x, eps)``; ``x`` may be an array."""
    K = A.shape[2] - 1
    rows = np.tensordot(eps ** np.arange(K + 1), A, axes=([0], [2]))  # (2,2,N+1)
    x = np.asarray(x, dtype=complex)
    out = np.polynomial.polynomial.polyval(x, np.moveaxis(rows, -1, 0))
    return np.moveaxis(out, (0, 1), (-2, -1)) if x.ndim else out


def xmat_mul(A, B):
    """Product of 2x2 matrices of x-series, shape ``(2, 2, N+1)``."""
    n = A.shape[-1]
    out = np.zeros(A.shape[:2] + (n,), complex)
    for i in range(2):
        for j in range(2):
            out[i, j] = (np.convolve(A[i, 0], B[0, j])[:n] + np.convolve(A[i, 1], B[1, j])[:n])
    return out


def xmat_eval(A, x):
    x = np.asarray(x, dtype=complex)
    out = np.polynomial.polynomial.polyval(x, np.moveaxis(A, -1, 0))
    return np.moveaxis(out, (0, 1), (-2, -1)) if x.ndim else out


def series_radius_estimate(c, fallback=np.inf):
    """Root-test estimate of the radius of convergence from the upper half of ``c``."""
    c = np.abs(np.asarray(c))
    n = len(c) - 1
    idx = np.arange(max(1, n // 2), n + 1)
    vals = c[idx]
    mask = vals > 1e-300
    if not np.any(mask):
        return fallback
    scale = max(float(np.max(c)), 1e-300)
    if np.max(vals) < 1e-13 * scale:
        return fallback
    r = vals[mask] ** (-1.0 / idx[mask])
    return float(np.min(r))


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------

def _entries_from_array(arr, radius, arc):
    return tuple(tuple(EpsExpansion(arr[i, j], radius, arc) for j in range(2)) for i in range(2))


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """``A(x, eps)`` as a 2x2 matrix of epsilon expansions on ``D x S``."""

    entries: tuple
    arc: ArcSpec = field(default_factory=ArcSpec)
    disc_radius: float = 1.0
    sector_radius: float = 1.0

    def __post_init__(self):
        flat = [e for row in self.entries for e in row]
        if len(self.entries) != 2 or len(flat) != 4:
            raise StructuralError("entries must be a 2x2 matrix")
        shape = flat[0].coeffs.shape
        for e in flat:
            if e.coeffs.shape != shape:
                raise StructuralError("entries must share truncation orders")
            if e.arc != self.arc:
                raise StructuralError("entries must share the system arc")
        if not (self.disc_radius > 0 and self.sector_radius > 0):
            raise StructuralError("radii must be positive")
        arr = self.array
        if not np.all(np.isfinite(arr[:, :, 0, 0])):
            raise StructuralError("classical residue is not finite")

    @classmethod
    def from_array(cls, arr, arc=None, disc_radius=1.0, sector_radius=1.0):
        arc = arc or ArcSpec()
        arr = np.asarray(arr, complex)
        return cls(_entries_from_array(arr, disc_radius, arc), arc, disc_radius, sector_radius)

    @classmethod
    def from_terms(cls, terms, K=16, N=24, arc=None, disc_radius=1.0, sector_radius=1.0):
        """``terms[(i, j)]`` maps ``(k, n)`` to coefficients of entry ``a_{i+1, j+1}``."""
        arr = np.zeros((2, 2, K + 1, N + 1), complex)
        for (i, j), d in terms.items():
            for (k, n), v in d.items():
                if k <= K and n <= N:
                    arr[i, j, k, n] += v
        return cls.from_array(arr, arc, disc_radius, sector_radius)

    @property
    def array(self) -> np.ndarray:
        return np.array([[e.coeffs for e in row] for row in self.entries])

    @property
    def K(self) -> int:
        return self.entries[0][0].K

    @property
    def N(self) -> int:
        return self.entries[0][0].N

    @property
    def classical_residue(self) -> np.ndarray:
        return self.array[:, :, 0, 0]

    def residue(self) -> np.ndarray:
        """``A(0, eps)`` as a ``(2, 2, K+1)`` array of epsilon coefficients."""
        return self.array[:, :, :, 0]

    def leading(self) -> np.ndarray:
        """``A_0(x) = A(x, 0)`` as a ``(2, 2, N+1)`` array."""
        return self.array[:, :, 0, :]

    def resized(self, K=None, N=None):
        K = self.K if K is None else K
        N = self.N if N is None else N
        arr = np.zeros((2, 2, K + 1, N + 1), complex)
        k, n = min(K, self.K) + 1, min(N, self.N) + 1
        arr[:, :, :k, :n] = self.array[:, :, :k, :n]
        return SystemSpec.from_array(arr, self.arc, self.disc_radius, self.sector_radius)

    def with_arc(self, arc):
        return SystemSpec.from_array(self.array, arc, self.disc_radius, self.sector_radius)

    def __call__(self, x, eps):
        return mat_eval(self.array, x, eps)


@dataclass(frozen=True, eq=False)
class GaugeTransform:
    """A 2x2 matrix of epsilon expansions, invertible at the origin."""

    entries: tuple
    kind: str = "composite"

    KINDS = ("constant", "residue", "leading", "unipotent", "diagonal", "composite")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise StructuralError(f"unknown gauge kind {self.kind!r}")
        det = mat_det(self.array)
        if abs(det[0, 0]) < 1e-12:
            raise StructuralError("gauge transform is not invertible at the origin")

    @classmethod
    def from_array(cls, arr, kind="composite", radius=1.0, arc=None):
        return cls(_entries_from_array(np.asarray(arr, complex), radius, arc or ArcSpec()), kind)

    @property
    def array(self) -> np.ndarray:
        return np.array([[e.coeffs for e in row] for row in self.entries])

    def __matmul__(self, other: "GaugeTransform"):
        e = self.entries[0][0]
        return GaugeTransform.from_array(mat_mul(self.array, other.array), "composite",
                                         e.radius, e.arc)

    def inverse(self):
        e = self.entries[0][0]
        return GaugeTransform.from_array(mat_inv(self.array), self.kind, e.radius, e.arc)

    def __call__(self, x, eps):
        return mat_eval(self.array, x, eps)


@dataclass(frozen=True, eq=False)
class ClassicalData:
    m1: complex
    m2: complex
    eta1: XSeries
    eta2: XSeries
    rho1: EpsExpansion
    rho2: EpsExpansion
    nonresonant: bool = True


@dataclass(frozen=True, eq=False)
class SpectralData:
    """``lambda_i = m_i + x mu_i(x) + eps kappa_i(eps)``."""

    m1: complex
    m2: complex
    lambda1: EpsExpansion
    lambda2: EpsExpansion
    kappa1: EpsExpansion
    kappa2: EpsExpansion
    mu1: XSeries
    mu2: XSeries

    @property
    def lambdas(self):
        return (self.lambda1, self.lambda2)

    def nu(self, eps):
        """``nu_i(eps) = m_i + eps kappa_i(eps)`` for both i."""
        return tuple(complex(l.at_x(0.0) @ (eps ** np.arange(l.K + 1)))
                     for l in (self.lambda1, self.lambda2))

    def array(self):
        out = np.zeros((2, 2) + self.lambda1.coeffs.shape, complex)
        out[0, 0] = self.lambda1.coeffs
        out[1, 1] = self.lambda2.coeffs
        return out


# ---------------------------------------------------------------------------
# eigenvalue bookkeeping
# ---------------------------------------------------------------------------

def ordering_margin(m1, m2, arc: ArcSpec, n=ARC_GRID):
    """``Re(exp(-i theta)(m1 - m2))`` on the arc grid."""
    th = arc.grid(n)
    return np.real(np.exp(-1j * th) * (m1 - m2)), th


def is_nonresonant(m1, m2, arc: ArcSpec, margin=NONRESONANCE_MARGIN) -> bool:
    vals, _ = ordering_margin(m1, m2, arc)
    return bool(np.all(np.abs(vals) >= margin) and (np.all(vals < 0) or np.all(vals > 0)))


def order_eigenvalues(m, arc: ArcSpec, margin=NONRESONANCE_MARGIN):
    """Return the index order ``(i1, i2)`` with ``m[i1]`` preceding ``m[i2]`` on the arc.

    ``m1`` precedes ``m2`` when ``Re(exp(-i theta) m1) < Re(exp(-i theta) m2)``
    for every grid direction.
    """
    if abs(m[0] - m[1]) < 1e-12 * max(1.0, abs(m[0])):
        raise GenericityError("classical residue has coincident eigenvalues", eigenvalue=m[0])
    vals, th = ordering_margin(m[0], m[1], arc)
    bad = np.abs(vals) < margin
    if np.any(bad):
        raise ResonanceError("eigenvalue difference is resonant on the arc",
                             theta=float(th[np.argmax(bad)]))
    if np.all(vals < 0):
        return 0, 1
    if np.all(vals > 0):
        return 1, 0
    flip = int(np.argmax(np.sign(vals) != np.sign(vals[0])))
    raise ResonanceError("eigenvalue ordering changes inside the arc", theta=float(th[flip]))


def constant_eigenbasis(A00, arc: ArcSpec, require_order=True):
    """Eigenvalues ``(m1, m2)`` and ``H0`` with ``H0 A00 H0^-1 = diag(m1, m2)``."""
    w, V = np.linalg.eig(np.asarray(A00, complex))
    if abs(w[0] - w[1]) < 1e-12 * max(1.0, abs(w[0])):
        raise GenericityError("classical residue has coincident eigenvalues", eigenvalue=w[0])
    if require_order:
        i1, i2 = order_eigenvalues(w, arc)
    else:
        i1, i2 = (0, 1) if w[0].real <= w[1].real else (1, 0)
    V = V[:, [i1, i2]]
    # normalise so that the dominant component of each eigenvector is 1
    for j in range(2):
        V[:, j] /= V[np.argmax(np.abs(V[:, j])), j]
    return complex(w[i1]), complex(w[i2]), np.linalg.inv(V)


def diagonalise_x(Q, tol=1e-14):
    """Sylvester recursion for ``H(x) Q(x) H(x)^-1 = diag(n1(x), n2(x))``.

    ``Q`` has shape ``(2, 2, N+1)`` with ``Q[:, :, 0]`` diagonal with distinct
    entries. Returns ``(H, n)`` with ``H(0) = I``, zero diagonal in the
    higher orders of ``H``, and ``n`` of shape ``(2, N+1)``.
    """
    Q = np.asarray(Q, complex)
    n1 = Q.shape[-1]
    m = np.diag(Q[:, :, 0])
    if abs(Q[0, 1, 0]) > 1e-10 * (1 + abs(m).max()) or abs(Q[1, 0, 0]) > 1e-10 * (1 + abs(m).max()):
        raise StructuralError("leading coefficient must be diagonal")
    gap = m[1] - m[0]
    H = np.zeros((2, 2, n1), complex)
    H[0, 0, 0] = H[1, 1, 0] = 1.0
    D = np.zeros((2, n1), complex)
    D[:, 0] = m
    for n in range(1, n1):
        R = -Q[:, :, n].copy()
        for j in range(1, n):
            R += np.diag(D[:, n - j]) @ H[:, :, j] - H[:, :, j] @ Q[:, :, n - j]
        # H_n M - M H_n = N_n + R: diagonal fixes N_n, off-diagonal fixes H_n
        D[:, n] = -np.diag(R)
        H[0, 1, n] = R[0, 1] / gap
        H[1, 0, n] = -R[1, 0] / gap
    return H, D


def _scalar_quadratic(a, b, c):
    """Solve ``a + b s + c s**2 = 0`` for a series ``s`` with ``s_0 = 0``.

    ``a``, ``b``, ``c`` are 1-d epsilon coefficient arrays with
    ``a_0 = c_0 = 0`` and ``b_0 != 0``.
    """
    K = len(a) - 1
    s = np.zeros(K + 1, complex)
    for k in range(1, K + 1):
        acc = a[k] + np.dot(b[1:k], s[k - 1:0:-1])
        for i in range(1, k - 1):
            acc += c[i] * np.dot(s[1:k - i], s[k - i - 1:0:-1])
        s[k] = -acc / b[0]
    return s


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def residue_diagonalise(residue, radius=1.0, arc=None, N=0):
    """Diagonalise ``A(0, eps)`` with ``G = [[1, g12], [g21, 1]]``.

    ``residue`` is a ``(2, 2, K+1)`` array whose ``eps**0`` coefficient is
    already diagonal. Returns ``(G, (rho1, rho2))`` as epsilon-only
    expansions padded with ``N`` zero x-orders.
    """
    R = np.asarray(residue, complex)
    K = R.shape[2] - 1
    if abs(R[0, 1, 0]) > 1e-10 or abs(R[1, 0, 0]) > 1e-10:
        raise StructuralError("residue must be diagonal at leading order")
    if abs(R[0, 0, 0] - R[1, 1, 0]) < 1e-12:
        raise GenericityError("residue has coincident eigenvalues", eigenvalue=R[0, 0, 0])
    a11, a12, a21, a22 = R[0, 0], R[0, 1], R[1, 0], R[1, 1]
    g21 = _scalar_quadratic(a21, a11 - a22, -a12)
    g12 = _scalar_quadratic(a12, a22 - a11, -a21)
    rho1 = a11 + np.convolve(a21, g12)[:K + 1]
    rho2 = a22 + np.convolve(a12, g21)[:K + 1]
    arr = np.zeros((2, 2, K + 1, N + 1), complex)
    arr[0, 0, 0, 0] = arr[1, 1, 0, 0] = 1.0
    arr[0, 1, :, 0] = g12
    arr[1, 0, :, 0] = g21
    arc = arc or ArcSpec()
    G = GaugeTransform.from_array(arr, "residue", radius, arc)
    rhos = tuple(EpsExpansion.from_eps(r, K, N, radius, arc) for r in (rho1, rho2))
    return G, rhos


def _h0_array(H0, K, N):
    arr = np.zeros((2, 2, K + 1, N + 1), complex)
    arr[:, :, 0, 0] = H0
    return arr


def classical_data(sys: SystemSpec, require_order=True) -> ClassicalData:
    m1, m2, H0 = constant_eigenbasis(sys.classical_residue, sys.arc, require_order)
    H0i = np.linalg.inv(H0)
    Q = np.einsum("ij,jkn,kl->iln", H0, sys.leading(), H0i)
    _, D = diagonalise_x(Q)
    R = np.einsum("ij,jkn,kl->iln", H0, sys.residue(), H0i)
    R[0, 1, 0] = R[1, 0, 0] = 0.0
    _, (rho1, rho2) = residue_diagonalise(R, sys.disc_radius, sys.arc, sys.N)
    eta1 = XSeries(D[0], sys.disc_radius)
    eta2 = XSeries(D[1], sys.disc_radius)
    return ClassicalData(m1, m2, eta1, eta2, rho1, rho2,
                         nonresonant=is_nonresonant(m1, m2, sys.arc))


def spectral_data(cd: ClassicalData, K, N, radius, arc) -> SpectralData:
    lam = []
    kap = []
    mus = []
    for m, eta, rho in ((cd.m1, cd.eta1, cd.rho1), (cd.m2, cd.eta2, cd.rho2)):
        c = np.zeros((K + 1, N + 1), complex)
        c[0, :] = eta.coeffs[:N + 1]
        c[1:, 0] = rho.coeffs[1:, 0]
        lam.append(EpsExpansion(c, radius, arc))
        kap.append(EpsExpansion.from_eps(rho.coeffs[1:, 0], K, N, radius, arc))
        mus.append((eta - m).div_x().with_radius(radius))
    return SpectralData(cd.m1, cd.m2, lam[0], lam[1], kap[0], kap[1], mus[0], mus[1])


def apply_gauge(G, sys: SystemSpec) -> SystemSpec:
    """``G A G^-1 - eps x (dG/dx) G^-1``."""
    Garr = G.array if isinstance(G, GaugeTransform) else np.asarray(G, complex)
    A = sys.array
    if Garr.shape != A.shape:
        raise StructuralError(f"gauge shape {Garr.shape} does not match system {A.shape}")
    Gi = mat_inv(Garr)
    new = mat_mul(mat_mul(Garr, A) - mat_eps_shift(mat_euler(Garr), 1), Gi)
    return SystemSpec.from_array(new, sys.arc, sys.disc_radius, sys.sector_radius)


def gauge_residual(G, A, target):
    """``eps x dG/dx - (G A - T G)`` for series matrices (all arrays)."""
    return mat_eps_shift(mat_euler(G), 1) - (mat_mul(G, A) - mat_mul(target, G))


@dataclass(frozen=True, eq=False)
class PreDiagonalisation:
    gauge: GaugeTransform
    spectral: SpectralData
    B: np.ndarray
    system: SystemSpec          # the transformed system Lambda + B
    H0: np.ndarray
    radius: float
    limit_residual: float


def pre_diagonalise(sys: SystemSpec, shrink_floor=0.1):
    """Gauge ``A`` to ``Lambda + B`` with ``B(0, eps) = 0`` and ``B(x, 0) = 0``.

    Returns ``(G, spectral, B)``; the full record is available through
    :func:`pre_diagonalise_full`.
    """
    r = pre_diagonalise_full(sys, shrink_floor)
    return r.gauge, r.spectral, r.B


def pre_diagonalise_full(sys: SystemSpec, shrink_floor=0.1) -> PreDiagonalisation:
    K, N = sys.K, sys.N
    cd = classical_data(sys)
    m1, m2, H0 = constant_eigenbasis(sys.classical_residue, sys.arc)
    H0i = np.linalg.inv(H0)
    Q = np.einsum("ij,jkn,kl->iln", H0, sys.leading(), H0i)
    H2, _ = diagonalise_x(Q)
    radius = sys.disc_radius
    r_est = min(series_radius_estimate(H2[0, 1]), series_radius_estimate(H2[1, 0]))
    if r_est < radius:
        if r_est < shrink_floor * sys.disc_radius:
            raise ConvergenceError("leading-order eigenvector series has a tiny radius",
                                   radius=r_est)
        radius = 0.9 * r_est
    R = np.einsum("ij,jkn,kl->iln", H0, sys.residue(), H0i)
    R[0, 1, 0] = R[1, 0, 0] = 0.0
    H1, _ = residue_diagonalise(R, radius, sys.arc, N)

    H2arr = np.zeros((2, 2, K + 1, N + 1), complex)
    H2arr[:, :, 0, :] = H2
    P = mat_mul(mat_mul(H2arr, H1.array), _h0_array(H0, K, N))
    sd = spectral_data(cd, K, N, radius, sys.arc)
    new = apply_gauge(P, sys).array
    B = new - sd.array()
    scale = max(1.0, float(np.max(np.abs(new))))
    lim = max(float(np.max(np.abs(B[:, :, :, 0]))), float(np.max(np.abs(B[:, :, 0, :]))))
    if lim > 1e-8 * scale:
        raise ConvergenceError("pre-diagonalisation limits fail", residual=lim)
    B[:, :, :, 0] = 0.0
    B[:, :, 0, :] = 0.0
    transformed = SystemSpec.from_array(sd.array() + B, sys.arc, radius, sys.sector_radius)
    G = GaugeTransform.from_array(P, "composite", radius, sys.arc)
    return PreDiagonalisation(G, sd, B, transformed, H0, radius, lim)
