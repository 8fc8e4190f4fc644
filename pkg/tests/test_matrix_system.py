import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sps2.errors import GenericityError, ResonanceError, StructuralError
from sps2.matrix_system import (GaugeTransform, SystemSpec, apply_gauge, classical_data,
                                gauge_residual, is_nonresonant, mat_eps_shift, mat_euler, mat_mul,
                                order_eigenvalues, pre_diagonalise, pre_diagonalise_full,
                                residue_diagonalise)
from sps2.series_core import ArcSpec
from sps2.verify import random_polynomial_system


def system(terms, K=4, N=6, **kw):
    return SystemSpec.from_terms(terms, K=K, N=N, **kw)


def diag_terms(a=-1.0, b=1.0):
    return {(0, 0): {(0, 0): a}, (1, 1): {(0, 0): b}}


def test_classical_data_diagonal():
    cd = classical_data(system(diag_terms()))
    assert (cd.m1, cd.m2) == (-1, 1)
    np.testing.assert_allclose(cd.eta1.coeffs, [-1, 0, 0, 0, 0, 0, 0], atol=1e-15)
    np.testing.assert_allclose(cd.rho2.coeffs[:, 0], [1, 0, 0, 0, 0], atol=1e-15)


def test_classical_data_symmetric_residue():
    cd = classical_data(system({(0, 1): {(0, 0): 1.0}, (1, 0): {(0, 0): 1.0}}))
    assert cd.m1 == pytest.approx(-1) and cd.m2 == pytest.approx(1)


def test_leading_eigenvalue_series():
    # oracle: Taylor series of -sqrt(1 + x^2)
    sys = system({(0, 0): {(0, 0): -1.0}, (1, 1): {(0, 0): 1.0},
                  (0, 1): {(0, 1): 1.0}, (1, 0): {(0, 1): 1.0}}, K=2, N=8)
    eta1 = classical_data(sys).eta1.coeffs
    np.testing.assert_allclose(eta1, [-1, 0, -1 / 2, 0, 1 / 8, 0, -1 / 16, 0, 5 / 128],
                               atol=1e-13)


def test_genericity_and_resonance_errors():
    with pytest.raises(GenericityError):
        classical_data(system({(0, 0): {(0, 0): 1.0}, (1, 1): {(0, 0): 1.0}}))
    with pytest.raises(ResonanceError):
        classical_data(system(diag_terms(-1j, 1j)))
    with pytest.raises(ResonanceError):
        order_eigenvalues([-1.0, 1.0], ArcSpec(-2.0, 2.0))


def test_residue_diagonalise_examples():
    K = 6
    R = np.zeros((2, 2, K + 1), complex)
    R[0, 0, 0], R[1, 1, 0] = -1, 1
    G, (r1, r2) = residue_diagonalise(R)
    np.testing.assert_allclose(G.array[:, :, :, 0], np.eye(2)[:, :, None] * (np.arange(K + 1) == 0))
    R[0, 1, 1] = 1.0
    G, (r1, r2) = residue_diagonalise(R)
    assert not np.any(G.array[1, 0])
    assert G.array[0, 1, 1, 0] == pytest.approx(-0.5)
    np.testing.assert_allclose(r1.coeffs[:, 0], [-1, 0, 0, 0, 0, 0, 0], atol=1e-15)
    R[1, 0, 1] = 1.0
    G, (r1, r2) = residue_diagonalise(R)
    # oracle: -sqrt(1 + eps^2)
    np.testing.assert_allclose(r1.coeffs[:, 0], [-1, 0, -1 / 2, 0, 1 / 8, 0, -1 / 16],
                               atol=1e-14)
    # G R(eps) = diag(rho) G through order K
    Rm = np.zeros((2, 2, K + 1, 1), complex)
    Rm[..., 0] = R
    D = np.zeros_like(Rm)
    D[0, 0], D[1, 1] = r1.coeffs, r2.coeffs
    np.testing.assert_allclose(mat_mul(G.array, Rm) - mat_mul(D, G.array), 0, atol=1e-14)


def test_pre_diagonalise_normal_input():
    G, sd, B = pre_diagonalise(system(diag_terms()))
    np.testing.assert_allclose(G(0.3, 0.1), np.eye(2), atol=1e-15)
    assert not np.any(B)


def test_pre_diagonalise_limits_on_upper_example():
    sys = system({(0, 0): {(0, 0): -1.0}, (1, 1): {(0, 0): 1.0}, (0, 1): {(0, 1): 1.0}})
    _, _, B = pre_diagonalise(sys)
    assert not np.any(B[:, :, :, 0]) and not np.any(B[:, :, 0, :])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_pre_diagonalise_gauge_residual(seed):
    sys = random_polynomial_system(seed, K=6, N=10)
    pd = pre_diagonalise_full(sys)
    res = gauge_residual(pd.gauge.array, sys.array, pd.system.array)
    assert np.max(np.abs(res)) < 1e-12
    assert pd.limit_residual < 1e-10


def test_apply_gauge_identity_and_constant():
    sys = random_polynomial_system(3)
    I = GaugeTransform.from_array(np.eye(2)[:, :, None, None] * np.pad(
        np.ones((1, 1)), ((0, sys.K), (0, sys.N))))
    np.testing.assert_allclose(apply_gauge(I, sys).array, sys.array, atol=1e-15)
    C = np.array([[2.0, 1.0], [0.5, 1.0]])
    Garr = np.zeros_like(sys.array)
    Garr[:, :, 0, 0] = C
    want = np.einsum("ij,jkab,kl->ilab", C, sys.array, np.linalg.inv(C))
    np.testing.assert_allclose(apply_gauge(Garr, sys).array, want, atol=1e-14)


def test_derivative_term_of_diag_one_x():
    # G = diag(1, x): eps x G' = G diag(0, eps), so eps x G' G^-1 = diag(0, eps)
    G = np.zeros((2, 2, 2, 3), complex)
    G[0, 0, 0, 0] = 1.0
    G[1, 1, 0, 1] = 1.0
    D = np.zeros_like(G)
    D[1, 1, 1, 0] = 1.0
    np.testing.assert_allclose(mat_eps_shift(mat_euler(G)), mat_mul(G, D))
    # invertible cousin G = diag(1, 1 + x) on A = 0: -eps x/(1 + x)
    G = np.zeros((2, 2, 2, 5), complex)
    G[0, 0, 0, 0] = G[1, 1, 0, 0] = G[1, 1, 0, 1] = 1.0
    zero = SystemSpec.from_array(np.zeros_like(G))
    out = apply_gauge(G, zero).array
    np.testing.assert_allclose(out[1, 1, 1], [0, -1, 1, -1, 1], atol=1e-15)
    assert not np.any(out[1, 1, 0]) and not np.any(out[0])


def test_gauge_not_invertible():
    G = np.zeros((2, 2, 2, 3), complex)
    G[0, 0, 0, 0] = 1.0
    G[1, 1, 0, 1] = 1.0
    with pytest.raises(StructuralError):
        GaugeTransform.from_array(G)


def random_gauge(seed, K, N, scale=0.2):
    rng = np.random.default_rng(seed)
    G = np.zeros((2, 2, K + 1, N + 1), complex)
    G[:, :, 0, 0] = np.eye(2) + scale * rng.normal(size=(2, 2))
    for k in range(2):
        for n in range(3):
            if k or n:
                G[:, :, k, n] = scale * (rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))
    return G


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 10_000))
def test_group_action(seed_a, seed_b):
    sys = random_polynomial_system(seed_a % 50, K=4, N=6)
    G1 = random_gauge(seed_a, 4, 6)
    G2 = random_gauge(seed_b, 4, 6)
    lhs = apply_gauge(mat_mul(G1, G2), sys).array
    rhs = apply_gauge(G1, apply_gauge(G2, sys)).array
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * max(1.0, np.max(np.abs(lhs)))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_spectral_data_gauge_invariant(seed):
    sys = random_polynomial_system(seed % 50, K=4, N=6)
    new = apply_gauge(random_gauge(seed, 4, 6), sys)
    a, b = classical_data(sys), classical_data(new)
    assert abs(a.m1 - b.m1) < 1e-10 and abs(a.m2 - b.m2) < 1e-10
    np.testing.assert_allclose(a.eta1.coeffs, b.eta1.coeffs, atol=1e-10)
    np.testing.assert_allclose(a.rho2.coeffs, b.rho2.coeffs, atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False),
       st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False),
       st.floats(-1.0, 1.0), st.floats(0.0, 0.5))
def test_ordering_reflection_invariance(m1, m2, t0, w):
    arc = ArcSpec(t0, t0 + w)
    refl = ArcSpec(-t0 - w, -t0)
    assert is_nonresonant(m1, m2, arc) == is_nonresonant(np.conj(m1), np.conj(m2), refl)
