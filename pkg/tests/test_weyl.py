import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from resonant_transport.classical_dynamics import build_escape
from resonant_transport.exceptions import DimensionError, RegionTooSmall
from resonant_transport.spectral import StateVector, TorusField, grid, multiply
from resonant_transport.weyl import (
    Symbol,
    build_atilde,
    build_initial_datum,
    chi,
    commutator_check,
    garding_constant,
    quadratic_form,
    weyl_matrix,
)

from conftest import random_torus_field


def random_state(rng, K):
    c = rng.normal(size=2 * K + 1) + 1j * rng.normal(size=2 * K + 1)
    return StateVector(c)


def transport_reference(p: TorusField, K):
    """Matrix of ``p d_x + p'/2`` on modes ``|k| <= K``."""
    M = np.zeros((2 * K + 1, 2 * K + 1), dtype=complex)
    dp = p.derivative()
    for j in range(-K, K + 1):
        for n in range(-p.K, p.K + 1):
            k = j + n
            if abs(k) <= K:
                M[k + K, j + K] += p.coeff(n) * 1j * j + 0.5 * dp.coeff(n)
    return M


@pytest.fixture(scope="module")
def escape_cos():
    return build_escape(TorusField.from_function(np.cos, 2), 0.01)


def test_chi_shape():
    assert chi(0.3) == 1.0 and chi(1.0) == 0.0 and chi(-2.0) == 0.0
    xi = np.linspace(0.5, 1.0, 101)
    assert np.all(np.diff(chi(xi)) <= 0)


def test_identity_and_derivative_matrices():
    K = 6
    assert np.array_equal(weyl_matrix(Symbol.multiplication(TorusField.constant(1.0)), K).to_dense(), np.eye(2 * K + 1))
    D = weyl_matrix(Symbol.transport(TorusField.constant(1.0)), K).to_dense()
    assert np.array_equal(D, np.diag(1j * np.arange(-K, K + 1)))


def test_single_mode_transport_entries():
    n, K = 2, 8
    p = TorusField.from_modes({n: 1.0}, K=n)
    M = weyl_matrix(Symbol.transport(p), K).to_dense()
    for j in range(-K, K + 1 - n):
        assert M[j + n + K, j + K] == pytest.approx(1j * (j + n / 2), abs=0)
    assert np.max(np.abs(M - transport_reference(p, K))) < 1e-15


@given(st.integers(0, 2**31 - 1), st.integers(1, 8))
def test_transport_identity_random(seed, Kp):
    p = random_torus_field(np.random.default_rng(seed), Kp)
    K = 2 * Kp + 4
    M = weyl_matrix(Symbol.transport(p), K).to_dense()
    assert np.max(np.abs(M - transport_reference(p, K))) < 1e-13 * (1 + K)


@given(st.integers(0, 2**31 - 1))
def test_generator_skew_hermitian(seed):
    w = random_torus_field(np.random.default_rng(seed), 5)
    M = weyl_matrix(Symbol.transport(w), 20)
    assert M.is_skew_hermitian()
    D = M.to_dense()
    assert np.max(np.abs(D + D.conj().T)) < 1e-13


def test_multiplication_consistency(rng):
    p = random_torus_field(rng, 5)
    u = random_torus_field(rng, 10)
    K = 15
    M = weyl_matrix(Symbol.multiplication(p), K)
    prod = multiply(p, u)
    assert np.max(np.abs(M.matvec(u.with_cutoff(K).coeffs) - prod.coeffs)) < 1e-12


def test_matvec_and_banded_agree_with_dense(rng):
    sym = Symbol(const=random_torus_field(rng, 2), linear=random_torus_field(rng, 3), abscut=random_torus_field(rng, 4))
    M = weyl_matrix(sym, 12)
    u = random_state(rng, 12).coeffs
    assert np.max(np.abs(M.matvec(u) - M.to_dense() @ u)) < 1e-12
    l, up, ab = M.to_banded()
    D = M.to_dense()
    for i in range(D.shape[0]):
        for j in range(max(0, i - l), min(D.shape[0], i + up + 1)):
            assert ab[up + i - j, j] == D[i, j]


def test_quadratic_form_examples(rng):
    K = 10
    I = weyl_matrix(Symbol.multiplication(TorusField.constant(1.0)), K)
    u = random_state(rng, K)
    assert quadratic_form(I, u).real == pytest.approx(np.sum(np.abs(u.coeffs) ** 2))
    H = weyl_matrix(Symbol(const=random_torus_field(rng, 3), abscut=random_torus_field(rng, 3)), K)
    assert H.is_hermitian()
    for _ in range(50):
        assert abs(quadratic_form(H, random_state(rng, K)).imag) < 1e-12 * K**2
    A = weyl_matrix(Symbol.profile_abs(TorusField.constant(1.0)), 20)
    e10 = StateVector(TorusField.from_modes({10: 1.0}, K=20).coeffs)
    assert quadratic_form(A, e10).real == pytest.approx(10.0)
    with pytest.raises(DimensionError):
        quadratic_form(A, u)


def test_commutator_affine_exact(rng):
    f = Symbol.transport(random_torus_field(rng, 3))
    g = Symbol.transport(random_torus_field(rng, 3))
    rep = commutator_check(f, g, 40)
    assert rep["max_discrepancy"] < 1e-12 * max(1.0, rep["scale"])
    assert commutator_check(f, f, 20)["max_discrepancy"] < 1e-12


def test_commutator_derivative_with_exponential():
    f = Symbol.transport(TorusField.constant(1.0))
    g = Symbol.multiplication(TorusField.from_modes({1: 1.0}))
    assert commutator_check(f, g, 16)["max_discrepancy"] == 0.0


def test_garding_weak_form(rng):
    K = 32
    M = weyl_matrix(Symbol.profile_abs(TorusField.constant(1.0)), K)
    vals = []
    for _ in range(200):
        u = random_state(rng, K)
        vals.append(quadratic_form(M, u).real / u.l2() ** 2)
    assert min(vals) >= -1.0


def test_atilde_profile_one_and_hermitian(escape_cos, rng):
    sym, M = build_atilde(TorusField.constant(1.0), 16)
    D = M.to_dense()
    assert np.array_equal(D, np.diag(np.diag(D)))
    assert np.allclose(np.diag(D).real, np.abs(np.arange(-16, 17)) * (1 - chi(np.arange(-16, 17))))
    sym, M = build_atilde(escape_cos, 64)
    assert M.is_hermitian()
    a0 = escape_cos.a_tilde.coeff(0).real
    K = 64
    assert M.diagonal(0)[-1].real == pytest.approx(a0 * K, rel=1e-12)


def test_initial_datum(escape_cos):
    W = escape_cos.W_region
    u = build_initial_datum(W, 40, 1024)
    assert u.l2() == pytest.approx(1.0, abs=1e-12)
    a, b = max(W, key=lambda w: w[1] - w[0])
    x = grid(2 * 1024 + 1)
    inside = (np.mod(x - a, 2 * np.pi) < b - a)
    vals = u.to_samples(2 * 1024 + 1)
    assert np.max(np.abs(vals[~inside])) < 1e-12


def test_initial_datum_errors():
    with pytest.raises(RegionTooSmall):
        build_initial_datum([(1.0, 1.001)], 5, 64)
    with pytest.raises(RegionTooSmall):
        build_initial_datum([], 5, 64)
    with pytest.raises(ValueError):
        build_initial_datum([(3.26, 6.16)], 40, 256)


def test_virial_grows_linearly_with_frequency(escape_cos):
    K = 1024
    _, M = build_atilde(escape_cos, K)
    minus = weyl_matrix(-Symbol.profile_abs(escape_cos.a_tilde), K)
    xis = np.arange(20, 61, 10)
    A = [quadratic_form(minus, build_initial_datum(escape_cos.W_region, int(x), K)).real for x in xis]
    C_chi, _ = np.polyfit(xis, A, 1)
    # smallest C_r making A >= C_chi xi0 - C_r on every sample
    C_r = float(np.max(C_chi * xis - np.array(A)))
    assert C_chi > 0.5
    assert C_r < 0.01 * min(A)


def test_garding_constant_examples():
    nonneg = Symbol.multiplication(TorusField.from_function(lambda x: 1 + np.cos(x), 2))
    assert garding_constant(nonneg, 32) == 0.0
    shifted = Symbol.multiplication(TorusField.from_function(lambda x: np.cos(x) - 0.5, 2))
    c = garding_constant(shifted, 32)
    # the multiplication operator is bounded below by min(cos x - 1/2) = -3/2
    assert 0.0 < c <= 1.5 + 1e-12
    assert garding_constant(Symbol.profile_abs(TorusField.from_function(lambda x: 1 + 0.9 * np.cos(x), 2)), 32) >= 0.0
