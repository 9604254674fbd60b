import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from resonant_transport.exceptions import InvalidGrid
from resonant_transport.spectral import (
    SpaceTimeField,
    StateVector,
    TorusField,
    derivative,
    grid,
    multiply,
    sobolev_norm,
    to_coefficients,
)

from conftest import random_spacetime_field, random_torus_field


def test_to_coefficients_constant():
    f = to_coefficients(np.ones(7))
    assert f.coeff(0) == pytest.approx(1.0, abs=1e-15)
    assert np.max(np.abs(np.delete(f.coeffs, f.K))) < 1e-15


def test_to_coefficients_cos_nine_points():
    f = to_coefficients(np.cos(grid(9)))
    assert f.coeff(1) == pytest.approx(0.5, abs=1e-15)
    assert f.coeff(-1) == pytest.approx(0.5, abs=1e-15)
    assert abs(f.coeff(0)) < 1e-15 and abs(f.coeff(2)) < 1e-15


def test_round_trip_exp_sin():
    samples = np.exp(np.sin(grid(33)))
    f = to_coefficients(samples)
    assert f.K == 16
    assert np.max(np.abs(f.to_samples(33) - samples)) < 1e-12


@pytest.mark.parametrize("n", [1, 2, 8, 10])
def test_to_coefficients_rejects_bad_grids(n):
    with pytest.raises(InvalidGrid):
        to_coefficients(np.ones(n))


def test_sobolev_examples():
    assert sobolev_norm(TorusField.from_modes({1: 1.0}), 1) == pytest.approx(np.sqrt(2))
    for s in (0, 1, 2.5):
        assert sobolev_norm(TorusField.constant(1.0), s) == pytest.approx(1.0)
    assert sobolev_norm(StateVector(TorusField.from_modes({3: 1.0}).coeffs), 2) == pytest.approx(10.0)


def test_derivative_examples():
    d = derivative(TorusField.from_function(np.cos, 4))
    assert np.max(np.abs(d.coeffs - TorusField.from_function(lambda x: -np.sin(x), 4).coeffs)) < 1e-15
    assert np.max(np.abs(derivative(TorusField.constant(3.0)).coeffs)) == 0.0


def test_derivative_against_finite_differences():
    f = TorusField.from_function(lambda x: np.exp(np.cos(x)), 40)
    n = 4097
    h = 2 * np.pi / n
    v = np.real(f.to_samples(n))
    # fourth-order central differences
    fd = (-np.roll(v, -2) + 8 * np.roll(v, -1) - 8 * np.roll(v, 1) + np.roll(v, 2)) / (12 * h)
    assert np.max(np.abs(fd - np.real(f.derivative().to_samples(n)))) < 1e-8


def test_derivative_commutes_with_samples():
    x = grid(257)
    f = TorusField.from_function(lambda x: np.exp(np.cos(x)), 40)
    assert np.max(np.abs(np.real(f.derivative().to_samples(257)) + np.sin(x) * np.exp(np.cos(x)))) < 1e-10


def test_parseval_random_fields(rng):
    for _ in range(100):
        f = random_torus_field(rng, int(rng.integers(1, 30)))
        n = 8 * max(f.K, 8)
        quad = np.mean(np.abs(f.to_samples(n)) ** 2)
        assert sobolev_norm(f, 0) ** 2 == pytest.approx(quad, rel=1e-10)


@given(st.integers(0, 2**31 - 1), st.floats(0, 3), st.floats(0, 3))
def test_sobolev_monotone_in_s(seed, s1, s2):
    f = random_torus_field(np.random.default_rng(seed), 12)
    lo, hi = sorted((s1, s2))
    assert sobolev_norm(f, lo) <= sobolev_norm(f, hi) * (1 + 1e-14)


@given(st.integers(0, 2**31 - 1), st.integers(1, 12), st.integers(1, 12))
def test_products_exact_at_combined_cutoff(seed, K1, K2):
    rng = np.random.default_rng(seed)
    f, g = random_torus_field(rng, K1), random_torus_field(rng, K2)
    p = multiply(f, g)
    assert p.K == K1 + K2
    x = rng.uniform(0, 2 * np.pi, 50)
    assert np.max(np.abs(p(x) - f(x) * g(x))) < 1e-12 * max(1.0, float(np.max(np.abs(f(x) * g(x)))))


def test_product_truncation_records_tail(rng):
    f, g = random_torus_field(rng, 6), random_torus_field(rng, 6)
    p = multiply(f, g, K=3)
    assert p.K == 3 and p.tail > 0


def test_real_field_symmetry_and_sample_round_trip(rng):
    f = random_torus_field(rng, 10)
    assert np.allclose(f.coeffs, np.conj(f.coeffs[::-1]), atol=0, rtol=0)
    g = to_coefficients(f.to_samples(21))
    assert np.max(np.abs(g.coeffs - f.coeffs)) < 1e-12 * np.max(np.abs(f.coeffs))


def test_coefficients_are_read_only(rng):
    f = random_torus_field(rng, 3)
    with pytest.raises(ValueError):
        f.coeffs[0] = 1.0


def test_spacetime_slice_and_symmetry(rng):
    V = random_spacetime_field(rng, 5, 4)
    assert np.allclose(V.coeffs, np.conj(V.coeffs[::-1, ::-1]))
    t = 0.77
    f = V.at_time(t)
    x = rng.uniform(0, 2 * np.pi, 20)
    assert np.max(np.abs(f(x) - V.evaluate(t, x))) < 1e-12
    assert np.max(np.abs(np.imag(f.to_samples(31)))) < 1e-12


def test_spacetime_grid_round_trip(rng):
    V = random_spacetime_field(rng, 6, 5)
    W = SpaceTimeField.from_grid(V.to_grid(11, 13), 6, 5)
    assert np.max(np.abs(W.coeffs - V.coeffs)) < 1e-12


def test_lifted_field():
    f = TorusField.from_function(lambda x: 2 + np.cos(x), 2)
    V = SpaceTimeField.lifted(f, 2)
    t, x = 0.3, 1.1
    assert V.evaluate(t, x) == pytest.approx(2 + np.cos(x + 2 * t), abs=1e-14)


def test_mode_list_serialization(rng):
    V = random_spacetime_field(rng, 3, 2)
    W = SpaceTimeField.from_mode_list(V.to_modes(), Kx=3, Kt=2)
    assert np.array_equal(W.coeffs, V.coeffs)
    f = random_torus_field(rng, 4)
    assert np.array_equal(TorusField.from_mode_list(f.to_modes(), K=4).coeffs, f.coeffs)


def test_parseval_spacetime(rng):
    V = random_spacetime_field(rng, 4, 4)
    assert V.l2() ** 2 == pytest.approx(np.mean(np.abs(V.to_grid(40, 40)) ** 2), rel=1e-12)
