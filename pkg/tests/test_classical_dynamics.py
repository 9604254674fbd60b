import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from resonant_transport.classical_dynamics import (
    CotangentPoint,
    analyze_flow,
    build_escape,
    check_attractor_structure,
    flow_cotangent,
    flow_torus,
    phi_ramp,
    phi_ramp_derivative,
    transit_time,
    verify_escape,
)
from resonant_transport.exceptions import DegenerateVectorField, NoHyperbolicStructure
from resonant_transport.spectral import TorusField, grid

COS = TorusField.from_function(np.cos, 2)


@pytest.fixture(scope="module")
def escape_cos():
    return build_escape(COS, 0.01)


def test_flow_torus_examples():
    assert flow_torus(TorusField.zeros(2), 1.3, 5.0) == pytest.approx(1.3)
    for t in (0.5, 1.0, 2.0):
        assert np.sin(flow_torus(COS, 0.0, t)) == pytest.approx(np.tanh(t), abs=1e-8)
    assert flow_torus(COS, np.pi / 2, 3.0) == pytest.approx(np.pi / 2, abs=1e-12)


def test_flow_cotangent_examples():
    for t in (0.5, 1.0, 3.0):
        z = flow_cotangent(COS, CotangentPoint(np.pi / 2, 1.0), t)
        assert z.x == pytest.approx(np.pi / 2, abs=1e-12)
        assert z.xi == pytest.approx(np.exp(t), rel=1e-9)
        z = flow_cotangent(COS, CotangentPoint(0.0, 1.0), t)
        assert z.xi == pytest.approx(np.cosh(t), rel=1e-9)


@pytest.mark.parametrize("lam", [2.0, 10.0])
def test_cotangent_homogeneity(lam):
    z0 = CotangentPoint(0.4, 0.7)
    a = flow_cotangent(COS, z0, 2.5)
    b = flow_cotangent(COS, CotangentPoint(z0.x, lam * z0.xi), 2.5)
    assert b.x == pytest.approx(a.x, abs=1e-12)
    assert b.xi == pytest.approx(lam * a.xi, rel=1e-12)


@given(st.floats(0, 2 * np.pi), st.floats(-5, 5), st.floats(-20, 20))
def test_energy_conservation_and_sign(x0, xi0, t):
    X = TorusField.from_function(lambda x: np.cos(x) + 0.3 * np.sin(2 * x), 3)
    z = flow_cotangent(X, CotangentPoint(x0, xi0), t)
    h0 = xi0 * float(np.real(X(x0)))
    h = z.xi * float(np.real(X(z.x)))
    assert abs(h - h0) / max(1.0, abs(h0)) < 1e-8
    assert np.sign(z.xi) == np.sign(xi0)


def test_analyze_flow_examples():
    fs = analyze_flow(COS, check=True)
    assert [z.location for z in fs.K_plus] == pytest.approx([np.pi / 2])
    assert [z.location for z in fs.K_minus] == pytest.approx([3 * np.pi / 2])
    assert fs.nu == pytest.approx(1.0)
    fs = analyze_flow(TorusField.from_function(np.sin, 2))
    assert [z.location for z in fs.K_plus] == pytest.approx([np.pi])
    assert [z.location % (2 * np.pi) for z in fs.K_minus] == pytest.approx([0.0], abs=1e-12)
    with pytest.raises(NoHyperbolicStructure):
        analyze_flow(TorusField.from_function(lambda x: 2 + np.cos(x), 2))
    with pytest.raises(DegenerateVectorField):
        analyze_flow(TorusField.from_function(lambda x: 1 + np.cos(x), 2))


def test_zero_split_and_radii():
    X = TorusField.from_function(lambda x: np.cos(2 * x) + 0.2 * np.sin(x), 3)
    fs = analyze_flow(X)
    assert len(fs.K_plus) + len(fs.K_minus) == len(fs.zeros)
    assert all(z.slope < 0 for z in fs.K_plus) and all(z.slope > 0 for z in fs.K_minus)
    dX = X.derivative()
    for z, r in zip(fs.zeros, fs.radii):
        s = np.linspace(-r, r, 201)
        assert np.max(np.abs(np.real(dX(z.location + s)) - z.slope)) <= fs.nu / 4 + 1e-9
    assert max(check_attractor_structure(X, fs)) < 1e-3


def test_transit_time_examples():
    fs = analyze_flow(COS)
    zm, r = fs.U_minus[0]
    assert transit_time(fs, COS, zm - r) == pytest.approx(0.0, abs=1e-12)
    assert transit_time(fs, COS, np.pi / 2) == np.inf
    assert transit_time(fs, COS, 3 * np.pi / 2) == -np.inf


def test_transit_time_cocycle():
    X = TorusField.from_function(lambda x: np.cos(x) + 0.3 * np.sin(2 * x), 3)
    fs = analyze_flow(X)
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = rng.uniform(0, 2 * np.pi)
        t = rng.uniform(-3, 3)
        moved = flow_torus(X, x, t, rtol=1e-12)
        assert transit_time(fs, X, moved) - transit_time(fs, X, x) == pytest.approx(t, abs=1e-6)


def test_phi_ramp_shape():
    s = 0.001
    tau = np.linspace(-5 / s, 5 / s, 20001)
    p = phi_ramp(tau, s)
    assert p[0] == 0.0 and p[-1] == 1.0
    assert np.all(np.diff(p) >= -1e-15)
    assert np.max(phi_ramp_derivative(tau, s)) <= 10 * s * (1 + 1e-12)


@pytest.mark.parametrize(
    "f,nu",
    [(np.cos, 1.0), (np.sin, 1.0), (lambda x: np.cos(2 * x), 2.0)],
)
def test_escape_margin_canonical(f, nu):
    E = build_escape(TorusField.from_function(f, 3), 0.01)
    assert E.delta_verified >= nu / 8 - 0.02


def test_escape_cos_values(escape_cos):
    E = escape_cos
    assert E.a_tilde(3 * np.pi / 2).real == pytest.approx(-1.0, abs=1e-6)
    assert E.a_tilde(np.pi / 2).real == pytest.approx(1.0, abs=1e-6)
    assert np.max(np.abs(E.eta_flow_derivative)) < E.sigma
    assert len(E.W_region) == 1
    a, b = E.W_region[0]
    assert a < 3 * np.pi / 2 < b


def test_escape_intermediates(escape_cos):
    E = escape_cos
    assert np.all(E.m_tilde >= E.flow.nu / 4 - 1e-12)
    t = E.t_tilde
    assert np.isinf(t).sum() <= 2
    assert np.all(np.diff(E.eta_sigma[(E.x_grid > np.pi / 2) & (E.x_grid < 3 * np.pi / 2)]) <= 1e-15)
    d = E.to_dict()
    assert d["delta_verified"] == E.delta_verified and d["balanced"]


def test_ell_plus_bracket_identity(escape_cos):
    b = escape_cos.builder
    rng = np.random.default_rng(7)
    x = rng.uniform(np.pi / 2 - 1.2, np.pi / 2 + 1.2, 50)
    h = 1e-5
    lp = lambda y: b.ell(y)[0]
    d = (lp(x + h) - lp(x - h)) / (2 * h)
    g = np.cos(x) * d + np.sin(x) * lp(x)
    assert np.max(np.abs(g - b.m_tilde(x))) < 1e-4


def test_verify_escape_constant_profile():
    delta, _ = verify_escape(TorusField.constant(1.0), COS)
    assert delta == pytest.approx(-1.0, abs=1e-6)


def test_verify_escape_is_linear_in_X(escape_cos):
    a = escape_cos.a_tilde
    d1, _ = verify_escape(a, COS)
    d2, _ = verify_escape(a, 2.0 * COS)
    assert d2 == pytest.approx(2 * d1, rel=1e-12)
