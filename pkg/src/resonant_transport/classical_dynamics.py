"""Flows of ``x' = X(x)`` on the circle, their cotangent lift, and escape functions.

The Hamiltonian ``h(x, xi) = xi X(x)`` generates::

    x'  = X(x)
    xi' = -xi X'(x)

Zeros with ``X' < 0`` attract (``K+``), zeros with ``X' > 0`` repel (``K-``).
An escape function is a degree-one homogeneous ``a(x, xi) = |xi| a~(x)``
whose bracket ``{h, a} = |xi| (X a~' - X' a~)`` is bounded below by
``delta |xi|``.  Writing ``g = X a~' - X' a~ = X**2 (a~ / X)'`` turns the
construction into one-dimensional quadratures on each arc between zeros.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .exceptions import (
    DegenerateVectorField,
    EscapeConstructionFailed,
    IntegrationFailure,
    NoHyperbolicStructure,
)
from .resonance import DEGENERATE, STABLE, Tolerances, ZeroRecord, classify_profile
from .spectral import TorusField, from_samples, grid

__all__ = [
    "CotangentPoint",
    "FlowStructure",
    "EscapeFunction",
    "flow_torus",
    "flow_cotangent",
    "analyze_flow",
    "check_attractor_structure",
    "transit_time",
    "phi_ramp",
    "phi_ramp_derivative",
    "build_escape",
    "verify_escape",
]

TWO_PI = 2.0 * np.pi
_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)


# ---------------------------------------------------------------------------
# flows
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CotangentPoint:
    x: float
    xi: float


def _as_callables(X: TorusField):
    dX = X.derivative()
    return (lambda x: np.real(X(x))), (lambda x: np.real(dX(x)))


def flow_torus(X: TorusField, x0, t, rtol=1e-10):
    """Time-``t`` map of ``x' = X(x)`` (not reduced mod 2pi).  ``x0`` may be an array."""
    f, _ = _as_callables(X)
    x0 = np.atleast_1d(np.asarray(x0, float))
    if t == 0:
        return x0 if x0.size > 1 else float(x0[0])
    sol = solve_ivp(lambda s, y: f(y), (0.0, t), x0, method="DOP853", rtol=rtol, atol=rtol * 1e-2)
    if sol.status < 0:
        raise IntegrationFailure(sol.message)
    out = sol.y[:, -1]
    return out if out.size > 1 else float(out[0])


def flow_cotangent(X: TorusField, z0: CotangentPoint, t, rtol=1e-12) -> CotangentPoint:
    """Hamiltonian flow of ``xi X(x)``.

    ``xi`` is carried as ``xi0 exp(-int X'(x(s)) ds)``, which is the same ODE
    written for ``log|xi|``; it keeps the sign of ``xi`` and the invariant
    line ``xi = 0`` exactly.
    """
    f, df = _as_callables(X)
    if t == 0:
        return CotangentPoint(float(z0.x), float(z0.xi))
    rhs = lambda s, y: np.array([f(y[0]), -df(y[0])])
    sol = solve_ivp(rhs, (0.0, t), [z0.x, 0.0], method="DOP853", rtol=rtol, atol=rtol * 1e-2)
    if sol.status < 0:
        raise IntegrationFailure(sol.message)
    x, logs = sol.y[:, -1]
    return CotangentPoint(float(x), float(z0.xi * np.exp(logs)))


# ---------------------------------------------------------------------------
# flow structure
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FlowStructure:
    """Zeros of ``X`` split into attractors and repellers, with neighbourhood radii.

    ``radii[i]`` is the radius ``r`` around ``zeros[i]`` on which
    ``|X' - X'(x_i)| <= nu/4``; the neighbourhoods ``U+-`` used by the
    escape construction have radius ``r/2``.
    """

    zeros: tuple
    K_plus: tuple
    K_minus: tuple
    nu: float
    radii: tuple
    U_plus: tuple
    U_minus: tuple
    W_region: tuple = ()

    def arcs(self):
        """``(left, right, sign, i_left, i_right)`` for each arc between consecutive zeros."""
        z = [r.location for r in self.zeros]
        out = []
        for i in range(len(z)):
            j = (i + 1) % len(z)
            right = z[j] if j > i else z[j] + TWO_PI
            sign = 1 if self.zeros[i].slope > 0 else -1
            out.append((z[i], right, sign, i, j))
        return out


def _radius(dX, x0, slope, nu, cap, n=2000):
    s = np.linspace(0.0, cap, n + 1)[1:]
    bad = (np.abs(dX(x0 + s) - slope) > nu / 4) | (np.abs(dX(x0 - s) - slope) > nu / 4)
    if not np.any(bad):
        return float(cap)
    first = int(np.argmax(bad))
    return float(s[first - 1]) if first > 0 else float(s[0] / 2)


def analyze_flow(X: TorusField, tolerances=Tolerances(), check=False) -> FlowStructure:
    """Attractor/repeller structure of ``x' = X(x)``.

    With ``check=True`` also runs :func:`check_attractor_structure`.
    """
    report = classify_profile(X, tolerances)
    if report.verdict == STABLE or not report.zeros:
        raise NoHyperbolicStructure("X has no zeros")
    if report.verdict == DEGENERATE:
        raise DegenerateVectorField(f"X has a degenerate zero (min |slope| = {report.nu:.3g})")
    zeros = tuple(report.zeros)
    nu = report.nu
    _, dX = _as_callables(X)
    loc = np.array([z.location for z in zeros])
    if len(zeros) > 1:
        gaps = np.diff(np.concatenate([loc, [loc[0] + TWO_PI]]))
        cap = 0.5 * float(np.min(gaps))
    else:
        cap = np.pi
    radii = tuple(_radius(dX, z.location, z.slope, nu, cap) for z in zeros)
    K_plus = tuple(z for z in zeros if z.slope < 0)
    K_minus = tuple(z for z in zeros if z.slope > 0)
    U_plus = tuple((z.location, r / 2) for z, r in zip(zeros, radii) if z.slope < 0)
    U_minus = tuple((z.location, r / 2) for z, r in zip(zeros, radii) if z.slope > 0)
    fs = FlowStructure(zeros, K_plus, K_minus, float(nu), radii, U_plus, U_minus)
    if check:
        check_attractor_structure(X, fs)
    return fs


def _circle_dist(a, b):
    d = np.mod(np.asarray(a) - np.asarray(b), TWO_PI)
    return np.minimum(d, TWO_PI - d)


def check_attractor_structure(X: TorusField, fs: FlowStructure, n=32, tol=1e-3, T=None, seed=0):
    """Random starts must reach ``K+`` forward and ``K-`` backward in time.

    Returns the largest final distances ``(forward, backward)``; raises
    ``IntegrationFailure`` if either exceeds ``tol`` by time ``T``
    (default ``40/nu``).
    """
    T = 40.0 / fs.nu if T is None else T
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(0, TWO_PI, n)
    kp = np.array([z.location for z in fs.K_plus])
    km = np.array([z.location for z in fs.K_minus])
    fwd = np.atleast_1d(flow_torus(X, x0, T))
    bwd = np.atleast_1d(flow_torus(X, x0, -T))
    df = float(np.max(np.min(_circle_dist(fwd[:, None], kp[None, :]), axis=1)))
    db = float(np.max(np.min(_circle_dist(bwd[:, None], km[None, :]), axis=1)))
    if df > tol or db > tol:
        raise IntegrationFailure(f"trajectories did not converge (forward {df:.2e}, backward {db:.2e})")
    return df, db


# ---------------------------------------------------------------------------
# one-dimensional quadrature helpers
# ---------------------------------------------------------------------------

class _Antiderivative:
    """``F(x) = int_a^x f`` on ``[a, b]`` by composite Gauss-Legendre."""

    def __init__(self, f, a, b, cells=512):
        self.f, self.a, self.b = f, float(a), float(b)
        self.nodes = np.linspace(a, b, cells + 1)
        self.cum = np.concatenate([[0.0], np.cumsum(self._gauss(self.nodes[:-1], self.nodes[1:]))])

    def _gauss(self, lo, hi):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        pts = mid[..., None] + half[..., None] * _GL_X
        return half * np.sum(self.f(pts) * _GL_W, axis=-1)

    def __call__(self, x):
        x = np.clip(np.asarray(x, float), self.a, self.b)
        h = self.nodes[1] - self.nodes[0]
        i = np.clip(((x - self.a) / h).astype(int), 0, len(self.nodes) - 2)
        return self.cum[i] + self._gauss(self.nodes[i], x)

    @property
    def total(self):
        return float(self.cum[-1])


def _smoothstep(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    s = np.clip(np.asarray(s, float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
        b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return a / (a + b)


def _bump(s):
    """C-infinity bump on (-1, 1), value 1 at 0."""
    s = np.asarray(s, float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        return np.where(np.abs(s) < 1, np.exp(1.0 - 1.0 / (1.0 - np.minimum(s * s, 1 - 1e-300))), 0.0)


def phi_ramp(tau, s):
    """Non-decreasing ramp: 0 for ``tau <= -s``, ``s tau`` on ``[s, 1/s - s]``, 1 beyond ``1/s + s``.

    The two corner intervals are filled by quintic Hermite blends matching
    value, slope and curvature, which keeps ``0 <= phi' <= s``.
    """
    tau = np.asarray(tau, float)
    out = np.clip(s * tau, 0.0, 1.0)
    lo = np.abs(tau) < s
    out = np.where(lo, _corner(tau + s, 2 * s, s), out)
    hi = np.abs(tau - 1.0 / s) < s
    out = np.where(hi, 1.0 - _corner(1.0 / s + s - tau, 2 * s, s), out)
    out = np.where(tau <= -s, 0.0, out)
    out = np.where(tau >= 1.0 / s + s, 1.0, out)
    return out


def _corner(u, width, s):
    """Quintic on [0, width] from (0, 0, 0) to (s*width/2, s, 0) in (value, slope, curvature)."""
    v = np.clip(u / width, 0.0, 1.0)
    # p(v) = width * s * (v^3 - v^4/2): p(0)=p'(0)=p''(0)=0, p(1)=ws/2, p'(1)/w = s, p''(1)=0
    return width * s * (v**3 - 0.5 * v**4)


def phi_ramp_derivative(tau, s):
    tau = np.asarray(tau, float)
    out = np.where((tau > s) & (tau < 1.0 / s - s), s, 0.0)
    lo = np.abs(tau) < s
    v = np.clip((tau + s) / (2 * s), 0, 1)
    out = np.where(lo, s * (3 * v**2 - 2 * v**3), out)
    hi = np.abs(tau - 1.0 / s) < s
    v = np.clip((1.0 / s + s - tau) / (2 * s), 0, 1)
    out = np.where(hi, s * (3 * v**2 - 2 * v**3), out)
    return out


# ---------------------------------------------------------------------------
# escape function
# ---------------------------------------------------------------------------

@dataclass
class _Arc:
    left: float
    right: float
    sign: int
    z_minus: float  # repeller end
    z_plus: float  # attracting end
    slope_minus: float
    slope_plus: float
    b_minus: float  # boundary of U- on this arc
    b_plus: float
    r_minus: float
    r_plus: float
    alpha: float = 0.0
    c: float = 0.0
    H: object = None
    T: object = None
    Tp: object = None
    Tm: object = None


@dataclass(frozen=True)
class EscapeFunction:
    """``a(x, xi) = |xi| a_tilde(x)`` together with the construction intermediates.

    Sampled intermediates live on ``x_grid``; ``t_tilde`` contains ``+inf``
    on ``K+`` and ``-inf`` on ``K-``.
    """

    a_tilde: TorusField
    sigma: float
    delta_verified: float
    flow: FlowStructure
    x_grid: np.ndarray
    a_samples: np.ndarray
    k_profile: np.ndarray
    m_tilde: np.ndarray
    ell_plus: np.ndarray
    ell_minus: np.ndarray
    eta_sigma: np.ndarray
    eta_flow_derivative: np.ndarray
    t_tilde: np.ndarray
    gluing_constant: float
    balanced: bool
    W_region: tuple = ()
    builder: object = field(default=None, repr=False, compare=False)

    def to_dict(self):
        return {
            "sigma": self.sigma,
            "delta_verified": self.delta_verified,
            "nu": self.flow.nu,
            "K_plus": [z.location for z in self.flow.K_plus],
            "K_minus": [z.location for z in self.flow.K_minus],
            "W_region": [list(w) for w in self.W_region],
            "gluing_constant": self.gluing_constant,
            "balanced": self.balanced,
            "max_abs_X_eta_prime": float(np.max(np.abs(self.eta_flow_derivative))),
            "a_tilde": self.a_tilde.to_modes(tol=1e-15),
        }


class _EscapeBuilder:
    """Evaluates every construction ingredient at arbitrary points."""

    def __init__(self, X: TorusField, fs: FlowStructure, sigma, balance=True, cells=512):
        self.X, self.fs, self.sigma = X, fs, float(sigma)
        self.f, self.df = _as_callables(X)
        self.nu = fs.nu
        self.floor = fs.nu / 4
        self.s = sigma / 10
        self.balanced = balance
        zl = [z.location for z in fs.zeros]
        self.arcs = []
        for left, right, sign, i, j in fs.arcs():
            zi, zj = fs.zeros[i], fs.zeros[j]
            ri, rj = fs.radii[i], fs.radii[j]
            if sign > 0:
                arc = _Arc(left, right, 1, left, right, zi.slope, zj.slope, left + ri / 2, right - rj / 2, ri, rj)
            else:
                arc = _Arc(left, right, -1, right, left, zj.slope, zi.slope, right - rj / 2, left + ri / 2, rj, ri)
            self.arcs.append(arc)
        self.zero_locs = np.array(zl)
        self.zero_slopes = np.array([z.slope for z in fs.zeros])
        self.radii = np.array(fs.radii)
        for arc in self.arcs:
            self._prepare(arc, cells)

    # -- m~ -----------------------------------------------------------
    def _blend_weight(self, x):
        """1 within r/2 of a zero, 0 beyond r, smooth in between."""
        w = np.zeros_like(np.asarray(x, float))
        for z, r in zip(self.zero_locs, self.radii):
            d = _circle_dist(x, z)
            w = np.maximum(w, 1.0 - _smoothstep((d - r / 2) / (r / 2)))
        return w

    def m_base(self, x):
        w = self._blend_weight(x)
        return w * np.abs(self.df(x)) + (1.0 - w) * self.floor

    def _arc_bump(self, arc, x):
        lo, hi = min(arc.b_minus, arc.b_plus), max(arc.b_minus, arc.b_plus)
        mid, half = 0.5 * (lo + hi), 0.25 * (hi - lo)
        return _bump((x - mid) / half)

    def _arc_of(self, x):
        """Index of the arc containing each x and the unwrapped coordinate."""
        x = np.mod(np.asarray(x, float), TWO_PI)
        lefts = np.array([a.left for a in self.arcs])
        idx = np.searchsorted(lefts, x, side="right") - 1
        xu = np.where(idx < 0, x + TWO_PI, x)
        idx = np.where(idx < 0, len(self.arcs) - 1, idx)
        # points past the last zero belong to the wrapping arc
        return idx, xu

    def m_tilde(self, x):
        x = np.asarray(x, float)
        idx, xu = self._arc_of(x)
        out = self.m_base(xu)
        for n, arc in enumerate(self.arcs):
            sel = idx == n
            if np.any(sel) and arc.alpha != 0:
                out = np.where(sel, out + arc.alpha * self._arc_bump(arc, xu), out)
        return out

    # -- per-arc quadratures ------------------------------------------
    def _prepare(self, arc: _Arc, cells):
        lo, hi = min(arc.b_minus, arc.b_plus), max(arc.b_minus, arc.b_plus)
        S = 1.0 / abs(self.f(arc.b_plus)) + 1.0 / abs(self.f(arc.b_minus))
        base = _Antiderivative(lambda y: self.m_base(y) / self.f(y) ** 2, lo, hi, cells)
        bump = _Antiderivative(lambda y: self._arc_bump(arc, y) / self.f(y) ** 2, lo, hi, cells)
        alpha = (S - base.total) / bump.total if self.balanced else 0.0
        if alpha < 0:
            # a negative correction must not push m~ under half the floor
            worst = np.min(self.m_base(np.linspace(lo, hi, 801)) + alpha * self._arc_bump(arc, np.linspace(lo, hi, 801)))
            if worst < self.floor / 2:
                warnings.warn("arc cannot be balanced; falling back to the unbalanced gluing", RuntimeWarning)
                alpha = 0.0
                self.balanced = False
        arc.alpha = float(alpha)
        arc.H = _Antiderivative(lambda y: (self.m_base(y) + arc.alpha * self._arc_bump(arc, y)) / self.f(y) ** 2, lo, hi, cells)
        # c = (l+ - l-)/X, constant on the arc
        oriented = arc.H.total * (1 if arc.b_plus > arc.b_minus else -1)
        arc.c = float(1.0 / self.f(arc.b_plus) + 1.0 / self.f(arc.b_minus) - oriented)
        # transit-time pieces: regular part of 1/X near each end
        arc.T = _Antiderivative(lambda y: 1.0 / self.f(y), lo, hi, cells)
        zp, sp = arc.z_plus, arc.slope_plus
        zm, sm = arc.z_minus, arc.slope_minus
        arc.Tp = _Antiderivative(
            lambda y: 1.0 / self.f(y) - 1.0 / (sp * (y - zp)), min(arc.b_plus, zp), max(arc.b_plus, zp), 64
        )
        arc.Tm = _Antiderivative(
            lambda y: 1.0 / self.f(y) - 1.0 / (sm * (y - zm)), min(arc.b_minus, zm), max(arc.b_minus, zm), 64
        )

    def _oriented_H(self, arc, x_from, x_to):
        return arc.H(x_to) - arc.H(x_from)

    def ell(self, x):
        """``(ell+, ell-)`` profiles at arbitrary points (``nan`` where undefined)."""
        x = np.asarray(x, float)
        idx, xu = self._arc_of(x)
        lp = np.full(x.shape, np.nan)
        lm = np.full(x.shape, np.nan)
        for n, arc in enumerate(self.arcs):
            sel = idx == n
            if not np.any(sel):
                continue
            y = xu[sel]
            Xy = self.f(y)
            lo, hi = min(arc.b_minus, arc.b_plus), max(arc.b_minus, arc.b_plus)
            mid = (y >= lo) & (y <= hi)
            near_plus = ~mid & (np.abs(y - arc.z_plus) <= np.abs(arc.b_plus - arc.z_plus))
            near_minus = ~mid & ~near_plus
            ellp = np.empty(y.shape)
            ellm = np.empty(y.shape)
            Fp = 1.0 / self.f(arc.b_plus) - self._oriented_H(arc, y, arc.b_plus)
            Fm = -1.0 / self.f(arc.b_minus) + self._oriented_H(arc, arc.b_minus, y)
            ellp[mid] = (Xy * Fp)[mid]
            ellm[mid] = (Xy * Fm)[mid]
            ellp[near_plus] = 1.0
            ellm[near_plus] = (1.0 - arc.c * Xy)[near_plus]
            ellm[near_minus] = -1.0
            ellp[near_minus] = (-1.0 + arc.c * Xy)[near_minus]
            # the undefined side at the zero itself
            ellm[np.abs(y - arc.z_plus) == 0] = np.nan
            ellp[np.abs(y - arc.z_minus) == 0] = np.nan
            lp[sel], lm[sel] = ellp, ellm
        return lp, lm

    def t_tilde(self, x):
        """Signed time from ``dU-`` along the flow; +-inf on ``K+-``."""
        x = np.asarray(x, float)
        idx, xu = self._arc_of(x)
        out = np.empty(x.shape)
        for n, arc in enumerate(self.arcs):
            sel = idx == n
            if not np.any(sel):
                continue
            y = xu[sel]
            lo, hi = min(arc.b_minus, arc.b_plus), max(arc.b_minus, arc.b_plus)
            yc = np.clip(y, lo, hi)
            t = arc.T(yc) - arc.T(arc.b_minus)
            tb = arc.T(arc.b_plus) - arc.T(arc.b_minus)
            near_plus = (y < lo) | (y > hi)
            near_plus &= np.abs(y - arc.z_plus) <= np.abs(arc.b_plus - arc.z_plus)
            near_minus = ((y < lo) | (y > hi)) & ~near_plus
            with np.errstate(divide="ignore", invalid="ignore"):
                dp = np.abs((y - arc.z_plus) / (arc.b_plus - arc.z_plus))
                tp = tb + arc.Tp(y) - arc.Tp(arc.b_plus) + np.log(dp) / arc.slope_plus
                dm = np.abs((y - arc.z_minus) / (arc.b_minus - arc.z_minus))
                tm = arc.Tm(y) - arc.Tm(arc.b_minus) + np.log(dm) / arc.slope_minus
            t = np.where(near_plus, tp, t)
            t = np.where(near_minus, tm, t)
            t = np.where(y == arc.z_plus, np.inf, t)
            t = np.where(y == arc.z_minus, -np.inf, t)
            out[sel] = t
        # exact zeros belong to two arcs; flag them explicitly
        for z, sl in zip(self.zero_locs, self.zero_slopes):
            hit = _circle_dist(x, z) < 1e-13
            out[hit] = np.inf if sl < 0 else -np.inf
        return out

    def eta(self, x):
        tt = self.t_tilde(x)
        return phi_ramp(np.where(np.isfinite(tt), tt, np.sign(tt) * 1e300), self.s)

    def eta_flow_derivative(self, x):
        """``X eta' = phi'(t~)`` since ``t~`` increases at unit rate along the flow."""
        tt = self.t_tilde(x)
        return phi_ramp_derivative(np.where(np.isfinite(tt), tt, np.sign(tt) * 1e300), self.s)

    def k_profile(self, x):
        w = self._blend_weight(x)
        near = np.argmin(_circle_dist(np.asarray(x, float)[..., None], self.zero_locs), axis=-1)
        return w * np.where(self.zero_slopes[near] < 0, 1.0, -1.0)

    def a(self, x):
        x = np.asarray(x, float)
        eta = self.eta(x)
        lp, lm = self.ell(x)
        lp = np.where(np.isnan(lp), 0.0, lp)
        lm = np.where(np.isnan(lm), 0.0, lm)
        return eta * lp + (1.0 - eta) * lm

    @property
    def gluing_constant(self):
        """``max |ell+ - ell-| = max_arcs |c| max |X|`` on the unit cosphere."""
        xs = grid(4096)
        lp, lm = self.ell(xs)
        d = np.abs(lp - lm)
        return float(np.nanmax(d))


def _arcs_where(x, mask):
    """Maximal arcs ``(a, b)`` (possibly wrapping past 2pi) of grid points where ``mask`` holds."""
    if not np.any(mask):
        return ()
    if np.all(mask):
        return ((0.0, TWO_PI),)
    h = x[1] - x[0]
    start = int(np.argmin(mask))  # a point outside the set
    m = np.roll(mask, -start)
    xr = np.roll(x, -start)
    xr = np.where(np.arange(x.size) + start >= x.size, xr + TWO_PI, xr)
    arcs = []
    i = 0
    while i < m.size:
        if m[i]:
            j = i
            while j + 1 < m.size and m[j + 1]:
                j += 1
            arcs.append((float(xr[i] - h / 2), float(xr[j] + h / 2)))
            i = j + 1
        else:
            i += 1
    return tuple(arcs)


def verify_escape(E, X: TorusField, grid_size=4096):
    """Minimum of ``g = X a~' - X' a~`` on a grid and the arcs where ``a~ <= -1/2``.

    ``E`` is an :class:`EscapeFunction` or directly the profile ``a~`` as a
    :class:`TorusField`.
    """
    a = E.a_tilde if isinstance(E, EscapeFunction) else E
    x = grid(grid_size)
    av = np.real(a.to_samples(grid_size))
    g = np.real(X.to_samples(grid_size)) * np.real(a.derivative().to_samples(grid_size)) - np.real(
        X.derivative().to_samples(grid_size)
    ) * av
    return float(np.min(g)), _arcs_where(x, av <= -0.5)


def bracket_profile(a: TorusField, X: TorusField, n=4096):
    x = grid(n)
    av = np.real(a.to_samples(n))
    g = np.real(X.to_samples(n)) * np.real(a.derivative().to_samples(n)) - np.real(X.derivative().to_samples(n)) * av
    return x, g, av


def build_escape(X: TorusField, sigma=0.01, n_fine=4096, K_a=256, balance=True, tolerances=Tolerances()):
    """Escape function for ``h = xi X(x)``.

    Steps: local profile ``k~ = +-1`` near ``K+-``; positive ``m~`` equal to
    ``|X'|`` near the zeros with floor ``nu/4`` elsewhere; ``ell+-`` from the
    stabilized quadrature ``ell/X = const + int m~/X**2``; gluing
    ``a~ = eta ell+ + (1 - eta) ell-`` with ``eta = phi_{sigma/10}(t~)``.

    With ``balance=True`` a bump of ``m~`` in the middle of every arc is
    scaled so that ``ell+ = ell-`` there; the gluing is then exact and the
    resulting profile is smooth on the grid.  The returned margin
    ``delta_verified`` is measured on the spectral profile.
    """
    fs = analyze_flow(X, tolerances)
    b = _EscapeBuilder(X, fs, sigma, balance=balance)
    x = grid(n_fine)
    a_samples = b.a(x)
    a_field = from_samples(a_samples, K_a, is_real=True)
    delta, W = verify_escape(a_field, X, n_fine)
    if delta <= 0:
        xg, g, _ = bracket_profile(a_field, X, n_fine)
        i = int(np.argmin(g))
        raise EscapeConstructionFailed(
            f"bracket margin {delta:.3g} <= 0 at x = {xg[i]:.6f}", x=float(xg[i]), margin=delta
        )
    lp, lm = b.ell(x)
    fs = FlowStructure(fs.zeros, fs.K_plus, fs.K_minus, fs.nu, fs.radii, fs.U_plus, fs.U_minus, W)
    return EscapeFunction(
        a_tilde=a_field,
        sigma=float(sigma),
        delta_verified=delta,
        flow=fs,
        x_grid=x,
        a_samples=a_samples,
        k_profile=b.k_profile(x),
        m_tilde=b.m_tilde(x),
        ell_plus=lp,
        ell_minus=lm,
        eta_sigma=b.eta(x),
        eta_flow_derivative=b.eta_flow_derivative(x),
        t_tilde=b.t_tilde(x),
        gluing_constant=b.gluing_constant,
        balanced=b.balanced,
        W_region=W,
        builder=b,
    )


def transit_time(fs: FlowStructure, X: TorusField, x, sigma=0.01):
    """Time ``t~(x)`` for which the backward flow from ``x`` reaches ``dU-``.

    Computed as ``int dy / X(y)`` from the boundary point (the hitting time
    of ``x' = X`` written as a quadrature), with the logarithmic part near
    each zero integrated in closed form.  ``+inf`` on ``K+``, ``-inf`` on ``K-``.
    """
    b = _EscapeBuilder(X, fs, sigma, balance=False)
    out = b.t_tilde(np.atleast_1d(np.asarray(x, float)))
    return out if np.ndim(x) else float(out[0])
