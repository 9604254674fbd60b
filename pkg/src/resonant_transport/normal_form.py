"""Conjugation of the transport generator by unitary changes of variables.

A displacement ``beta(t, x)`` with ``1 + beta_x > 0`` defines the
diffeomorphism ``phi(x) = x + beta(t, x)`` and the unitary map::

    (Phi u)(x) = (1 + beta_x(t, x))**0.5 * u(t, x + beta(t, x))

If ``u = Phi v`` and ``u`` solves ``u_t = w u_x + (1/2) w_x u`` then ``v``
solves the same equation with the pushed-forward coefficient::

    w'(t, y) = [(1 + beta_x) w - beta_t](t, phi^{-1}(y))

This formula is exact; the normal form below is built by iterating it with
``beta`` chosen from the homological equation, so no expansion in the small
parameter is ever truncated by hand.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    ConvergenceFailure,
    DiffeoNotInvertible,
    NormalFormFailed,
    NotResonantlyStable,
)
from .resonance import _check_m, nonresonant_part, resonant_average
from .spectral import SpaceTimeField, StateVector, TorusField, from_samples, grid, trig_eval

__all__ = [
    "epsilon_scan",
    "invertibility_threshold",
    "DiffeoTransform",
    "NormalFormChain",
    "solve_homological",
    "homological_residual",
    "invert_diffeo",
    "make_transform",
    "apply_transform",
    "pushforward_coefficient",
    "translate",
    "normal_form_reduce",
    "constant_coefficient_reduce",
    "lambda_transform",
]

MARGIN_THRESHOLD = 0.1
FIXED_POINT_TOL = 1e-13
FIXED_POINT_MAX_ITER = 200


def solve_homological(W: SpaceTimeField, m) -> SpaceTimeField:
    """Solve ``W + m beta_x - beta_t = <W>_m(x + mt)`` mode by mode.

    ``beta_{k,l} = w_{k,l} / (i (l - k m))`` off the resonant lattice and 0 on it.
    """
    m = _check_m(m)
    k = W.k_index[:, None]
    l = W.l_index[None, :]
    div = l - m * k
    with np.errstate(divide="ignore", invalid="ignore"):
        beta = np.where(div != 0, W.coeffs / (1j * np.where(div != 0, div, 1)), 0.0)
    return SpaceTimeField(beta, is_real=W.is_real)


def homological_residual(W: SpaceTimeField, beta: SpaceTimeField, m) -> float:
    """L2(T^2) norm of ``W + m beta_x - beta_t - <W>_m(x + mt)`` (Parseval)."""
    from .resonance import resonant_part

    r = W + m * beta.dx() - beta.dt() - resonant_part(W, m)
    return r.l2()


def _default_grid(Kx, Kt, oversample=2):
    return oversample * (2 * Kt + 1), oversample * (2 * Kx + 1)


def _margin(beta: SpaceTimeField, nt=None, nx=None):
    nt0, nx0 = _default_grid(beta.Kx, beta.Kt, 4)
    vals = beta.dx().to_grid(nt or nt0, nx or nx0)
    return float(1.0 + np.min(np.real(vals)))


def _solve_inverse(beta: SpaceTimeField, t_nodes, y, tol=FIXED_POINT_TOL, max_iter=FIXED_POINT_MAX_ITER):
    """Pointwise solution ``b`` of ``b = -beta(t, y + b)`` for every row ``t``.

    Newton iteration, i.e. the fixed-point map damped by ``1/(1 + beta_x)``.
    ``y`` has shape (len(t_nodes), n) or (n,).
    """
    t_nodes = np.atleast_1d(np.asarray(t_nodes, float))
    y = np.broadcast_to(np.asarray(y, float), (t_nodes.size, np.shape(y)[-1]))
    bc = beta.x_coefficients(t_nodes)
    dbc = bc * (1j * beta.k_index)[None, :]
    out = np.empty(y.shape)
    for i in range(t_nodes.size):
        b = -np.real(trig_eval(bc[i], y[i]))
        for it in range(max_iter):
            z = y[i] + b
            F = b + np.real(trig_eval(bc[i], z))
            J = 1.0 + np.real(trig_eval(dbc[i], z))
            step = F / J
            b = b - step
            if np.max(np.abs(step)) < tol:
                break
        else:
            raise ConvergenceFailure(f"inverse displacement did not converge in {max_iter} iterations")
        out[i] = b
    return out


def invert_diffeo(beta: SpaceTimeField, Kx=None, Kt=None, threshold=MARGIN_THRESHOLD) -> SpaceTimeField:
    """Displacement ``beta_tilde`` with ``y + beta_tilde(t, y) = phi^{-1}(y)``.

    Solved on a grid node by node and re-spectralized at cutoffs ``(Kx, Kt)``;
    by default twice the input cutoffs and at least 24 (a time-independent
    ``beta`` keeps ``Kt = 0``).
    """
    margin = _margin(beta)
    if margin <= threshold:
        raise DiffeoNotInvertible(f"min(1 + beta_x) = {margin:.3g} is below {threshold}")
    Kx = max(2 * beta.Kx, 24) if Kx is None else Kx
    Kt = (max(2 * beta.Kt, 24) if beta.Kt else 0) if Kt is None else Kt
    nt, nx = _default_grid(Kx, Kt)
    tn, y = grid(nt), grid(nx)
    vals = _solve_inverse(beta, tn, y)
    return SpaceTimeField.from_grid(vals, Kx, Kt, is_real=True)


@dataclass(frozen=True)
class DiffeoTransform:
    """The unitary change of variables attached to a displacement field."""

    beta: SpaceTimeField
    beta_tilde: SpaceTimeField
    invertibility_margin: float

    def apply(self, t, u: StateVector, direction="forward", K=None):
        return apply_transform(self, t, u, direction, K)

    def composition_residual(self, nt=16, nx=64):
        """``max |y + bt(t,y) + beta(t, y + bt(t,y)) - y|`` on a check grid."""
        tn = np.linspace(0, 2 * np.pi, nt, endpoint=False) + 0.123
        y = np.linspace(0, 2 * np.pi, nx, endpoint=False) + 0.0457
        bt = self.beta_tilde.evaluate(tn[:, None], y[None, :])
        b = self.beta.evaluate_rows(tn, y[None, :] + bt)
        return float(np.max(np.abs(bt + b)))

    def to_dict(self):
        return {
            "beta": self.beta.to_modes(tol=1e-16),
            "Kx": self.beta.Kx,
            "Kt": self.beta.Kt,
            "invertibility_margin": self.invertibility_margin,
        }


def make_transform(beta: SpaceTimeField, threshold=MARGIN_THRESHOLD, Kx=None, Kt=None) -> DiffeoTransform:
    margin = _margin(beta)
    if margin <= threshold:
        raise DiffeoNotInvertible(f"min(1 + beta_x) = {margin:.3g} is below {threshold}")
    return DiffeoTransform(beta, invert_diffeo(beta, Kx, Kt, threshold), margin)


def _remap(disp: SpaceTimeField, t, u: StateVector, K_out, oversample=4):
    """Samples of ``(1 + d_x)^{1/2} u(x + d)`` re-transformed to cutoff ``K_out``."""
    n = oversample * (2 * max(K_out, u.K, disp.Kx) + 1)
    x = grid(n)
    dc = disp.x_coefficients(float(t))
    d = np.real(trig_eval(dc, x))
    dd = np.real(trig_eval(dc * 1j * disp.k_index, x))
    if np.min(1.0 + dd) <= 0:
        raise DiffeoNotInvertible("transform is not a diffeomorphism at this time")
    vals = np.sqrt(1.0 + dd) * trig_eval(u.coeffs, x + d)
    return StateVector(from_samples(vals, K_out, is_real=False).coeffs, u.time_stamp)


def apply_transform(T: DiffeoTransform, t, u: StateVector, direction="forward", K=None) -> StateVector:
    """Forward: ``(1 + beta_x)^{1/2} u(x + beta)``; inverse: same with ``beta_tilde``."""
    K = u.K if K is None else K
    if direction == "forward":
        return _remap(T.beta, t, u, K)
    if direction == "inverse":
        return _remap(T.beta_tilde, t, u, K)
    raise ValueError(f"direction must be 'forward' or 'inverse', not {direction!r}")


def pushforward_coefficient(w: SpaceTimeField, T, Kx=None, Kt=None) -> SpaceTimeField:
    """Coefficient of the conjugated generator, ``[(1 + beta_x) w - beta_t](t, phi^{-1}(y))``.

    ``T`` is a :class:`DiffeoTransform` or a bare displacement field.  The
    inverse map is solved pointwise on the evaluation grid, then the result
    is re-spectralized at cutoffs ``(Kx, Kt)`` (default: those of ``w``).
    """
    beta = T.beta if isinstance(T, DiffeoTransform) else T
    Kx = w.Kx if Kx is None else Kx
    Kt = w.Kt if Kt is None else Kt
    nt, nx = _default_grid(Kx, Kt)
    tn, y = grid(nt), grid(nx)
    z = y[None, :] + _solve_inverse(beta, tn, y)
    wz = w.evaluate_rows(tn, z)
    bx = beta.dx().evaluate_rows(tn, z)
    bt = beta.dt().evaluate_rows(tn, z)
    vals = np.real((1.0 + bx) * wz - bt)
    return SpaceTimeField.from_grid(vals, Kx, Kt, is_real=True)


def translate(f: SpaceTimeField, speed: int) -> SpaceTimeField:
    """``f(t, x - speed * t)`` for integer ``speed`` (mode (k, l) moves to (k, l - speed k))."""
    speed = int(speed)
    Kt = f.Kt + abs(speed) * f.Kx
    c = np.zeros((2 * f.Kx + 1, 2 * Kt + 1), dtype=complex)
    for i, k in enumerate(f.k_index):
        shift = -speed * k
        c[i, Kt - f.Kt + shift:Kt + f.Kt + 1 + shift] = f.coeffs[i]
    return SpaceTimeField(c, is_real=f.is_real)


@dataclass(frozen=True)
class NormalFormChain:
    """Result of the order-N reduction.

    ``coefficient_history[n]`` is the lab-frame coefficient after ``n``
    conjugations (``[0]`` is ``m + eps V``).  In the co-moving frame of speed
    ``m`` the final coefficient reads ``eps * X_eff(x) + W_rem(t, x)`` with
    ``X_eff = <V>_m + eps Z`` and ``W_rem`` of size ``eps^{N+1}``.
    """

    steps: tuple
    m: int
    epsilon: float
    order: int
    coefficient_history: tuple
    X_eff: TorusField
    Z: TorusField
    W_rem: SpaceTimeField
    reduced_coefficient: SpaceTimeField
    translation_applied: bool = True
    m_hat: float | None = None
    lambda_: TorusField | None = None
    lambda_transform: DiffeoTransform | None = field(default=None, compare=False)

    @property
    def remainder_norm(self):
        return self.W_rem.l2()

    def _translate_state(self, t, v: StateVector, sign):
        phase = np.exp(sign * 1j * v.wavenumbers * self.m * t)
        return StateVector(v.coeffs * phase, v.time_stamp)

    def to_reduced(self, t, u: StateVector, K=None) -> StateVector:
        """Map a lab-frame state to the co-moving normal-form frame (``Psi(t)^{-1}``)."""
        for T in self.steps:
            u = apply_transform(T, t, u, "inverse", K)
        return self._translate_state(t, u, -1)

    def from_reduced(self, t, v: StateVector, K=None) -> StateVector:
        """``Psi(t) = Phi_1 ... Phi_N T_m^{-1}`` applied to a reduced-frame state."""
        u = self._translate_state(t, v, +1)
        for T in reversed(self.steps):
            u = apply_transform(T, t, u, "forward", K)
        return u

    def to_dict(self):
        return {
            "m": self.m,
            "epsilon": self.epsilon,
            "order": self.order,
            "steps": [s.to_dict() for s in self.steps],
            "X_eff": self.X_eff.to_modes(tol=1e-16),
            "Z": self.Z.to_modes(tol=1e-16),
            "remainder_l2": self.remainder_norm,
            "m_hat": self.m_hat,
            "lambda": None if self.lambda_ is None else self.lambda_.to_modes(tol=1e-16),
        }


def normal_form_reduce(V: SpaceTimeField, m, epsilon, N, Kx=None, Kt=None, threshold=MARGIN_THRESHOLD):
    """Remove the non-resonant part of ``m + eps V`` up to order ``eps^{N+1}``.

    Each step solves the homological equation for the current non-resonant
    part of ``w - m`` and conjugates by the associated transform.  All fields
    are kept at working cutoffs ``(Kx, Kt)``, by default ``Kx = max(4 Kx(V), 16)``
    and ``Kt = m Kx`` so that every resonant mode is representable.
    """
    m = _check_m(m)
    if N < 1:
        raise ValueError("order N must be >= 1")
    Kx = max(4 * V.Kx, 16) if Kx is None else Kx
    Kt = max(m * Kx, V.Kt) if Kt is None else Kt
    w = (m + epsilon * V).with_cutoffs(Kx, Kt)
    history = [w]
    steps = []
    for n in range(1, N + 1):
        rho = nonresonant_part(w, m)
        beta = solve_homological(rho, m)
        try:
            T = make_transform(beta, threshold)
        except DiffeoNotInvertible as exc:
            raise NormalFormFailed(f"step {n}: {exc}", step=n) from exc
        w = pushforward_coefficient(w, T, Kx, Kt)
        steps.append(T)
        history.append(w)
    res = resonant_average(w - m, m)
    avg = resonant_average(V, m).with_cutoff(Kx)
    if epsilon != 0:
        X_eff = res * (1.0 / epsilon)
        Z = (X_eff - avg) * (1.0 / epsilon)
    else:
        X_eff, Z = avg, TorusField.zeros(Kx)
    reduced = translate(w - m, m)
    W_rem = translate(nonresonant_part(w, m), m)
    return NormalFormChain(
        steps=tuple(steps),
        m=m,
        epsilon=float(epsilon),
        order=int(N),
        coefficient_history=tuple(history),
        X_eff=TorusField(X_eff.coeffs, is_real=True),
        Z=TorusField(Z.coeffs, is_real=True),
        W_rem=W_rem,
        reduced_coefficient=reduced,
    )


def constant_coefficient_reduce(X_eff: TorusField, stable_margin=1e-8, K=None, n=None):
    """Speed ``m_hat`` and displacement ``lambda`` flattening a nonvanishing ``X_eff``.

    ``m_hat = 2 pi / int dx / X_eff`` and ``lambda_k = f_k / (ik)`` with
    ``f = m_hat / X_eff - 1``, so that ``(1 + lambda') X_eff = m_hat``.

    Returns
    -------
    m_hat : float
    lam : TorusField
        Real, zero mean.  The cutoff ``K`` defaults to the smallest one that
        captures ``f`` to round-off (at least that of ``X_eff``).
    """
    n = n or max(1024, 32 * (2 * X_eff.K + 1) + 1)
    vals = np.real(X_eff.to_samples(n))
    if np.min(np.abs(vals)) <= stable_margin or np.min(vals) * np.max(vals) <= 0:
        raise NotResonantlyStable("X_eff vanishes somewhere on the circle")
    m_hat = float(1.0 / np.mean(1.0 / vals))
    f = from_samples(m_hat / vals - 1.0, (n - 1) // 2, is_real=True)
    if K is None:
        mags = np.abs(f.coeffs)
        sig = np.nonzero(mags > 1e-15 * max(1.0, np.max(mags)))[0]
        K = max(X_eff.K, int(np.max(np.abs(f.wavenumbers[sig]), initial=0)))
    f = f.with_cutoff(K)
    k = f.wavenumbers
    lam = np.zeros_like(f.coeffs)
    nz = k != 0
    lam[nz] = f.coeffs[nz] / (1j * k[nz])
    return m_hat, TorusField(lam, is_real=True)


def lambda_transform(lam: TorusField, threshold=MARGIN_THRESHOLD, Kx=None) -> DiffeoTransform:
    """The time-independent transform ``(1 + lambda')^{1/2} u(x + lambda)``."""
    beta = SpaceTimeField(lam.coeffs[:, None], is_real=True)
    return make_transform(beta, threshold, Kx=Kx, Kt=0)


def flatness_report(X_eff: TorusField, stable_margin=1e-8, n=512):
    """``m_hat``, ``lambda`` and how constant the conjugated coefficient is.

    ``flatness`` is ``max |Lambda_* X_eff - m_hat|`` on an ``n``-point grid.
    """
    m_hat, lam = constant_coefficient_reduce(X_eff, stable_margin)
    L = lambda_transform(lam)
    K = max(X_eff.K, lam.K)
    pushed = pushforward_coefficient(SpaceTimeField(X_eff.with_cutoff(K).coeffs[:, None], is_real=True), L, K, 0)
    vals = np.real(pushed.to_grid(1, n))
    return {
        "m_hat": m_hat,
        "lambda": lam.to_modes(tol=1e-16),
        "lambda_K": lam.K,
        "flatness": float(np.max(np.abs(vals - m_hat))),
        "invertibility_margin": L.invertibility_margin,
    }


def epsilon_scan(V: SpaceTimeField, m, N, epsilons, threshold=MARGIN_THRESHOLD):
    """Chain diagnostics on a grid of ``eps``, for spot-checking uniform bounds.

    Each row holds ``epsilon``, ``ok``, the failing ``step`` (or ``None``),
    the smallest invertibility margin over the steps, ``|Z|_L2`` and the
    scaled remainder ``|W_rem|_L2 / eps^{N+1}``.  Boundedness of the last
    two columns over the grid is evidence, not proof, of uniformity in ``eps``.
    """
    rows = []
    for eps in epsilons:
        row = {"epsilon": float(eps), "ok": True, "step": None, "min_margin": None, "Z_l2": None, "scaled_remainder": None}
        try:
            ch = normal_form_reduce(V, m, eps, N, threshold=threshold)
        except NormalFormFailed as exc:
            row.update(ok=False, step=exc.step)
        else:
            row["min_margin"] = min(T.invertibility_margin for T in ch.steps)
            row["Z_l2"] = float(np.linalg.norm(ch.Z.coeffs))
            row["scaled_remainder"] = ch.remainder_norm / eps ** (N + 1) if eps > 0 else 0.0
        rows.append(row)
    return rows


def invertibility_threshold(V: SpaceTimeField, m, N, eps_hi=10.0, rtol=1e-3, threshold=MARGIN_THRESHOLD):
    """Largest ``eps`` found by bisection at which every chain step stays invertible.

    Empirical: assumes failure is monotone in ``eps`` on ``[0, eps_hi]``.
    Returns ``eps_hi`` if the chain still succeeds there.
    """

    def ok(eps):
        try:
            normal_form_reduce(V, m, eps, N, threshold=threshold)
        except NormalFormFailed:
            return False
        return True

    if ok(eps_hi):
        return float(eps_hi)
    lo, hi = 0.0, float(eps_hi)
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo
