"""Time integration of ``u_t = w u_x + (1/2) w_x u`` and the two headline experiments.

The generator ``Op^w(i xi w)`` is skew-Hermitian for real ``w``; each step
applies the Cayley map of the generator frozen at the half step::

    u_{n+1} = (I - dt/2 G)^{-1} (I + dt/2 G) u_n,   G = weyl(i xi w(t_n + dt/2))

which is unitary, second order, and banded-solvable.  A constant part
``c`` of the coefficient is removed exactly by working in the frame
``v(t, x) = u(t, x - c t)``; reported states are always in the lab frame.
"""
from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import LinAlgError, solve_banded

from .classical_dynamics import build_escape
from .exceptions import IntegrationFailure, InvalidSeries, StepFailure, WrongRegime
from .normal_form import (
    constant_coefficient_reduce,
    lambda_transform,
    normal_form_reduce,
    pushforward_coefficient,
)
from .resonance import STABLE, UNSTABLE, classify, resonant_average
from .spectral import SpaceTimeField, StateVector, TorusField, sobolev_norm, trig_eval
from .weyl import Symbol, build_atilde, build_initial_datum, quadratic_form, weyl_matrix

__all__ = [
    "Coefficient",
    "Trajectory",
    "GrowthReport",
    "integrate",
    "integrate_characteristics",
    "fit_growth_rate",
    "default_dt",
    "stability_experiment",
    "instability_experiment",
    "dichotomy_experiment",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Coefficient:
    """Transport coefficient ``speed + field(t, x)`` in the lab frame."""

    speed: float
    field: SpaceTimeField

    @classmethod
    def split(cls, w: SpaceTimeField):
        """Move the real mean mode of ``w`` into ``speed``."""
        c = float(np.real(w.coeff(0, 0)))
        return cls(c, w - c)

    def frame_coefficients(self, t):
        """x-coefficients of ``field(t, x - speed t)``."""
        fc = self.field.x_coefficients(t)
        return fc * np.exp(-1j * self.field.k_index * self.speed * t)

    def frame_is_static(self, tol=1e-14):
        """True when ``field(t, x - speed t)`` does not depend on ``t`` (relative ``tol``)."""
        k = self.field.k_index[:, None]
        l = self.field.l_index[None, :]
        moving = ~np.isclose(l - self.speed * k, 0.0)
        scale = float(np.max(np.abs(self.field.coeffs), initial=0.0))
        return float(np.max(np.abs(self.field.coeffs[moving]), initial=0.0)) <= tol * scale

    def sup(self):
        g = self.field.to_grid(4 * self.field.Kt + 3, 4 * self.field.Kx + 3)
        return abs(self.speed), float(np.max(np.abs(g)))


def default_dt(coef: Coefficient, K):
    """``0.01 / (|speed| + K max|field|)``, the conditioning-based default."""
    c, f = coef.sup()
    return 0.01 / max(c + K * f, 1e-300)


@dataclass
class Trajectory:
    times: np.ndarray
    states: list
    norm_times: np.ndarray
    norm_series: dict
    l2_drift: float
    max_step_l2_error: float
    scheme: dict
    monitor: list = field(default_factory=list)

    def norm_rows(self):
        """``(t, s, norm)`` rows for CSV export."""
        rows = []
        for s, series in sorted(self.norm_series.items()):
            rows.extend((float(t), float(s), float(v)) for t, v in zip(self.norm_times, series))
        return rows


def _as_coefficient(w, frame):
    if isinstance(w, Coefficient):
        return w
    if isinstance(w, tuple):
        return Coefficient(float(w[0]), w[1])
    if frame == "lab":
        return Coefficient(0.0, w)
    return Coefficient.split(w)


def _banded_from_coeffs(fc, K, dt):
    """Band storage of ``I - dt/2 G`` and the operator ``I + dt/2 G``."""
    G = weyl_matrix(Symbol.transport(TorusField(fc)), K)
    lo, up, ab = G.to_banded()
    lhs = -0.5 * dt * ab
    lhs[lo] += 1.0
    return G, (lo, up, lhs)


def integrate(
    w,
    u0: StateVector,
    T,
    dt=None,
    K=None,
    s_list=(0, 1),
    store_every=None,
    frame="comoving",
    monitor=None,
    monitor_every=1,
    saturation=None,
):
    """Evolve ``u0`` on ``[0, T]``.

    Parameters
    ----------
    w : SpaceTimeField, Coefficient or (speed, field)
        The lab-frame coefficient.  A bare field has its mean moved into
        the frame speed unless ``frame="lab"``.
    dt : float, optional
        Defaults to :func:`default_dt`.  The last step is shortened to land
        on ``T`` exactly.
    K : int, optional
        Mode cutoff (defaults to that of ``u0``); the field bandwidth must
        not exceed ``K/2``.
    store_every : int, optional
        Keep the lab-frame state every this many steps (plus the endpoints);
        ``None`` keeps only the endpoints.
    monitor : callable, optional
        ``monitor(t, v)`` with ``v`` the frame-state coefficients, called every
        ``monitor_every`` steps; results are collected in ``Trajectory.monitor``.
    saturation : (kappa, threshold), optional
        Stop when the share of ``||u||_1^2`` carried by ``|k| > kappa K``
        exceeds ``threshold``; the stop time is recorded in the scheme metadata.
    """
    coef = _as_coefficient(w, frame)
    K = u0.K if K is None else int(K)
    if coef.field.Kx > K / 2:
        raise ValueError(f"coefficient bandwidth {coef.field.Kx} exceeds K/2 = {K / 2}")
    dt = default_dt(coef, K) if dt is None else float(dt)
    if dt <= 0:
        raise ValueError("dt must be positive")
    u0 = u0.with_cutoff(K) if u0.K != K else u0
    k = np.arange(-K, K + 1)
    weights = {s: (1.0 + k.astype(float) ** 2) ** s for s in s_list}
    nsteps = max(1, int(np.ceil(T / dt - 1e-9)))
    static = coef.frame_is_static()

    v = np.array(u0.coeffs, dtype=complex)
    l2_0 = np.linalg.norm(v)
    norm_t = np.empty(nsteps + 1)
    series = {s: np.empty(nsteps + 1) for s in s_list}

    def record(i, t, v):
        norm_t[i] = t
        p = np.abs(v) ** 2
        for s in s_list:
            series[s][i] = np.sqrt(np.sum(weights[s] * p))

    def to_lab(t, v):
        return StateVector(v * np.exp(1j * k * coef.speed * t), t)

    record(0, 0.0, v)
    times, states = [0.0], [to_lab(0.0, v)]
    mon = []
    if monitor is not None:
        mon.append(monitor(0.0, v))
    cache = None
    max_err = 0.0
    t = 0.0
    stop_time = None
    last = nsteps
    wall = _time.perf_counter()
    if saturation is not None:
        kappa, thresh = saturation
        outer = np.abs(k) > kappa * K
    for n in range(1, nsteps + 1):
        h = min(dt, T - t) if n == nsteps else dt
        if static:
            if cache is None or cache[0] != h:
                G, band = _banded_from_coeffs(coef.frame_coefficients(0.0), K, h)
                cache = (h, G, band)
            _, G, band = cache
        else:
            G, band = _banded_from_coeffs(coef.frame_coefficients(t + 0.5 * h), K, h)
        rhs = v + 0.5 * h * G.matvec(v)
        try:
            v_new = solve_banded(band[:2], band[2], rhs, check_finite=False)
        except (LinAlgError, ValueError) as exc:
            raise StepFailure(f"Cayley solve failed at t = {t:.6g}: {exc}") from exc
        if not np.all(np.isfinite(v_new)):
            raise StepFailure(f"non-finite state after the step at t = {t:.6g}")
        n_old, n_new = np.linalg.norm(v), np.linalg.norm(v_new)
        max_err = max(max_err, abs(n_new - n_old) / max(n_old, 1e-300))
        v = v_new
        t = t + h
        record(n, t, v)
        if store_every and n % store_every == 0 and n != nsteps:
            times.append(t)
            states.append(to_lab(t, v))
        if monitor is not None and n % monitor_every == 0:
            mon.append(monitor(t, v))
        if saturation is not None:
            p = weights[s_list[-1]] * np.abs(v) ** 2 if s_list else np.abs(v) ** 2
            if np.sum(p[outer]) > thresh * np.sum(p):
                stop_time = t
                last = n
                break
    times.append(t)
    states.append(to_lab(t, v))
    norm_t = norm_t[: last + 1]
    series = {s: a[: last + 1] for s, a in series.items()}
    l2 = series[0] if 0 in series else np.array([np.linalg.norm(v)])
    drift = float(np.max(np.abs(l2 - l2_0)) / l2_0) if 0 in series else float(abs(np.linalg.norm(v) - l2_0) / l2_0)
    scheme = {
        "name": "cayley-midpoint",
        "dt": dt,
        "K": K,
        "frame_speed": coef.speed,
        "static_generator": static,
        "steps": last,
        "stopped_at": stop_time,
        "wall_seconds": _time.perf_counter() - wall,
    }
    return Trajectory(np.array(times), states, norm_t, series, drift, max_err, scheme, mon)


def integrate_characteristics(w, u0: StateVector, t, x_points, rtol=1e-11):
    """Reference solution by characteristics (independent of the spectral scheme).

    For each target ``x`` solve ``z' = -w(s, z)`` backward from ``z(t) = x``
    and return ``u0(z(0)) exp((1/2) int_0^t w_x(s, z(s)) ds)``.
    ``w`` is a lab-frame :class:`SpaceTimeField`, a :class:`Coefficient` or
    a ``(speed, field)`` pair.
    """
    coef = _as_coefficient(w, "comoving")
    F, Fx = coef.field, coef.field.dx()
    x_points = np.atleast_1d(np.asarray(x_points, float))
    n = x_points.size
    if t == 0:
        return trig_eval(u0.coeffs, x_points)

    def rhs(s, y):
        z = y[:n]
        return np.concatenate([-(coef.speed + np.real(F.evaluate(s, z))), np.real(Fx.evaluate(s, z))])

    sol = solve_ivp(rhs, (t, 0.0), np.concatenate([x_points, np.zeros(n)]), method="DOP853", rtol=rtol, atol=rtol * 1e-2)
    if sol.status < 0:
        raise IntegrationFailure(sol.message)
    z0, I = sol.y[:n, -1], sol.y[n:, -1]
    # I = int_t^0 w_x ds = -int_0^t w_x ds
    return trig_eval(u0.coeffs, z0) * np.exp(-0.5 * I)


def fit_growth_rate(series, window=None, times=None):
    """Least-squares slope of ``log(series)`` against time.

    Returns
    -------
    gamma : float
    r_squared : float
        1.0 for an exactly exponential (or constant) series.
    """
    y = np.asarray(series, float)
    if np.any(~np.isfinite(y)) or np.any(y <= 0):
        raise InvalidSeries("growth fits need strictly positive finite values")
    t = np.arange(y.size, dtype=float) if times is None else np.asarray(times, float)
    if window is not None:
        sel = (t >= window[0]) & (t <= window[1])
        t, y = t[sel], y[sel]
    if t.size < 2:
        raise InvalidSeries("fit window holds fewer than two samples")
    ly = np.log(y)
    A = np.vstack([t, np.ones_like(t)]).T
    (gamma, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ np.array([gamma, icpt])
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 if ss_tot <= 1e-30 * max(1.0, ly.size) else float(1.0 - np.sum(resid**2) / ss_tot)
    return float(gamma), r2


# ---------------------------------------------------------------------------
# stability
# ---------------------------------------------------------------------------

def _smooth_datum(K, seed=None):
    """Default test datum: a unit-L2 smooth wave ``exp(ix)`` plus a low-frequency profile."""
    c = np.zeros(2 * K + 1, dtype=complex)
    c[K + 1] = 1.0
    if seed is not None:
        rng = np.random.default_rng(seed)
        k = np.arange(-K, K + 1)
        c += 0.3 * (rng.normal(size=c.size) + 1j * rng.normal(size=c.size)) * np.exp(-np.abs(k))
    return StateVector(c / np.linalg.norm(c))


def stability_experiment(
    V: SpaceTimeField,
    m,
    epsilon,
    N=1,
    s_list=(1,),
    horizon_factor=1.0,
    K=64,
    dt=None,
    u0=None,
    drift_window=20.0,
    reduced=True,
    return_trajectory=False,
):
    """Sobolev norms over ``t <= horizon_factor * eps^{-(N+1)}`` for a resonantly stable ``V``.

    The original equation is integrated in the frame of speed ``m``.  With
    ``reduced=True`` the normal-form and constant-coefficient reductions are
    also built and the reduced equation ``eps m_hat + eps^{N+1} W`` is
    integrated from the transformed datum; its norm drift per unit time over
    ``[0, drift_window]`` is reported.  ``gamma_fit`` is the exponential
    fit over the whole run; with ``return_trajectory=True`` the original
    trajectory is included under ``"trajectory"``.
    """
    report = classify(V, m)
    if report.verdict != STABLE:
        raise WrongRegime(f"stability experiment needs a resonantly stable field, got {report.verdict}")
    u0 = _smooth_datum(K) if u0 is None else u0
    out = {"m": int(m), "epsilon": float(epsilon), "N": int(N), "K": int(K), "s_list": list(s_list)}
    if epsilon == 0:
        out.update({"horizon": float("inf"), "sup_ratio": {str(s): 1.0 for s in s_list}, "dt": None})
        return out
    horizon = horizon_factor * epsilon ** (-(N + 1))
    vmax = float(np.max(np.abs(V.to_grid(4 * V.Kt + 3, 4 * V.Kx + 3))))
    dt = 0.01 / (epsilon * vmax) if dt is None else dt
    coef = Coefficient(float(m), epsilon * V)
    traj = integrate(coef, u0, horizon, dt=dt, K=K, s_list=tuple(sorted(set((0,) + tuple(s_list)))))
    sup = {str(s): float(np.max(traj.norm_series[s]) / traj.norm_series[s][0]) for s in s_list}
    fits = {str(s): fit_growth_rate(traj.norm_series[s], None, traj.norm_times) for s in s_list}
    out.update(
        {
            "horizon": float(horizon),
            "dt": float(dt),
            "sup_ratio": sup,
            "gamma_fit": {key: g for key, (g, _) in fits.items()},
            "r_squared": {key: r2 for key, (_, r2) in fits.items()},
            "l2_drift": traj.l2_drift,
            "max_step_l2_error": traj.max_step_l2_error,
        }
    )
    if reduced:
        chain = normal_form_reduce(V, m, epsilon, N)
        m_hat, lam = constant_coefficient_reduce(chain.X_eff)
        L = lambda_transform(lam)
        red = pushforward_coefficient(chain.reduced_coefficient, L)
        speed = float(np.real(red.coeff(0, 0)))
        rem = red - speed
        v0 = chain.to_reduced(0.0, u0)
        v0 = L.apply(0.0, v0, "inverse")
        rc = Coefficient(speed, rem)
        T0 = min(drift_window, horizon)
        rtraj = integrate(rc, v0, T0, dt=min(dt, T0 / 200), K=K, s_list=tuple(s_list))
        drift = {}
        for s in s_list:
            sq = (rtraj.norm_series[s] / rtraj.norm_series[s][0]) ** 2
            drift[str(s)] = float(np.max(np.abs(sq - 1.0)) / T0)
        out.update(
            {
                "m_hat": m_hat,
                "reduced_speed": speed,
                "reduced_speed_over_eps": speed / epsilon,
                "remainder_l2": float(rem.l2()),
                "normal_form_remainder_l2": chain.remainder_norm,
                "drift_window": T0,
                "drift_rate": drift,
            }
        )
    if return_trajectory:
        out["trajectory"] = traj
    return out


# ---------------------------------------------------------------------------
# instability
# ---------------------------------------------------------------------------

@dataclass
class GrowthReport:
    s: float
    gamma_fit: float
    fit_window: tuple
    r_squared: float
    predicted_rate: float
    delta1: float
    delta2: float
    delta2_escape: float
    beta: float
    virial_fraction: float
    virial_series: list
    saturation_time: float | None
    norm_times: np.ndarray = field(repr=False, default=None)
    norm_values: np.ndarray = field(repr=False, default=None)
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "s": self.s,
            "gamma_fit": self.gamma_fit,
            "fit_window": list(self.fit_window),
            "r_squared": self.r_squared,
            "predicted_rate": self.predicted_rate,
            "delta1": self.delta1,
            "delta2": self.delta2,
            "delta2_escape": self.delta2_escape,
            "beta": self.beta,
            "virial_fraction": self.virial_fraction,
            "saturation_time": self.saturation_time,
            "metadata": self.metadata,
        }


def _virial_check(times, A, epsilon, delta2, l2sq, calib_fraction=0.5):
    """Calibrate ``beta`` on the early samples; return (beta, fraction satisfied)."""
    t = np.asarray(times)
    A = np.asarray(A)
    dA = np.diff(A) / np.diff(t)
    Am = 0.5 * (A[1:] + A[:-1])
    need = delta2 * Am - dA / epsilon  # inequality: beta * l2sq >= need
    ncal = max(1, int(calib_fraction * need.size))
    beta = max(0.0, float(np.max(need[:ncal]) / l2sq))
    ok = dA >= epsilon * (delta2 * Am - beta * l2sq) - 1e-12 * np.abs(dA)
    return beta, float(np.mean(ok))


def instability_experiment(
    V: SpaceTimeField,
    m,
    epsilon,
    s=1,
    T=None,
    xi0=40,
    K=32768,
    dt=None,
    sigma=0.01,
    virial_every=None,
    saturation=(0.75, 1e-6),
    K_a=256,
):
    """Sobolev growth from a datum localized in the region where ``a~ <= -1/2``.

    The run stops at ``T`` or when the spectrum reaches the truncation edge
    (``saturation``), whichever comes first.  The rate is fitted on
    ``[min(5/(eps nu), t_end/2), t_end]``.  ``predicted_rate`` is
    ``eps * s * X'(x*)`` at the repelling zero ``x*`` inside the datum's
    support, where the characteristics contract and frequencies grow.
    """
    report = classify(V, m)
    if report.verdict != UNSTABLE:
        raise WrongRegime(f"instability experiment needs a resonantly unstable field, got {report.verdict}")
    X = resonant_average(V, m)
    E = build_escape(X, sigma, K_a=K_a)
    chain = normal_form_reduce(V, m, epsilon, 1)
    # sampled inputs leave round-off in the nonresonant modes; treat such steps as identities
    trivial_chain = all(float(np.max(np.abs(st.beta.coeffs), initial=0.0)) <= 1e-13 for st in chain.steps)
    u1_0 = build_initial_datum(E.W_region, xi0, K)
    u0 = u1_0 if trivial_chain else chain.from_reduced(0.0, u1_0)
    nu = E.flow.nu
    T = 200.0 if T is None else T
    # 20 steps per unit of slow time 1/eps; the spectral-radius default is far smaller than needed here
    dt = 0.005 / epsilon if dt is None else dt
    a_sym, A_mat = build_atilde(E, K)
    minus_A = -a_sym
    A_op = weyl_matrix(minus_A, K)
    virial_every = max(1, int(round(1.0 / dt))) if virial_every is None else virial_every

    def virial(t, v):
        if trivial_chain:
            u1 = StateVector(v, t)
        else:
            lab = StateVector(v * np.exp(1j * np.arange(-K, K + 1) * m * t), t)
            u1 = chain.to_reduced(t, lab)
        return (t, float(np.real(quadratic_form(A_op, u1))))

    coef = Coefficient(float(m), epsilon * V)
    traj = integrate(
        coef,
        u0,
        T,
        dt=dt,
        K=K,
        s_list=(0, s),
        monitor=virial,
        monitor_every=virial_every,
        saturation=saturation,
    )
    t_end = float(traj.norm_times[-1])
    stopped = traj.scheme["stopped_at"]
    start = min(5.0 / (epsilon * nu), 0.5 * t_end)
    window = (start, t_end)
    gamma, r2 = fit_growth_rate(traj.norm_series[s], window, traj.norm_times)

    # the repelling zero inside the datum's arc
    a, b = max(E.W_region, key=lambda w: w[1] - w[0])
    km = [z for z in E.flow.K_minus if (a <= z.location <= b) or (a <= z.location + 2 * np.pi <= b)]
    slope = km[0].slope if km else max(abs(z.slope) for z in E.flow.K_plus)
    predicted = epsilon * s * abs(slope)

    vt = np.array([p[0] for p in traj.monitor])
    vA = np.array([p[1] for p in traj.monitor])
    amax = float(np.max(np.abs(E.a_tilde.to_samples(4096))))
    delta2_escape = E.delta_verified / (2.0 * amax)
    l2sq = float(traj.norm_series[0][0] ** 2)
    beta, frac = _virial_check(vt, vA, epsilon, delta2_escape, l2sq) if vt.size > 2 else (0.0, 0.0)
    ratio = traj.norm_series[s] / traj.norm_series[s][0]
    sel = (traj.norm_times >= start)
    delta1 = float(np.min(ratio[sel] * np.exp(-epsilon * delta2_escape * traj.norm_times[sel])))
    meta = {
        "epsilon": float(epsilon),
        "m": int(m),
        "xi0": int(xi0),
        "K": int(K),
        "dt": float(dt),
        "T": float(T),
        "nu": nu,
        "escape_delta": E.delta_verified,
        "l2_drift": traj.l2_drift,
        "max_step_l2_error": traj.max_step_l2_error,
        "normal_form_trivial": trivial_chain,
    }
    return GrowthReport(
        s=float(s),
        gamma_fit=gamma,
        fit_window=window,
        r_squared=r2,
        predicted_rate=predicted,
        delta1=delta1,
        delta2=delta2_escape,
        delta2_escape=delta2_escape,
        beta=beta,
        virial_fraction=frac,
        virial_series=list(zip(vt.tolist(), vA.tolist())),
        saturation_time=stopped,
        norm_times=traj.norm_times,
        norm_values=traj.norm_series[s],
        metadata=meta,
    )


def dichotomy_experiment(V_stable, V_unstable, m, epsilon, s=1, xi0=40, K=16384, dt=None, sigma=0.01, T=400.0):
    """Growth rates of the stable and unstable benchmarks under identical solver settings.

    The unstable run is :func:`instability_experiment`.  The stable field is
    then evolved from the same datum with the same ``K`` and ``dt`` over its
    stability horizon ``eps^{-2}`` (at least as long as the unstable run).
    Both rates compared in ``ratio`` are fitted over the whole run: a bounded
    but oscillating norm fitted over a window shorter than its period
    measures phase rather than growth.  The stable fit over the unstable
    window is reported as well.
    """
    if classify(V_stable, m).verdict != STABLE:
        raise WrongRegime("first field of the pair must be resonantly stable")
    dt = 0.005 / epsilon if dt is None else dt
    unstable = instability_experiment(V_unstable, m, epsilon, s=s, T=T, xi0=xi0, K=K, dt=dt, sigma=sigma)
    E = build_escape(resonant_average(V_unstable, m), sigma)
    u0 = build_initial_datum(E.W_region, xi0, K)
    t_u = float(unstable.norm_times[-1])
    T_s = max(t_u, epsilon ** -2)
    traj = integrate(Coefficient(float(m), epsilon * V_stable), u0, T_s, dt=dt, K=K, s_list=(0, s))
    g_s, r2_s = fit_growth_rate(traj.norm_series[s], (0.0, T_s), traj.norm_times)
    g_sw, _ = fit_growth_rate(traj.norm_series[s], unstable.fit_window, traj.norm_times)
    g_u, r2_u = fit_growth_rate(unstable.norm_values, (0.0, t_u), unstable.norm_times)
    return {
        "epsilon": float(epsilon),
        "m": int(m),
        "s": float(s),
        "K": int(K),
        "dt": float(dt),
        "xi0": int(xi0),
        "gamma_unstable": g_u,
        "r_squared_unstable": r2_u,
        "gamma_unstable_window_fit": unstable.gamma_fit,
        "gamma_stable": g_s,
        "r_squared_stable": r2_s,
        "gamma_stable_on_unstable_window": g_sw,
        "horizon_unstable": t_u,
        "horizon_stable": T_s,
        "stable_sup_ratio": float(np.max(traj.norm_series[s]) / traj.norm_series[s][0]),
        "ratio": abs(g_s) / abs(g_u) if g_u != 0 else float("inf"),
        "unstable_report": unstable.to_dict(),
    }
