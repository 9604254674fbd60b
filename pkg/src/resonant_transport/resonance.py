"""Resonant averaging, zero analysis and the stable/unstable/degenerate split.

For a frequency ``m`` the resonant average of ``V(t, x)`` keeps the modes
with ``l = m k``::

    <V>_m(x) = sum_k v_{k, mk} exp(ikx) = (1/2pi) int V(t, x - m t) dt

and the sign structure of ``<V>_m`` decides the long-time behaviour of the
transport equation: no zeros (stable), only simple zeros (unstable), or at
least one double zero (degenerate).
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from .exceptions import InvalidFrequency, RegularizationFailed
from .spectral import SpaceTimeField, TorusField, grid

__all__ = [
    "Tolerances",
    "ZeroRecord",
    "ClassificationReport",
    "STABLE",
    "UNSTABLE",
    "DEGENERATE",
    "resonant_average",
    "resonant_part",
    "nonresonant_part",
    "is_completely_resonant",
    "find_zeros",
    "classify_profile",
    "classify",
    "regularize",
]

STABLE = "Stable"
UNSTABLE = "Unstable"
DEGENERATE = "Degenerate"


@dataclass(frozen=True)
class Tolerances:
    zero_tol: float = 1e-10
    degeneracy_tol: float = 1e-6
    stable_margin: float = 1e-8
    resonance_tol: float = 1e-12


@dataclass(frozen=True)
class ZeroRecord:
    """A root ``x0`` of a circle field with its slope ``X'(x0)``."""

    location: float
    slope: float
    refinement_residual: float

    def to_dict(self):
        return {"x0": self.location, "slope": self.slope}


@dataclass(frozen=True)
class ClassificationReport:
    verdict: str
    zeros: list
    min_abs_value: float
    nu: float
    tolerances: Tolerances = field(default_factory=Tolerances)

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "zeros": [z.to_dict() for z in self.zeros],
            "nu": self.nu,
            "min_abs_value": self.min_abs_value,
            "tolerances": asdict(self.tolerances),
        }


def _check_m(m):
    if int(m) != m or m <= 0:
        raise InvalidFrequency(f"frequency must be a positive integer, got {m!r}")
    return int(m)


def _resonant_mask(V: SpaceTimeField, m):
    k = V.k_index[:, None]
    l = V.l_index[None, :]
    return l == m * k


def resonant_average(V: SpaceTimeField, m) -> TorusField:
    """Circle field with coefficients ``v_{k, mk}``.

    Modes with ``|mk| > Kt`` are not representable in ``V``; they are set to
    zero and a ``RuntimeWarning`` is emitted if such ``k`` exist.
    """
    m = _check_m(m)
    K = V.Kx
    out = np.zeros(2 * K + 1, dtype=complex)
    k = np.arange(-K, K + 1)
    ok = np.abs(m * k) <= V.Kt
    out[ok] = V.coeffs[k[ok] + K, m * k[ok] + V.Kt]
    if not np.all(ok):
        warnings.warn(
            f"resonant modes with |{m}k| > Kt={V.Kt} are truncated", RuntimeWarning, stacklevel=2
        )
    return TorusField(out, is_real=V.is_real)


def resonant_part(V: SpaceTimeField, m) -> SpaceTimeField:
    """The completely resonant component ``<V>_m(x + mt)`` as a space-time field."""
    m = _check_m(m)
    return SpaceTimeField(np.where(_resonant_mask(V, m), V.coeffs, 0.0), is_real=V.is_real)


def nonresonant_part(V: SpaceTimeField, m) -> SpaceTimeField:
    m = _check_m(m)
    return SpaceTimeField(np.where(_resonant_mask(V, m), 0.0, V.coeffs), is_real=V.is_real)


def is_completely_resonant(V: SpaceTimeField, m, resonance_tol=Tolerances.resonance_tol):
    m = _check_m(m)
    mask = _resonant_mask(V, m)
    total = np.sum(np.abs(V.coeffs) ** 2)
    off = np.sum(np.abs(V.coeffs[~mask]) ** 2)
    return bool(off <= resonance_tol**2 * total)


def _newton_polish(f, df, x, tol=1e-13, max_iter=20):
    for _ in range(max_iter):
        d = df(x)
        if d == 0:
            break
        step = f(x) / d
        x = x - step
        if abs(step) < tol:
            break
    return x


def find_zeros(X: TorusField, tolerances=Tolerances(), n_scan=None):
    """Roots of a real circle field, sorted by location in [0, 2pi).

    Sign changes on a scan grid are bracketed and solved with Brent's
    method followed by Newton polishing.  Local minima of ``|X|`` that fall
    below ``zero_tol`` without a sign change (tangencies) are reported too,
    refined at the nearby critical point, so that the classifier sees a
    slope close to zero.  An identically vanishing field yields a single
    record at 0 with slope 0.
    """
    K = X.K
    scale = float(np.max(np.abs(X.coeffs), initial=0.0))
    if scale <= tolerances.zero_tol:
        return [ZeroRecord(0.0, 0.0, 0.0)]
    n = n_scan or max(256, 16 * (2 * K + 1))
    xs = grid(n)
    vals = X.to_samples(n)
    dX = X.derivative()
    d2X = dX.derivative()
    f = lambda x: float(X(x))
    df = lambda x: float(dX(x))
    h = 2 * np.pi / n

    found = []
    nxt = np.roll(vals, -1)
    for i in np.nonzero(vals == 0.0)[0]:
        found.append(xs[i])
    for i in np.nonzero(vals * nxt < 0)[0]:
        a = xs[i]
        fa, fb = f(a), f(a + h)
        if fa * fb < 0:
            r = brentq(f, a, a + h, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        else:
            # FFT samples and direct sums disagree in the last bits near a root
            r = a if abs(fa) <= abs(fb) else a + h
        found.append(_newton_polish(f, df, r))

    # tangencies: local minima of |X| below zero_tol with no sign change
    absv = np.abs(vals)
    is_min = (absv <= np.roll(absv, 1)) & (absv <= np.roll(absv, -1))
    for i in np.nonzero(is_min)[0]:
        if vals[i] * nxt[i] < 0 or vals[i] * np.roll(vals, 1)[i] < 0:
            continue
        xc = _newton_polish(df, lambda x: float(d2X(x)), xs[i])
        if abs(f(xc)) < tolerances.zero_tol and abs(xc - xs[i]) < 2 * h:
            found.append(xc)

    records = []
    for r in sorted(np.mod(found, 2 * np.pi)):
        if records and abs(r - records[-1].location) < 1e-9:
            continue
        records.append(ZeroRecord(float(r), df(r), abs(f(r))))
    if len(records) > 1 and abs(records[0].location + 2 * np.pi - records[-1].location) < 1e-9:
        records.pop()
    return records


def classify_profile(X: TorusField, tolerances=Tolerances()) -> ClassificationReport:
    """Apply the stable/unstable/degenerate split to a real circle field."""
    zeros = find_zeros(X, tolerances)
    n = max(256, 16 * (2 * X.K + 1))
    min_abs = float(np.min(np.abs(X.to_samples(n))))
    if zeros:
        min_abs = 0.0
    nu = min((abs(z.slope) for z in zeros), default=0.0)
    if zeros and nu <= tolerances.degeneracy_tol:
        verdict = DEGENERATE
    elif zeros:
        verdict = UNSTABLE
    elif min_abs > tolerances.stable_margin:
        verdict = STABLE
    else:
        verdict = DEGENERATE
    return ClassificationReport(verdict, zeros, min_abs, float(nu), tolerances)


def classify(V: SpaceTimeField, m, tolerances=Tolerances()) -> ClassificationReport:
    return classify_profile(resonant_average(V, m), tolerances)


def regularize(
    V: SpaceTimeField, m, budget, tolerances=Tolerances(), max_attempts=200, seed=0, return_shift=False
):
    """Shift ``V`` by a small constant so that its resonant average becomes non-degenerate.

    ``eps0`` is drawn uniformly from ``[-budget, budget]`` until ``<V>_m - eps0``
    has only simple zeros (or none).  Subtracting the constant changes only
    the (0, 0) mode, so the sup distance between input and output is
    ``|eps0|``.  An already non-degenerate ``V`` is returned unchanged
    (``eps0 = 0``).  With ``return_shift=True`` the pair ``(W0, eps0)`` is
    returned.
    """
    m = _check_m(m)
    if budget <= 0:
        raise ValueError("budget must be positive")
    if classify(V, m, tolerances).verdict != DEGENERATE:
        return (V, 0.0) if return_shift else V
    X = resonant_average(V, m)
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        eps0 = float(rng.uniform(-budget, budget))
        if abs(eps0) <= 10 * tolerances.stable_margin:
            continue
        if classify_profile(X - eps0, tolerances).verdict != DEGENERATE:
            W0 = V - eps0
            return (W0, eps0) if return_shift else W0
    raise RegularizationFailed(f"no regular value found in {max_attempts} samples within budget {budget}")
