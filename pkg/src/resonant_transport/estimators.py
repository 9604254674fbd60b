"""scikit-learn style wrappers around the core operations.

The inputs are fields and states rather than feature matrices, so these
estimators implement ``fit``/``predict``/``transform`` and parameter
introspection (``get_params``/``set_params``) without claiming
compatibility with pipelines or ``check_estimator``.
"""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from .classical_dynamics import build_escape
from .exceptions import NotResonantlyStable
from .evolve import fit_growth_rate
from .normal_form import constant_coefficient_reduce, normal_form_reduce
from .resonance import Tolerances, classify
from .spectral import SpaceTimeField, StateVector, TorusField


def _check_field(V, kind=SpaceTimeField):
    if not isinstance(V, kind):
        raise TypeError(f"expected {kind.__name__}, got {type(V).__name__}")
    return V


class ResonanceClassifier(BaseEstimator):
    """Stable / Unstable / Degenerate verdict for a potential at frequency ``m``."""

    def __init__(self, m=1, zero_tol=1e-10, degeneracy_tol=1e-6, stable_margin=1e-8):
        self.m = m
        self.zero_tol = zero_tol
        self.degeneracy_tol = degeneracy_tol
        self.stable_margin = stable_margin

    def _tolerances(self):
        return Tolerances(self.zero_tol, self.degeneracy_tol, self.stable_margin)

    def fit(self, V, y=None):
        self.report_ = classify(_check_field(V), self.m, self._tolerances())
        return self

    def predict(self, V):
        """Verdict for one field or a list of fields."""
        if isinstance(V, SpaceTimeField):
            return classify(V, self.m, self._tolerances()).verdict
        return np.array([classify(_check_field(v), self.m, self._tolerances()).verdict for v in V])


class NormalFormTransformer(BaseEstimator, TransformerMixin):
    """Conjugate states to the frame of the order-``N`` normal form.

    ``fit(V)`` builds the chain; ``transform(u, t)`` maps a lab state at
    time ``t`` to the reduced frame and ``inverse_transform`` maps back.
    """

    def __init__(self, m=1, epsilon=0.1, N=1):
        self.m = m
        self.epsilon = epsilon
        self.N = N

    def fit(self, V, y=None):
        self.chain_ = normal_form_reduce(_check_field(V), self.m, self.epsilon, self.N)
        try:
            self.m_hat_, self.lambda_ = constant_coefficient_reduce(self.chain_.X_eff)
        except NotResonantlyStable:
            # effective field has zeros: no constant-coefficient step
            self.m_hat_, self.lambda_ = None, None
        return self

    def transform(self, u, t=0.0):
        check_is_fitted(self, "chain_")
        return self.chain_.to_reduced(t, _check_field(u, StateVector))

    def inverse_transform(self, v, t=0.0):
        check_is_fitted(self, "chain_")
        return self.chain_.from_reduced(t, _check_field(v, StateVector))


class EscapeFunctionEstimator(BaseEstimator):
    """Escape profile ``a~`` for a circle field with simple zeros."""

    def __init__(self, sigma=0.01, K_a=256, balance=True):
        self.sigma = sigma
        self.K_a = K_a
        self.balance = balance

    def fit(self, X, y=None):
        self.escape_ = build_escape(_check_field(X, TorusField), self.sigma, K_a=self.K_a, balance=self.balance)
        self.delta_ = self.escape_.delta_verified
        return self

    def predict(self, x):
        """Values of ``a~`` at the points ``x``."""
        check_is_fitted(self, "escape_")
        return np.real(self.escape_.a_tilde(np.asarray(x, float)))


class GrowthRateEstimator(BaseEstimator):
    """Exponential fit ``series ~ exp(gamma t)`` over an optional window."""

    def __init__(self, window=None):
        self.window = window

    def fit(self, times, series):
        self.gamma_, self.r_squared_ = fit_growth_rate(series, self.window, times)
        t = np.asarray(times, float)
        sel = np.ones(t.size, bool) if self.window is None else (t >= self.window[0]) & (t <= self.window[1])
        self.intercept_ = float(np.mean(np.log(np.asarray(series, float)[sel]) - self.gamma_ * t[sel]))
        return self

    def predict(self, times):
        if not hasattr(self, "gamma_"):
            raise NotFittedError("GrowthRateEstimator is not fitted yet")
        return np.exp(self.intercept_ + self.gamma_ * np.asarray(times, float))
