import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from resonant_transport.estimators import (
    EscapeFunctionEstimator,
    GrowthRateEstimator,
    NormalFormTransformer,
    ResonanceClassifier,
)
from resonant_transport.spectral import SpaceTimeField, StateVector, TorusField

UNSTABLE = SpaceTimeField.from_function(lambda t, x: np.cos(x + t), 2, 2)
STABLE = SpaceTimeField.from_function(lambda t, x: 2 + np.cos(x + t), 2, 2)


def test_params_round_trip():
    for est in (ResonanceClassifier(m=2), NormalFormTransformer(N=2), EscapeFunctionEstimator(sigma=0.02), GrowthRateEstimator((0, 5))):
        params = est.get_params()
        twin = clone(est)
        assert twin.get_params() == params
        key = next(iter(params))
        est.set_params(**{key: params[key]})


def test_classifier():
    clf = ResonanceClassifier().fit(UNSTABLE)
    assert clf.report_.verdict == "Unstable"
    assert list(clf.predict([UNSTABLE, STABLE])) == ["Unstable", "Stable"]
    assert clf.predict(STABLE) == "Stable"
    with pytest.raises(TypeError):
        clf.fit(np.zeros(3))


def test_normal_form_transformer_round_trip():
    nf = NormalFormTransformer(epsilon=0.1).fit(STABLE)
    assert nf.m_hat_ == pytest.approx(np.sqrt(3), abs=1e-9)
    u = StateVector.from_function(lambda x: np.exp(np.cos(x)), 32)
    v = nf.transform(u, t=0.3)
    back = nf.inverse_transform(v, t=0.3).with_cutoff(32)
    assert np.linalg.norm(back.coeffs - u.coeffs) < 1e-8
    assert NormalFormTransformer().fit(UNSTABLE).m_hat_ is None
    with pytest.raises(NotFittedError):
        NormalFormTransformer().transform(u)


def test_escape_estimator():
    X = TorusField.from_function(np.cos, 4)
    est = EscapeFunctionEstimator().fit(X)
    assert est.delta_ >= 0.1
    assert est.predict([np.pi / 2, 3 * np.pi / 2]) == pytest.approx([1.0, -1.0], abs=1e-8)


def test_growth_rate_estimator():
    t = np.linspace(0, 10, 101)
    est = GrowthRateEstimator().fit(t, 3 * np.exp(0.2 * t))
    assert est.gamma_ == pytest.approx(0.2) and est.intercept_ == pytest.approx(np.log(3))
    assert est.predict([1.0]) == pytest.approx([3 * np.exp(0.2)])
    with pytest.raises(NotFittedError):
        GrowthRateEstimator().predict([1.0])
