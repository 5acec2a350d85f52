from __future__ import annotations

import pickle

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from gravcont import make_regular_observation_grid, synth_field
from gravcont.estimators import DownwardContinuation, EquivalentLayer, SourcePeeler
from gravcont.exceptions import ShapeError

from conftest import SQUARE, TWO_SOURCES


@pytest.fixture(scope="module")
def data():
    X = make_regular_observation_grid(SQUARE, 12, 12).points
    return X, synth_field(TWO_SOURCES, X)


def test_params_and_clone():
    est = EquivalentLayer(depth=0.2, shape=(8, 8), ls_solver="normal")
    params = est.get_params()
    assert params["depth"] == 0.2 and params["shape"] == (8, 8)
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(depth=0.4)
    assert est.depth == 0.4
    assert set(DownwardContinuation().get_params()) >= {"depths", "delta", "n_jobs"}
    assert set(SourcePeeler().get_params()) >= {"max_rounds", "stop_fraction", "depth_step"}


def test_equivalent_layer_fits_and_extrapolates(data):
    X, y = data
    est = EquivalentLayer(depth=0.2, shape=(12, 12)).fit(X, y)
    assert est.converged_ and est.n_iter_ >= 0
    assert est.residual_norm_ <= 1e-8 * np.linalg.norm(y)
    np.testing.assert_allclose(est.predict(X), y, rtol=1e-8, atol=1e-10)
    assert est.score(X, y) == pytest.approx(1.0)
    assert np.all(est.density_.phi >= 0)
    # upward continuation of the fitted layer stays close to the true field
    # (a layer shallower than the node spacing would alias instead)
    above = X + [0, 0, 0.2]
    truth = synth_field(TWO_SOURCES, above)
    assert np.linalg.norm(est.predict(above) - truth) <= 0.02 * np.linalg.norm(truth)


def test_equivalent_layer_validation(data):
    X, y = data
    with pytest.raises(NotFittedError):
        EquivalentLayer().predict(X)
    with pytest.raises(ShapeError):
        EquivalentLayer().fit(X[:, :2], y)
    with pytest.raises(ValueError):
        EquivalentLayer().fit(X, y[:-1])
    with pytest.raises(ValueError):
        EquivalentLayer().fit(X, np.where(np.arange(len(y)) == 3, np.nan, y))


def test_downward_continuation_noise_free(data):
    X, y = data
    est = DownwardContinuation(depths=np.arange(0.1, 0.55, 0.05), shape=(12, 12)).fit(X, y)
    assert est.depth_ is not None and 0.2 <= est.depth_ <= 0.4
    assert est.threshold_ is None
    assert len(est.scan_) == 9
    assert est.predict(X).shape == y.shape


def test_downward_continuation_noisy_uses_discrepancy(data):
    X, y = data
    rng = np.random.Generator(np.random.PCG64(0))
    y_noisy = y + 0.05 * np.max(np.abs(y)) * rng.standard_normal(len(y))
    est = DownwardContinuation(depths=[0.1, 0.2, 0.3, 0.4, 0.5], delta=0.05, shape=(12, 12))
    est.fit(X, y_noisy)
    assert est.threshold_ == pytest.approx(0.05 * np.sqrt(len(y)) * np.max(np.abs(y_noisy)))
    assert est.residual_norm_ <= est.threshold_
    bigger = clone(est).set_params(delta=0.2).fit(X, y_noisy)
    assert bigger.depth_ >= est.depth_


def test_source_peeler(data):
    X, y = data
    est = SourcePeeler(shape=(12, 12), depth_start=0.04, depth_step=0.02, depth_stop=0.6)
    est.fit(X, y)
    assert 1 <= len(est.sources_) <= est.max_rounds
    pred = est.predict(X)
    assert np.linalg.norm(pred - y) < np.linalg.norm(y)
    again = pickle.loads(pickle.dumps(est))
    np.testing.assert_array_equal(again.predict(X), pred)
