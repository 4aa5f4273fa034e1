import numpy as np
import pytest
from sklearn.base import clone
from sklearn.pipeline import make_pipeline

from sigverify.estimators import (
    CNNClassifier,
    CNNLSTMClassifier,
    PSFTransformer,
    ResampleTransformer,
    RNNClassifier,
    check_labels,
    check_rasters,
    load_network,
)
from sigverify.synthetic import time_dilated_pairs


@pytest.fixture(scope="module")
def pairs():
    data = time_dilated_pairs(6, seed=2)
    return data, np.array([int(s.label) for s in data])


@pytest.mark.parametrize(
    "est",
    [
        PSFTransformer("stacked", square=True),
        ResampleTransformer(32),
        CNNClassifier("temporal", epochs=3),
        CNNLSTMClassifier("stacked", dropout=True),
        RNNClassifier(n_points=16, lr="auto"),
    ],
)
def test_params_and_clone(est):
    params = est.get_params()
    twin = clone(est)
    assert twin.get_params() == params
    assert twin is not est
    key = next(iter(params))
    twin.set_params(**{key: params[key]})


def test_psf_transformer_shapes(pairs):
    data, _ = pairs
    sq = PSFTransformer("stacked", square=True).fit_transform(data)
    assert sq.shape == (len(data), 14, 128, 128)
    raw = PSFTransformer("original").fit_transform(data)
    assert all(x.shape[0] == 7 and x.shape[1] == 128 and x.shape[2] % 16 == 0 for x in raw)


def test_psf_transformer_bad_variant(pairs):
    with pytest.raises(ValueError):
        PSFTransformer("colour").fit(pairs[0])


def test_resample_transformer(pairs):
    out = ResampleTransformer(20).fit_transform(pairs[0])
    assert out.shape == (len(pairs[0]), 20, 4)
    # elapsed time distinguishes each genuine from its dilated copy
    assert out[1, -1, 2] == pytest.approx(2 * out[0, -1, 2], rel=0.01)


def test_check_rasters_and_labels():
    with pytest.raises(ValueError):
        check_rasters([np.zeros((7, 64, 16))])
    with pytest.raises(ValueError):
        check_rasters([np.zeros((7, 128, 16))], channels=14)
    with pytest.raises(ValueError):
        check_rasters([np.full((7, 128, 16), np.nan)])
    with pytest.raises(ValueError):
        check_labels([0, 2], 2)
    with pytest.raises(ValueError):
        check_labels([0, 1], 3)


def test_pipeline_fit_predict(pairs):
    data, y = pairs
    clf = make_pipeline(ResampleTransformer(8), RNNClassifier(n_points=8, epochs=3, lr=1e-2, seed=1))
    clf.fit(data, y)
    proba = clf.predict_proba(data)
    assert proba.shape == (len(data), 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    pred = clf.predict(data)
    assert set(pred) <= {0, 1}
    np.testing.assert_array_equal(pred, (proba[:, 1] > 0.5).astype(int))


def test_unfitted_raises():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        RNNClassifier().predict(np.zeros((1, 128, 4)))


def test_lr_auto_records_scan(pairs):
    data, y = pairs
    X = ResampleTransformer(8).fit_transform(data)
    clf = RNNClassifier(n_points=8, epochs=1, lr="auto").fit(X, y)
    assert clf.lr_scan_ is not None
    assert clf.lr_ == clf.lr_scan_.lr_chosen


def test_save_and_load_round_trip(pairs, tmp_path):
    data, y = pairs
    X = PSFTransformer("temporal").fit_transform(data)
    clf = CNNLSTMClassifier("temporal", epochs=1, seed=3).fit(X, y)
    path = tmp_path / "m.svmd"
    clf.save(path)
    net, config = load_network(path)
    assert config["kind"] == "cnn_lstm" and config["seed"] == "3"
    from sigverify.pipeline import predict_proba

    np.testing.assert_array_equal(predict_proba(net, X), clf.predict_proba(X)[:, 1])


def test_cnn_squares_other_widths():
    clf = CNNClassifier()
    items = clf._check_X([np.ones((7, 128, 48))])
    assert items[0].shape == (7, 128, 128)


def test_cnn_lstm_rejects_width():
    with pytest.raises(ValueError):
        CNNLSTMClassifier()._check_X([np.ones((7, 128, 40))])
