"""scikit-learn style front end: feature transformers and network classifiers.

Typical use::

    from sklearn.pipeline import make_pipeline
    clf = make_pipeline(PSFTransformer("temporal", square=True), CNNClassifier(epochs=30))
    clf.fit(instances, labels)

Labels are 1 for genuine and 0 for forgery.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import pipeline
from .ink import SignatureInstance
from .models import DECISION_THRESHOLD, ModelConfig, Network, build_model, classify
from .nn import load_checkpoint, save_checkpoint
from .preprocess import DEFAULT_RESAMPLE_N, HEIGHT, NormalizedSignature, normalize, resample_uniform
from .psf import VARIANTS, WIDTH_MULTIPLE, n_channels, rasterize, scale_to_square


def _normalized(sig) -> NormalizedSignature:
    return sig if isinstance(sig, NormalizedSignature) else normalize(sig)


class PSFTransformer(TransformerMixin, BaseEstimator):
    """Signature instances -> C x 128 x W feature rasters.

    With ``square=True`` every raster is resampled to width 128 and the
    output is one (n, C, 128, 128) array; otherwise a list of arrays.
    """

    def __init__(self, variant: str = "original", square: bool = False):
        self.variant = variant
        self.square = square

    def fit(self, X, y=None):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        self.n_channels_ = n_channels(self.variant)
        return self

    def transform(self, X):
        check_is_fitted(self, "n_channels_")
        out = []
        for sig in X:
            t = rasterize(_normalized(sig), self.variant)
            out.append(scale_to_square(t).data if self.square else t.data)
        return np.stack(out) if self.square else out


class ResampleTransformer(TransformerMixin, BaseEstimator):
    """Signature instances -> (n, N, 4) arrays of (x, y, elapsed ms, pen)."""

    def __init__(self, n_points: int = DEFAULT_RESAMPLE_N):
        self.n_points = n_points

    def fit(self, X, y=None):
        if self.n_points < 2:
            raise ValueError("n_points must be >= 2")
        self.n_features_out_ = 4
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_out_")
        return np.stack([resample_uniform(_normalized(sig), self.n_points) for sig in X])


def check_rasters(X, channels: int | None = None) -> list[np.ndarray]:
    """Validate a batch of C x 128 x W rasters and return them as float arrays."""
    if isinstance(X, np.ndarray) and X.ndim == 4:
        items = list(X)
    else:
        items = [np.asarray(x, dtype=np.float64) for x in X]
    if not items:
        raise ValueError("empty input")
    for i, x in enumerate(items):
        if isinstance(x, SignatureInstance):
            raise TypeError("got raw signatures; transform them with PSFTransformer first")
        if x.ndim != 3 or x.shape[1] != HEIGHT:
            raise ValueError(f"sample {i}: expected C x {HEIGHT} x W, got {x.shape}")
        if channels is not None and x.shape[0] != channels:
            raise ValueError(f"sample {i}: expected {channels} channels, got {x.shape[0]}")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"sample {i}: non-finite values")
    return items


def check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y).astype(int).reshape(-1)
    if len(y) != n:
        raise ValueError(f"{n} samples but {len(y)} labels")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be 0 (forgery) or 1 (genuine)")
    return y


class _NetworkClassifier(ClassifierMixin, BaseEstimator):
    kind: str = ""

    def _make_config(self) -> ModelConfig:
        raise NotImplementedError

    def _check_X(self, X):
        raise NotImplementedError

    def _fit_scaling(self, net: Network, X) -> None:
        raise NotImplementedError

    def fit(self, X, y, X_test=None, y_test=None, on_epoch_end=None):
        X = self._check_X(X)
        y = check_labels(y, len(X))
        cfg = self._make_config()
        self.config_ = cfg
        self.classes_ = np.array([0, 1])
        self.network_ = build_model(cfg, seed=self.seed, dtype=np.dtype(self.dtype))
        self._fit_scaling(self.network_, X)
        lr = self.lr
        self.lr_scan_ = None
        if lr == "auto":
            self.lr_scan_ = pipeline.lr_range_test(
                self.network_, X, y, batch_size=self.batch_size, seed=self.seed
            )
            lr = self.lr_scan_.lr_chosen
        self.lr_ = float(lr)
        tcfg = pipeline.TrainConfig(
            epochs=self.epochs,
            lr_initial=self.lr_,
            batch_size=self.batch_size,
            lr_decay_per_epoch=self.lr_decay,
            seed=self.seed,
        )
        if X_test is not None:
            X_test = self._check_X(X_test)
            y_test = check_labels(y_test, len(X_test))
        self.history_ = pipeline.train(self.network_, X, y, tcfg, X_test, y_test, on_epoch_end)
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "network_")
        p = pipeline.predict_proba(self.network_, self._check_X(X))
        return np.stack([1.0 - p, p], axis=1)

    def decision_function(self, X) -> np.ndarray:
        return self.predict_proba(X)[:, 1]

    def predict(self, X) -> np.ndarray:
        return classify(self.decision_function(X), DECISION_THRESHOLD)

    def evaluate(self, X, y, threshold: float = DECISION_THRESHOLD) -> pipeline.Metrics:
        check_is_fitted(self, "network_")
        X = self._check_X(X)
        return pipeline.evaluate(self.network_, X, check_labels(y, len(X)), threshold)

    def save(self, path) -> None:
        check_is_fitted(self, "network_")
        save_network(self.network_, path, {"seed": self.seed, "lr": self.lr_})


class _RasterClassifier(_NetworkClassifier):
    def _check_X(self, X):
        return check_rasters(X, n_channels(self.variant))

    def _fit_scaling(self, net: Network, X) -> None:
        # per-channel mean/std over drawn pixels only; background would swamp both
        c = net.cfg.input_channels
        total, sq = np.zeros(c), np.zeros(c)
        count = 0
        for x in X:
            drawn = np.any(x != 0, axis=0)
            vals = x[:, drawn].astype(np.float64)
            total += vals.sum(axis=1)
            sq += (vals**2).sum(axis=1)
            count += int(drawn.sum())
        count = max(count, 1)
        mean = total / count
        std = np.sqrt(np.maximum(sq / count - mean**2, 0.0))
        net.input_shift = mean.astype(net.dtype)
        net.input_scale = np.where(std > 1e-12, std, 1.0).astype(net.dtype)


class CNNClassifier(_RasterClassifier):
    """LeNet-5-style CNN on rasters resampled to 128 x 128."""

    kind = "cnn_fixed"

    def __init__(self, variant="original", epochs=20, lr=1e-3, batch_size=pipeline.BATCH_SIZE,
                 lr_decay=pipeline.LR_DECAY, seed=0, dtype="float32"):
        self.variant = variant
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.lr_decay = lr_decay
        self.seed = seed
        self.dtype = dtype

    def _make_config(self):
        return ModelConfig.for_variant("cnn_fixed", self.variant)

    def _check_X(self, X):
        items = super()._check_X(X)
        return [x if x.shape[2] == HEIGHT else scale_to_square(x) for x in items]


class CNNLSTMClassifier(_RasterClassifier):
    """Convolutional encoder + LSTM over variable-width rasters."""

    kind = "cnn_lstm"

    def __init__(self, variant="original", epochs=20, lr=1e-3, batch_size=pipeline.BATCH_SIZE,
                 lr_decay=pipeline.LR_DECAY, dropout=False, seed=0, dtype="float32"):
        self.variant = variant
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.lr_decay = lr_decay
        self.dropout = dropout
        self.seed = seed
        self.dtype = dtype

    def _make_config(self):
        return ModelConfig.for_variant("cnn_lstm", self.variant, dropout_fc1=bool(self.dropout))

    def _check_X(self, X):
        items = super()._check_X(X)
        for i, x in enumerate(items):
            if x.shape[2] % WIDTH_MULTIPLE:
                raise ValueError(f"sample {i}: width {x.shape[2]} is not a multiple of {WIDTH_MULTIPLE}")
        return items


class RNNClassifier(_NetworkClassifier):
    """LSTM over resampled (x, y, elapsed ms, pen) point sequences."""

    kind = "rnn_points"

    def __init__(self, n_points=DEFAULT_RESAMPLE_N, epochs=20, lr=1e-3, batch_size=pipeline.BATCH_SIZE,
                 lr_decay=pipeline.LR_DECAY, seed=0, dtype="float32"):
        self.n_points = n_points
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.lr_decay = lr_decay
        self.seed = seed
        self.dtype = dtype

    def _make_config(self):
        return ModelConfig.for_variant("rnn_points", "original", resample_n=self.n_points)

    def _check_X(self, X):
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 4:
            raise ValueError(f"expected (n, N, 4) point sequences, got {arr.shape}")
        if arr.shape[1] != self.n_points:
            raise ValueError(f"expected sequences of {self.n_points} points, got {arr.shape[1]}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite values in sequences")
        return list(arr)

    def _fit_scaling(self, net: Network, X) -> None:
        flat = np.concatenate(X, axis=0)
        std = flat.std(axis=0)
        net.input_shift = flat.mean(axis=0).astype(net.dtype)
        net.input_scale = np.where(std > 0, std, 1.0).astype(net.dtype)


ESTIMATORS = {"cnn_fixed": CNNClassifier, "cnn_lstm": CNNLSTMClassifier, "rnn_points": RNNClassifier}


def save_network(net: Network, path, extra=None) -> None:
    config = dict(net.cfg.to_dict())
    config.update({k: str(v) for k, v in (extra or {}).items()})
    save_checkpoint(path, net.state_dict(), config)


def load_network(path, dtype=np.float32) -> tuple[Network, dict[str, str]]:
    params, config = load_checkpoint(path)
    cfg = ModelConfig.from_dict(config)
    net = build_model(cfg, seed=0, dtype=dtype)
    net.load_state_dict(params)
    net.eval()
    return net, config
