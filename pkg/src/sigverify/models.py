"""The three verification networks: fixed-size CNN, point RNN and CNN-LSTM.

Every network maps a batch to genuine-class probabilities of shape (B,).
Inputs are divided by a per-channel ``input_scale`` (and shifted by
``input_shift``) that the estimators fit on training data.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import nn
from .nn import Tensor
from .preprocess import DEFAULT_RESAMPLE_N, HEIGHT
from .psf import WIDTH_MULTIPLE, n_channels

KINDS = ("cnn_fixed", "rnn_points", "cnn_lstm")

# LeNet-5 sizing for the fixed-width CNN
LENET_CHANNELS = (6, 16, 120)
LENET_HIDDEN = 84

RNN_EMBED = 64
RNN_HIDDEN = 128
RNN_FEATURES = 4

# (name, out_channels, (sW, sH)) / pooling rows, following the CNN-LSTM table
CNN_LSTM_STACK = (
    ("conv1", 32, (1, 1)),
    ("pool1", None, None),
    ("conv2", 64, (1, 1)),
    ("pool2", None, None),
    ("conv3", 128, (1, 1)),
    ("conv4", 256, (1, 2)),
    ("pool3", None, None),
    ("conv5", 128, (1, 2)),
    ("conv6", 256, (1, 2)),
    ("pool4", None, None),
)
LSTM_HIDDEN = 256
FC1_HIDDEN = 128
DROPOUT_P = 0.5
DECISION_THRESHOLD = 0.5


class ConfigMismatch(ValueError):
    pass


class WidthNotMultipleOf16(ValueError):
    pass


@dataclass
class ModelConfig:
    kind: str = "cnn_lstm"
    feature_variant: str = "original"
    input_channels: int = 7
    resample_n: int | None = None
    dropout_fc1: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigMismatch(f"unknown model kind {self.kind!r}")
        if self.kind == "rnn_points":
            if self.resample_n is None:
                self.resample_n = DEFAULT_RESAMPLE_N
        elif self.resample_n is not None:
            raise ConfigMismatch("resample_n only applies to rnn_points")
        if self.input_channels != n_channels(self.feature_variant):
            raise ConfigMismatch(
                f"{self.feature_variant} features have {n_channels(self.feature_variant)} "
                f"channels, config says {self.input_channels}"
            )

    @classmethod
    def for_variant(cls, kind: str, variant: str = "original", **kw) -> "ModelConfig":
        return cls(kind=kind, feature_variant=variant, input_channels=n_channels(variant), **kw)

    def to_dict(self) -> dict[str, str]:
        return {k: "" if v is None else str(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d) -> "ModelConfig":
        kw = {}
        for f in fields(cls):
            if f.name not in d:
                continue
            raw = d[f.name]
            if f.name in ("input_channels",):
                kw[f.name] = int(raw)
            elif f.name == "resample_n":
                kw[f.name] = int(raw) if raw not in ("", "None") else None
            elif f.name == "dropout_fc1":
                kw[f.name] = str(raw) in ("True", "true", "1")
            else:
                kw[f.name] = raw
        return cls(**kw)


class Network(nn.Module):
    cfg: ModelConfig

    def __init__(self, cfg: ModelConfig, n_inputs: int, seed: int, dtype):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.rng = np.random.default_rng(seed)
        self.input_shift = np.zeros(n_inputs, dtype=self.dtype)
        self.input_scale = np.ones(n_inputs, dtype=self.dtype)

    def buffers(self) -> dict[str, np.ndarray]:
        return {"input_shift": self.input_shift, "input_scale": self.input_scale}

    def state_dict(self) -> dict[str, np.ndarray]:
        d = {name: p.data for name, p in self.named_parameters()}
        d.update(self.buffers())
        return d

    def load_state_dict(self, state) -> None:
        params = dict(self.named_parameters())
        for name, value in state.items():
            if name in ("input_shift", "input_scale"):
                setattr(self, name, np.asarray(value, dtype=self.dtype).copy())
            elif name in params:
                if params[name].shape != tuple(value.shape):
                    raise ConfigMismatch(f"{name}: checkpoint shape {value.shape} vs {params[name].shape}")
                params[name].data = np.asarray(value, dtype=self.dtype).copy()
            else:
                raise ConfigMismatch(f"unexpected tensor {name!r} in state")

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def predict_proba(self, x) -> np.ndarray:
        was = self.training
        self.eval()
        try:
            return self.forward(x).data.astype(np.float64)
        finally:
            self.train(was)


class CNNFixed(Network):
    """LeNet-5-shaped classifier on C x 128 x 128 inputs."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        if cfg.kind != "cnn_fixed":
            raise ConfigMismatch(f"CNNFixed built from a {cfg.kind} config")
        super().__init__(cfg, cfg.input_channels, seed, dtype)
        rng, c = self.rng, cfg.input_channels
        c1, c2, c3 = LENET_CHANNELS
        self.conv1 = nn.Conv2d(c, c1, rng=rng, dtype=dtype)
        self.conv2 = nn.Conv2d(c1, c2, rng=rng, dtype=dtype)
        self.conv3 = nn.Conv2d(c2, c3, rng=rng, dtype=dtype)
        side = HEIGHT // 8
        self.fc1 = nn.Linear(c3 * side * side, LENET_HIDDEN, rng=rng, dtype=dtype)
        self.fc2 = nn.Linear(LENET_HIDDEN, 1, rng=rng, dtype=dtype)

    def forward(self, x) -> Tensor:
        x = _scaled_images(self, x)
        if x.shape[-2:] != (HEIGHT, HEIGHT):
            raise nn.ShapeMismatch(f"cnn_fixed expects {HEIGHT}x{HEIGHT} inputs, got {x.shape[-2:]}")
        for conv in (self.conv1, self.conv2, self.conv3):
            x = nn.avgpool2d(nn.relu(conv(x)))
        x = x.reshape(x.shape[0], -1)
        x = nn.relu(self.fc1(x))
        return nn.sigmoid(self.fc2(x)).reshape(-1)


class RNNPoints(Network):
    """Linear point embedding, LSTM over the resampled sequence, logistic head."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        if cfg.kind != "rnn_points":
            raise ConfigMismatch(f"RNNPoints built from a {cfg.kind} config")
        super().__init__(cfg, RNN_FEATURES, seed, dtype)
        rng = self.rng
        self.embed = nn.Linear(RNN_FEATURES, RNN_EMBED, rng=rng, dtype=dtype)
        self.lstm = nn.LSTM(RNN_EMBED, RNN_HIDDEN, rng=rng, dtype=dtype)
        self.fc = nn.Linear(RNN_HIDDEN, 1, rng=rng, dtype=dtype)

    def forward(self, x) -> Tensor:
        arr = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=self.dtype)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or arr.shape[-1] != RNN_FEATURES:
            raise nn.ShapeMismatch(f"rnn_points expects (B, N, 4) sequences, got {arr.shape}")
        arr = (arr - self.input_shift) / self.input_scale
        b, t, _ = arr.shape
        z = self.embed(Tensor(arr.reshape(b * t, RNN_FEATURES)))
        h = self.lstm(z.reshape(b, t, RNN_EMBED))
        return nn.sigmoid(self.fc(h)).reshape(-1)


class CNNLSTM(Network):
    """Convolutional encoder over a C x 128 x W raster feeding an LSTM column by column."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        if cfg.kind != "cnn_lstm":
            raise ConfigMismatch(f"CNNLSTM built from a {cfg.kind} config")
        super().__init__(cfg, cfg.input_channels, seed, dtype)
        rng = self.rng
        convs = []
        c_in = cfg.input_channels
        for name, c_out, stride in CNN_LSTM_STACK:
            if c_out is not None:
                convs.append(nn.Conv2d(c_in, c_out, stride, rng=rng, dtype=dtype))
                c_in = c_out
        self.convs = convs
        self.lstm = nn.LSTM(c_in, LSTM_HIDDEN, rng=rng, dtype=dtype)
        self.fc1 = nn.Linear(LSTM_HIDDEN, FC1_HIDDEN, rng=rng, dtype=dtype)
        self.fc2 = nn.Linear(FC1_HIDDEN, 1, rng=rng, dtype=dtype)

    def encode(self, x, trace: list | None = None) -> Tensor:
        """Run the conv/pool stack; ``trace`` collects (layer, (W, H, C)) per row."""
        x = _scaled_images(self, x)
        w = x.shape[-1]
        if w % WIDTH_MULTIPLE or w == 0:
            raise WidthNotMultipleOf16(f"input width {w} is not a positive multiple of {WIDTH_MULTIPLE}")
        convs = iter(self.convs)
        for name, c_out, _ in CNN_LSTM_STACK:
            x = nn.avgpool2d(x) if c_out is None else nn.relu(next(convs)(x))
            if trace is not None:
                trace.append((name, (x.shape[3], x.shape[2], x.shape[1])))
        return x

    def forward(self, x, trace: list | None = None) -> Tensor:
        x = self.encode(x, trace)
        b, c, h, w = x.shape
        seq = x.reshape(b, c * h, w).transpose(0, 2, 1)
        hidden = self.lstm(seq)
        z = nn.relu(self.fc1(hidden))
        if self.cfg.dropout_fc1:
            z = nn.dropout(z, DROPOUT_P, self.rng, self.training)
        return nn.sigmoid(self.fc2(z)).reshape(-1)


def _scaled_images(net: Network, x) -> Tensor:
    arr = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=net.dtype)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1] != net.cfg.input_channels:
        raise nn.ShapeMismatch(
            f"expected (B, {net.cfg.input_channels}, H, W) input, got {arr.shape}"
        )
    arr = (arr - net.input_shift[:, None, None]) / net.input_scale[:, None, None]
    return Tensor(arr)


def build_cnn_fixed(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> CNNFixed:
    return CNNFixed(cfg, seed, dtype)


def build_rnn_points(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> RNNPoints:
    return RNNPoints(cfg, seed, dtype)


def build_cnn_lstm(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> CNNLSTM:
    return CNNLSTM(cfg, seed, dtype)


BUILDERS = {"cnn_fixed": build_cnn_fixed, "rnn_points": build_rnn_points, "cnn_lstm": build_cnn_lstm}


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> Network:
    return BUILDERS[cfg.kind](cfg, seed, dtype)


def classify(proba, threshold: float = DECISION_THRESHOLD) -> np.ndarray:
    """1 (genuine) strictly above the threshold; exact ties reject as forgery."""
    return (np.asarray(proba) > threshold).astype(int)
