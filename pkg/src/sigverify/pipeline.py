"""Splitting, learning-rate scan, mini-batch training and evaluation metrics."""
from __future__ import annotations

import logging
import math
import warnings
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import nn
from .models import DECISION_THRESHOLD, Network, classify

logger = logging.getLogger(__name__)

BATCH_SIZE = 10
LR_DECAY = 0.95
TRAIN_FRACTION = 0.8
SMOOTHING = 0.9
DIVERGENCE_FACTOR = 4.0
LR_MARGIN = 10.0


class EmptyCorpus(ValueError):
    pass


class EmptyTestSet(ValueError):
    pass


class InvalidRange(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    def __init__(self, epoch: int, batch: int, detail: str = ""):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch} {detail}".strip())
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    epochs: int = 10
    lr_initial: float = 1e-3
    batch_size: int = BATCH_SIZE
    lr_decay_per_epoch: float = LR_DECAY
    seed: int = 0
    split_fraction_train: float = TRAIN_FRACTION

    def __post_init__(self):
        if not 0.0 < self.split_fraction_train < 1.0:
            raise ValueError("split_fraction_train must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr_initial > 0:
            raise ValueError("lr_initial must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def lr_at(self, epoch: int) -> float:
        return self.lr_initial * self.lr_decay_per_epoch**epoch


@dataclass
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float = field(init=False)
    precision: float = field(init=False)
    recall: float = field(init=False)
    f1: float = field(init=False)

    def __post_init__(self):
        total = self.tp + self.fp + self.tn + self.fn
        self.accuracy = _ratio(self.tp + self.tn, total)
        self.precision = _ratio(self.tp, self.tp + self.fp)
        self.recall = _ratio(self.tp, self.tp + self.fn)
        self.f1 = _ratio(2 * self.precision * self.recall, self.precision + self.recall)

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "Metrics":
        """Genuine (1) is the positive class."""
        t = np.asarray(y_true).astype(bool)
        p = np.asarray(y_pred).astype(bool)
        return cls(
            tp=int(np.sum(t & p)),
            fp=int(np.sum(~t & p)),
            tn=int(np.sum(~t & ~p)),
            fn=int(np.sum(t & ~p)),
        )

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(num, den) -> float:
    return float(num) / den if den else 0.0


# -- splitting -----------------------------------------------------------------

def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def split_indices(labels, fraction: float = TRAIN_FRACTION, seed: int = 0, groups=None):
    """Return sorted (train_idx, test_idx).

    Without ``groups`` the split is per item and stratified by label; with
    ``groups`` whole groups (e.g. writers) go to one side.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if n == 0:
        raise EmptyCorpus("cannot split an empty corpus")
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train: list[int] = []
    if groups is None:
        for lab in np.unique(labels):
            idx = np.flatnonzero(labels == lab)
            perm = rng.permutation(idx)
            train.extend(perm[: _round_half_up(len(idx) * fraction)].tolist())
    else:
        groups = np.asarray(groups)
        uniq = rng.permutation(np.unique(groups))
        chosen = set(uniq[: _round_half_up(len(uniq) * fraction)].tolist())
        train = [i for i in range(n) if groups[i] in chosen]
    train_set = set(train)
    test = [i for i in range(n) if i not in train_set]
    return sorted(train), test


def split_dataset(corpus, fraction: float = TRAIN_FRACTION, seed: int = 0, by_writer: bool = False):
    """Random train/test split of signature instances (stratified by label by default)."""
    instances = list(corpus)
    if not instances:
        raise EmptyCorpus("cannot split an empty corpus")
    labels = [int(s.label) for s in instances]
    groups = [s.writer_id for s in instances] if by_writer else None
    tr, te = split_indices(labels, fraction, seed, groups)
    return [instances[i] for i in tr], [instances[i] for i in te]


# -- batching ------------------------------------------------------------------

def _shape_groups(X, idx) -> dict[tuple, list[int]]:
    groups: dict[tuple, list[int]] = defaultdict(list)
    for i in idx:
        groups[np.shape(X[i])].append(i)
    return groups


def batch_loss(model: Network, X, y, idx) -> tuple[nn.Tape, nn.Tensor]:
    """Mean BCE over the batch ``idx``; samples of equal shape share one forward pass."""
    y = np.asarray(y)
    total = None
    tape = nn.Tape()
    with tape:
        for _, members in sorted(_shape_groups(X, idx).items()):
            xb = np.stack([np.asarray(X[i]) for i in members])
            p = model(xb)
            part = nn.bce_loss(p, y[members]) * (len(members) / len(idx))
            total = part if total is None else total + part
    return tape, total


def train_step(model: Network, X, y, idx, lr: float) -> float:
    tape, loss = batch_loss(model, X, y, idx)
    value = loss.item()
    if not np.isfinite(value):
        raise nn.NonFiniteError(f"loss {value}")
    tape.backward(loss)
    for p in model.parameters():
        nn.adam_step(p, lr)
    return value


def iter_batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


@dataclass
class EpochRecord:
    epoch: int
    mean_train_loss: float
    lr: float
    test_accuracy: float | None = None


def train(
    model: Network,
    X: Sequence,
    y,
    cfg: TrainConfig,
    X_test=None,
    y_test=None,
    on_epoch_end: Callable[[EpochRecord, Network], bool] | None = None,
) -> list[EpochRecord]:
    """Adam over shuffled mini-batches with per-epoch exponential lr decay.

    ``on_epoch_end(record, model)`` may return True to stop after that epoch.
    """
    y = np.asarray(y)
    n = len(y)
    rng = np.random.default_rng(cfg.seed)
    log: list[EpochRecord] = []
    model.train()
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        running = 0.0
        for b, idx in enumerate(iter_batches(n, cfg.batch_size, rng)):
            try:
                running += train_step(model, X, y, idx, lr) * len(idx)
            except nn.NonFiniteError as exc:
                raise NonFiniteLoss(epoch, b, str(exc)) from exc
        rec = EpochRecord(epoch, running / max(n, 1), lr)
        if X_test is not None and len(X_test):
            rec.test_accuracy = evaluate(model, X_test, y_test).accuracy
            model.train()
        log.append(rec)
        logger.info("epoch %d loss %.5f lr %.3g", epoch, rec.mean_train_loss, lr)
        if on_epoch_end is not None and on_epoch_end(rec, model):
            model.train()
            break
        model.train()
    model.eval()
    return log


def predict_proba(model: Network, X, chunk: int = 32) -> np.ndarray:
    out = np.empty(len(X))
    groups = _shape_groups(X, range(len(X)))
    was = model.training
    model.eval()
    try:
        for _, members in sorted(groups.items()):
            for s in range(0, len(members), chunk):
                part = members[s : s + chunk]
                out[part] = model(np.stack([np.asarray(X[i]) for i in part])).data
    finally:
        model.train(was)
    return out


def evaluate(model: Network, X, y, threshold: float = DECISION_THRESHOLD) -> Metrics:
    if len(X) == 0:
        raise EmptyTestSet("no test instances")
    return Metrics.from_predictions(y, classify(predict_proba(model, X), threshold))


# -- learning-rate range test ------------------------------------------------------

@dataclass
class LrScanResult:
    points: list[tuple[float, float]]
    lr_chosen: float
    lr_min: float
    lr_max: float
    flat: bool = False

    @property
    def lrs(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def losses(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])


def lr_schedule(lr_min: float, lr_max: float, steps: int) -> np.ndarray:
    ratio = (lr_max / lr_min) ** (1.0 / steps)
    return lr_min * ratio ** np.arange(steps)


def lr_range_test(
    model: Network,
    X,
    y,
    lr_min: float = 1e-7,
    lr_max: float = 1.0,
    steps: int = 100,
    batch_size: int = BATCH_SIZE,
    seed: int = 0,
    pick: str = "margin",
) -> LrScanResult:
    """Exponential learning-rate sweep, one mini-batch per step.

    The smoothed loss is an exponential moving average with bias correction;
    the scan stops once it exceeds four times its running minimum.  The pick
    is the lr at the smoothed minimum, divided by 10 with ``pick="margin"``
    (never below ``lr_min``), or taken as is with ``pick="min"``.  Model
    parameters and optimizer state are restored afterwards.
    """
    if not (0 < lr_min < lr_max):
        raise InvalidRange(f"need 0 < lr_min < lr_max, got {lr_min}, {lr_max}")
    if steps < 10:
        raise InvalidRange(f"need at least 10 steps, got {steps}")
    if pick not in ("margin", "min"):
        raise ValueError(f"pick must be 'margin' or 'min', got {pick!r}")
    y = np.asarray(y)
    state = nn.snapshot(model.parameters())
    rng = np.random.default_rng(seed)
    batches = iter(())
    points: list[tuple[float, float]] = []
    avg, best = 0.0, math.inf
    model.train()
    try:
        for k, lr in enumerate(lr_schedule(lr_min, lr_max, steps)):
            idx = next(batches, None)
            if idx is None:
                batches = iter_batches(len(y), batch_size, rng)
                idx = next(batches)
            try:
                loss = train_step(model, X, y, idx, float(lr))
            except nn.NonFiniteError:
                break
            avg = SMOOTHING * avg + (1.0 - SMOOTHING) * loss
            smoothed = avg / (1.0 - SMOOTHING ** (k + 1))
            points.append((float(lr), smoothed))
            best = min(best, smoothed)
            if smoothed > DIVERGENCE_FACTOR * best:
                break
    finally:
        nn.restore(state)
        model.eval()
    if not points:
        raise InvalidRange("scan diverged on its first step")
    losses = np.array([p[1] for p in points])
    i_best = int(np.argmin(losses))
    lr_best = points[i_best][0]
    flat = bool(np.all(np.abs(losses - losses[0]) <= 1e-12 * max(abs(losses[0]), 1e-300)))
    if flat:
        warnings.warn("learning-rate scan is flat; loss does not depend on lr", stacklevel=2)
    chosen = lr_best / LR_MARGIN if pick == "margin" else lr_best
    chosen = min(max(chosen, lr_min), lr_max)
    return LrScanResult(points, chosen, lr_min, lr_max, flat)
