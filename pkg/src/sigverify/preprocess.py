"""Geometry/time normalization and fixed-count arc-length resampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ink import Pen, SignatureInstance

HEIGHT = 128
DEFAULT_RESAMPLE_N = 128

# column layout of the per-stroke arrays
X, Y, T, PEN = range(4)


class EmptySignature(ValueError):
    pass


class InvalidCount(ValueError):
    pass


@dataclass(frozen=True)
class NormalizedSignature:
    """Strokes as float arrays with columns (x, y, elapsed ms, pen)."""

    strokes: tuple[np.ndarray, ...]
    height_units: int = HEIGHT

    @property
    def points(self) -> np.ndarray:
        return np.concatenate(self.strokes, axis=0)

    @property
    def n_points(self) -> int:
        return sum(len(s) for s in self.strokes)


def _as_arrays(sig) -> list[np.ndarray]:
    if isinstance(sig, NormalizedSignature):
        return [np.array(s, dtype=np.float64) for s in sig.strokes]
    if isinstance(sig, SignatureInstance):
        return [
            np.array([(p.x, p.y, p.t, int(p.pen)) for p in s.points], dtype=np.float64)
            for s in sig.strokes
        ]
    return [np.array(s, dtype=np.float64).reshape(-1, 4) for s in sig]


def normalize(sig) -> NormalizedSignature:
    """Translate to the origin and scale uniformly so the vertical extent is 128.

    Accepts a :class:`SignatureInstance`, an already normalized signature, or a
    list of (n, 4) stroke arrays.  All-flat signatures are scaled by their
    horizontal extent instead; a single location keeps unit scale.
    """
    strokes = [s for s in _as_arrays(sig) if len(s)]
    if not strokes:
        raise EmptySignature("signature has no points")
    allp = np.concatenate(strokes, axis=0)
    lo = allp[:, [X, Y]].min(axis=0)
    hi = allp[:, [X, Y]].max(axis=0)
    width, height = hi - lo
    if height > 0:
        scale = HEIGHT / height
    elif width > 0:
        scale = HEIGHT / width
    else:
        scale = 1.0
    t0 = strokes[0][0, T]
    out = []
    for s in strokes:
        s = s.copy()
        s[:, X] = (s[:, X] - lo[0]) * scale
        s[:, Y] = (s[:, Y] - lo[1]) * scale
        s[:, T] = s[:, T] - t0
        out.append(s)
    return NormalizedSignature(tuple(out))


def arc_lengths(stroke: np.ndarray) -> np.ndarray:
    """Cumulative arc length along a stroke, starting at 0."""
    d = np.hypot(np.diff(stroke[:, X]), np.diff(stroke[:, Y]))
    return np.concatenate([[0.0], np.cumsum(d)])


def allocate_points(lengths, n: int) -> list[int]:
    """Split ``n`` points across strokes in proportion to ``lengths``.

    Largest-remainder rounding with ties going to the earlier stroke, then
    every stroke is topped up to at least one point by taking from the
    currently largest share.  With more strokes than points the longest
    strokes win.
    """
    lengths = np.asarray(lengths, dtype=np.float64)
    k = len(lengths)
    if k == 0:
        return []
    weights = lengths if lengths.sum() > 0 else np.ones(k)
    if k >= n:
        order = sorted(range(k), key=lambda i: (-weights[i], i))[:n]
        return [1 if i in order else 0 for i in range(k)]
    quota = weights / weights.sum() * n
    alloc = np.floor(quota).astype(int)
    rem = quota - alloc
    short = n - alloc.sum()
    for i in sorted(range(k), key=lambda i: (-rem[i], i))[:short]:
        alloc[i] += 1
    for i in range(k):
        while alloc[i] == 0:
            donor = max(range(k), key=lambda j: (alloc[j], -j))
            alloc[donor] -= 1
            alloc[i] += 1
    return alloc.tolist()


def _resample_stroke(stroke: np.ndarray, count: int) -> np.ndarray:
    out = np.empty((count, 4))
    if count == 1:
        out[0, :3] = stroke[0, :3]
    else:
        s = arc_lengths(stroke)
        if s[-1] > 0:
            # drop zero-length steps so the interpolation abscissa is strictly increasing
            keep = np.concatenate([[True], np.diff(s) > 0])
            s_k, pts = s[keep], stroke[keep]
            # duplicated positions keep the timestamp of the last repeat
            pts = pts.copy()
            idx = np.flatnonzero(keep)
            ends = np.concatenate([idx[1:] - 1, [len(stroke) - 1]])
            pts[:, T] = stroke[ends, T]
            pts[0, T] = stroke[0, T]
            targets = np.linspace(0.0, s[-1], count)
            for col in (X, Y, T):
                out[:, col] = np.interp(targets, s_k, pts[:, col])
        else:
            out[:, X] = stroke[0, X]
            out[:, Y] = stroke[0, Y]
            out[:, T] = np.linspace(stroke[0, T], stroke[-1, T], count)
    out[:, PEN] = int(Pen.DOWN)
    out[-1, PEN] = int(Pen.UP)
    return out


def resample_uniform(sig: NormalizedSignature, n: int = DEFAULT_RESAMPLE_N) -> np.ndarray:
    """Resample to exactly ``n`` rows of (x, y, elapsed ms, pen).

    Points go to strokes in proportion to arc length and sit at equal
    arc-length spacing within each stroke; every stroke's last sample is
    marked pen-up.
    """
    if n < 2:
        raise InvalidCount(f"resample count must be >= 2, got {n}")
    strokes = [s for s in sig.strokes if len(s)]
    if not strokes:
        raise EmptySignature("signature has no points")
    alloc = allocate_points([arc_lengths(s)[-1] for s in strokes], n)
    rows = [_resample_stroke(s, c) for s, c in zip(strokes, alloc) if c > 0]
    return np.concatenate(rows, axis=0)
