"""Path-signature features of stroke segments and their raster tensors.

Each pair of consecutive points in a stroke yields a 7-vector: the constant
term, the displacement (dx, dy), and its Kronecker square
(dx*dx, dx*dy, dy*dx, dy*dy).  The temporal variant scales the first-order
terms by tau = ln(t + 1) and the second-order terms by tau**2, where t is the
elapsed time at the segment's start point.  Rasterizing writes each
segment's vector onto the integer pixels of the line joining its endpoints.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .preprocess import HEIGHT, T, X, Y, EmptySignature, NormalizedSignature

N_FEATURES = 7
WIDTH_MULTIPLE = 16
VARIANTS = ("original", "temporal", "stacked")
VARIANT_CODES = {name: i for i, name in enumerate(VARIANTS)}

PSFT_MAGIC = b"PSFT"
PSFT_VERSION = 1


class NegativeTime(ValueError):
    pass


class TensorFormatError(ValueError):
    pass


def segment_psf(a, b) -> np.ndarray:
    """Second-order path signature of the straight segment from ``a`` to ``b``."""
    dx = float(b[0]) - float(a[0])
    dy = float(b[1]) - float(a[1])
    return np.array([1.0, dx, dy, dx * dx, dx * dy, dy * dx, dy * dy])


def temporal_coefficient(t: float) -> float:
    if t < 0:
        raise NegativeTime(f"elapsed time must be >= 0, got {t}")
    return math.log1p(t)


def segment_psf_temporal(a, b, t: float | None = None, tau: float | None = None) -> np.ndarray:
    """Time-weighted segment feature.

    ``t`` defaults to ``a[2]`` (elapsed ms at the start point).  Passing
    ``tau`` directly bypasses the log transform.
    """
    if tau is None:
        tau = temporal_coefficient(float(a[2]) if t is None else float(t))
    dx = float(b[0]) - float(a[0])
    dy = float(b[1]) - float(a[1])
    tdx, tdy = tau * dx, tau * dy
    return np.array([tau, tdx, tdy, tdx * tdx, tdx * tdy, tdy * tdx, tdy * tdy])


def round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def pixel_of(x: float, y: float) -> tuple[int, int]:
    """(column, row) of a normalized point; y = 128 lands on the last row."""
    return round_half_up(x), min(max(round_half_up(y), 0), HEIGHT - 1)


def line_pixels(x0: int, y0: int, x1: int, y1: int) -> list[tuple[int, int]]:
    """Integer Bresenham line from (x0, y0) to (x1, y1), endpoints included.

    Along the major axis, minor-axis offsets round half away from the start
    point, so ties resolve the same way regardless of octant.
    """
    dx, dy = x1 - x0, y1 - y0
    sx = 1 if dx >= 0 else -1
    sy = 1 if dy >= 0 else -1
    ax, ay = abs(dx), abs(dy)
    if ax == 0 and ay == 0:
        return [(x0, y0)]
    steep = ay > ax
    major, minor = (ay, ax) if steep else (ax, ay)
    pts = []
    m = 0
    r = major  # 2*k*minor + major - 2*major*m, kept in [0, 2*major)
    for k in range(major + 1):
        if steep:
            pts.append((x0 + sx * m, y0 + sy * k))
        else:
            pts.append((x0 + sx * k, y0 + sy * m))
        r += 2 * minor
        if r >= 2 * major:
            m += 1
            r -= 2 * major
    return pts


@dataclass(frozen=True)
class FeatureTensor:
    data: np.ndarray  # (C, H, W)
    variant: str = "original"

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def raster_width(sig: NormalizedSignature) -> int:
    max_col = max(round_half_up(float(s[:, X].max())) for s in sig.strokes if len(s))
    w = max_col + 1
    return max(WIDTH_MULTIPLE, -(-w // WIDTH_MULTIPLE) * WIDTH_MULTIPLE)


def iter_segments(sig: NormalizedSignature) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Consecutive point pairs inside each stroke, in drawing order."""
    for s in sig.strokes:
        for i in range(len(s) - 1):
            yield s[i], s[i + 1]


def segment_features(a: np.ndarray, b: np.ndarray, variant: str) -> np.ndarray:
    if variant == "original":
        return segment_psf(a, b)
    if variant == "temporal":
        return segment_psf_temporal(a, b, t=a[T])
    if variant == "stacked":
        return np.concatenate([segment_psf(a, b), segment_psf_temporal(a, b, t=a[T])])
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def n_channels(variant: str) -> int:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return 2 * N_FEATURES if variant == "stacked" else N_FEATURES


def rasterize(sig: NormalizedSignature, variant: str = "original") -> FeatureTensor:
    """Draw every segment's feature vector into a C x 128 x W tensor.

    Later segments overwrite earlier ones where they cross.
    """
    if not sig.strokes or sig.n_points == 0:
        raise EmptySignature("signature has no points")
    c = n_channels(variant)
    w = raster_width(sig)
    out = np.zeros((c, HEIGHT, w))
    for a, b in iter_segments(sig):
        v = segment_features(a, b, variant)
        x0, y0 = pixel_of(a[X], a[Y])
        x1, y1 = pixel_of(b[X], b[Y])
        cols, rows = zip(*line_pixels(x0, y0, x1, y1))
        out[:, list(rows), list(cols)] = v[:, None]
    return FeatureTensor(out, variant)


def scale_to_square(t: FeatureTensor | np.ndarray, width: int = HEIGHT):
    """Linearly resample the width axis to ``width`` columns (pixel-center aligned).

    Returns the same kind of object it was given.
    """
    data = t.data if isinstance(t, FeatureTensor) else np.asarray(t)
    w_in = data.shape[-1]
    if w_in == width:
        out = data.copy()
    else:
        src = (np.arange(width) + 0.5) * (w_in / width) - 0.5
        src = np.clip(src, 0.0, w_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, w_in - 1)
        frac = src - lo
        weights = np.zeros((w_in, width))
        cols = np.arange(width)
        np.add.at(weights, (lo, cols), 1.0 - frac)
        np.add.at(weights, (hi, cols), frac)
        out = data @ weights
    if isinstance(t, FeatureTensor):
        return FeatureTensor(out, t.variant)
    return out


# -- PSFT files ---------------------------------------------------------------

def dumps_tensor(t: FeatureTensor) -> bytes:
    c, h, w = t.data.shape
    header = PSFT_MAGIC + struct.pack("<IIIIB", PSFT_VERSION, c, h, w, VARIANT_CODES[t.variant])
    return header + np.ascontiguousarray(t.data, dtype="<f4").tobytes()


def loads_tensor(blob: bytes) -> FeatureTensor:
    if blob[:4] != PSFT_MAGIC:
        raise TensorFormatError("missing PSFT magic")
    version, c, h, w, code = struct.unpack_from("<IIIIB", blob, 4)
    if version != PSFT_VERSION:
        raise TensorFormatError(f"unsupported PSFT version {version}")
    if code >= len(VARIANTS):
        raise TensorFormatError(f"unknown variant code {code}")
    off = 4 + struct.calcsize("<IIIIB")
    expected = off + 4 * c * h * w
    if len(blob) != expected:
        raise TensorFormatError(f"PSFT payload is {len(blob)} bytes, expected {expected}")
    data = np.frombuffer(blob, dtype="<f4", offset=off).reshape(c, h, w)
    return FeatureTensor(data.astype(np.float32), VARIANTS[code])


def write_tensor(path, t: FeatureTensor) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_tensor(t))


def read_tensor(path) -> FeatureTensor:
    with open(path, "rb") as fh:
        return loads_tensor(fh.read())
