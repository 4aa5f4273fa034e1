"""Synthetic signatures for experiments without the SVC2004 corpus.

A "forgery" here is a copy of a genuine signature whose pen trajectory is
identical but whose elapsed times are stretched by ``dilation``; only timing
separates the two classes.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .ink import Label, Pen, SignatureInstance, Stroke, StrokePoint, format_svc

CLOCK_START = 31_275_775  # raw tablet clocks do not start at zero


def random_trajectory(rng: np.random.Generator, n_strokes: int, points_per_stroke: int, aspect: float):
    """Smooth pen paths in tablet units, one (n, 2) int array per stroke."""
    strokes = []
    x_offset = 0.0
    height = 1000.0
    for _ in range(n_strokes):
        n = points_per_stroke
        u = np.linspace(0.0, 1.0, n)
        width = height * aspect / n_strokes
        freqs = rng.uniform(0.5, 3.0, size=3)
        phases = rng.uniform(0, 2 * np.pi, size=3)
        amps = rng.uniform(0.2, 1.0, size=3)
        y = sum(a * np.sin(2 * np.pi * f * u + p) for a, f, p in zip(amps, freqs, phases))
        y = (y - y.min()) / max(np.ptp(y), 1e-9) * height * rng.uniform(0.6, 1.0)
        x = x_offset + width * (u + 0.15 * np.sin(2 * np.pi * rng.uniform(1, 4) * u))
        strokes.append(np.stack([np.round(x), np.round(y)], axis=1).astype(int))
        x_offset += width * 1.1
    return strokes


def timestamps(rng: np.random.Generator, n_points: int, duration_ms: float) -> np.ndarray:
    """Non-decreasing elapsed times from 0 to about ``duration_ms`` with jittered steps."""
    steps = rng.uniform(0.5, 1.5, size=n_points - 1)
    t = np.concatenate([[0.0], np.cumsum(steps)])
    return np.round(t / t[-1] * duration_ms).astype(int)


def make_instance(strokes_xy, elapsed, label, writer_id=1, sample_index=1, t0=CLOCK_START):
    strokes = []
    k = 0
    for xy in strokes_xy:
        pts = []
        for j, (x, y) in enumerate(xy):
            pen = Pen.UP if j == len(xy) - 1 else Pen.DOWN
            pts.append(StrokePoint(int(x), int(y), int(t0 + elapsed[k]), pen))
            k += 1
        strokes.append(Stroke(tuple(pts)))
    return SignatureInstance(tuple(strokes), writer_id, sample_index, Label(label))


def perturb(rng: np.random.Generator, strokes_xy, amount: float = 0.015, height: float = 1000.0):
    """Same signature, new hand: smooth low-frequency wobble plus a small global rescale."""
    scale = rng.uniform(0.97, 1.03)
    out = []
    for xy in strokes_xy:
        u = np.linspace(0.0, 1.0, len(xy))
        wobble = np.stack(
            [amount * height * np.sin(2 * np.pi * rng.uniform(0.3, 1.5) * u + rng.uniform(0, 2 * np.pi))
             for _ in range(2)],
            axis=1,
        )
        out.append(np.round(xy * scale + wobble).astype(int))
    lo = np.min([xy.min(axis=0) for xy in out], axis=0)
    return [xy - lo for xy in out]


def time_dilated_pairs(
    n_pairs: int,
    seed: int = 0,
    dilation: float = 2.0,
    duration_ms=(900.0, 1100.0),
    n_strokes=(1, 3),
    points_per_stroke=(20, 40),
    aspect=(0.8, 1.6),
    pairs_per_writer: int | None = None,
    jitter: float = 0.015,
) -> list[SignatureInstance]:
    """``n_pairs`` genuine signatures, each followed by its time-dilated forgery.

    With ``pairs_per_writer=None`` every pair has its own random trajectory and
    writer id (1..n_pairs).  Otherwise pairs are grouped into writers of
    ``pairs_per_writer`` (at most 20): each writer has one template trajectory
    and each genuine is a slightly perturbed copy of it, like repeated
    signatures of one person; ``jitter`` is the wobble amplitude as a fraction
    of the signature height.  Genuine samples get indices 1..20 and their
    forgeries 21..40, matching the SVC2004 labelling convention.
    """
    if pairs_per_writer is not None and not 1 <= pairs_per_writer <= 20:
        raise ValueError("pairs_per_writer must lie in 1..20")
    rng = np.random.default_rng(seed)
    out = []
    template = None
    for k in range(n_pairs):
        if pairs_per_writer is None:
            writer, sample = k + 1, 1
        else:
            writer, sample = k // pairs_per_writer + 1, k % pairs_per_writer + 1
        if template is None or sample == 1:
            ns = int(rng.integers(n_strokes[0], n_strokes[1] + 1))
            pps = int(rng.integers(points_per_stroke[0], points_per_stroke[1] + 1))
            template = random_trajectory(rng, ns, pps, rng.uniform(*aspect))
        xy = template if pairs_per_writer is None else perturb(rng, template, jitter)
        n_points = sum(len(s) for s in xy)
        elapsed = timestamps(rng, n_points, rng.uniform(*duration_ms))
        out.append(make_instance(xy, elapsed, Label.GENUINE, writer, sample))
        slow = np.round(elapsed * dilation).astype(int)
        out.append(make_instance(xy, slow, Label.FORGERY, writer, sample + 20))
    return out


def write_svc_corpus(instances, root) -> list[Path]:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    paths = []
    for inst in instances:
        p = root / f"U{inst.writer_id}S{inst.sample_index}.TXT"
        p.write_text(format_svc(inst.points))
        paths.append(p)
    return paths
