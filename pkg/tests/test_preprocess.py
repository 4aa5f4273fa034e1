import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sigverify.ink import Pen, StrokePoint, instance_from_points
from sigverify.preprocess import (
    EmptySignature,
    InvalidCount,
    NormalizedSignature,
    allocate_points,
    arc_lengths,
    normalize,
    resample_uniform,
)


def _inst(coords, times=None, pens=None):
    times = times or list(range(len(coords)))
    pens = pens or [1] * (len(coords) - 1) + [0]
    return instance_from_points(
        [StrokePoint(x, y, t, Pen(p)) for (x, y), t, p in zip(coords, times, pens)]
    )


def test_normalize_scales_by_vertical_extent():
    sig = normalize(_inst([(0, 0), (10, 50)]))
    np.testing.assert_allclose(sig.points[:, :2], [[0, 0], [25.6, 128]])


def test_normalize_single_point():
    sig = normalize(_inst([(7, 9)], times=[500], pens=[1]))
    np.testing.assert_array_equal(sig.points[:, :3], [[0, 0, 0]])


def test_normalize_time_origin():
    sig = normalize(_inst([(0, 0), (1, 1)], times=[31275775, 31275795]))
    np.testing.assert_array_equal(sig.points[:, 2], [0, 20])


def test_normalize_flat_uses_width():
    sig = normalize(_inst([(3, 5), (13, 5)]))
    np.testing.assert_allclose(sig.points[:, :2], [[0, 0], [128, 0]])


def test_normalize_empty():
    with pytest.raises(EmptySignature):
        normalize(NormalizedSignature(()))


coords = st.lists(
    st.tuples(st.integers(0, 3000), st.integers(0, 3000)), min_size=1, max_size=30
)


@given(coords, st.floats(0.01, 100))
@settings(max_examples=60)
def test_normalize_idempotent_and_scale_invariant(cs, k):
    sig = normalize(_inst(cs))
    again = normalize(sig)
    np.testing.assert_allclose(again.points, sig.points, atol=1e-9)
    scaled = [np.column_stack([s[:, 0] * k, s[:, 1] * k, s[:, 2:]]) for s in normalize(_inst(cs)).strokes]
    np.testing.assert_allclose(normalize(scaled).points, sig.points, atol=1e-9)


def test_resample_straight_line():
    sig = normalize([np.array([[0, 0, 0, 1], [0, 128, 10, 0]], dtype=float)])
    out = resample_uniform(sig, 5)
    np.testing.assert_allclose(out[:, 1], [0, 32, 64, 96, 128])
    np.testing.assert_array_equal(out[:, 3], [1, 1, 1, 1, 0])


def test_resample_fixed_point():
    pts = np.array([[0, 16 * i, 4 * i, 1] for i in range(9)], dtype=float)
    pts[-1, 3] = 0
    sig = NormalizedSignature((pts,))
    out = resample_uniform(sig, 9)
    np.testing.assert_allclose(out[:, :3], pts[:, :3], atol=1e-9)


def test_allocation_example():
    assert allocate_points([30, 10], 8) == [6, 2]


def test_allocation_ties_go_to_earlier():
    assert allocate_points([1, 1], 3) == [2, 1]


def test_allocation_gives_each_stroke_a_point():
    assert allocate_points([100, 0, 0], 4) == [2, 1, 1]


def test_resample_two_strokes():
    s1 = np.array([[0, 0, 0, 1], [30, 0, 30, 0]], dtype=float)
    s2 = np.array([[40, 0, 40, 1], [50, 0, 50, 0]], dtype=float)
    out = resample_uniform(NormalizedSignature((s1, s2)), 8)
    assert len(out) == 8
    assert list(out[:, 3]) == [1, 1, 1, 1, 1, 0, 1, 0]


def test_resample_invalid_count():
    sig = normalize(_inst([(0, 0), (1, 1)]))
    with pytest.raises(InvalidCount):
        resample_uniform(sig, 1)


@given(st.lists(st.floats(0, 1000), min_size=1, max_size=12), st.integers(2, 300))
def test_allocation_sums_to_n(lengths, n):
    alloc = allocate_points(lengths, n)
    assert sum(alloc) == n
    if len(lengths) <= n:
        assert min(alloc) >= 1


@given(
    st.lists(st.integers(0, 500), min_size=2, max_size=25, unique=True),
    st.lists(st.integers(0, 500), min_size=25, max_size=25),
    st.integers(2, 64),
)
@settings(max_examples=60)
def test_resample_equal_gaps(xs, ys, n):
    # x strictly increasing keeps the polyline free of self-intersections
    cs = list(zip(sorted(xs), ys))
    sig = normalize(_inst(cs))
    out = resample_uniform(sig, n)
    assert out.shape == (n, 4)
    if arc_lengths(sig.strokes[0])[-1] > 1e-6:
        # the gaps are equal along the path, so cumulative path position is linear
        np.testing.assert_allclose(out[0, :2], sig.strokes[0][0, :2], atol=1e-9)
        np.testing.assert_allclose(out[-1, :2], sig.strokes[0][-1, :2], atol=1e-9)
        s = arc_lengths(sig.strokes[0])
        pos = [_path_position(sig.strokes[0], s, p) for p in out[:, :2]]
        gaps = np.diff(pos)
        assert np.ptp(gaps) <= 1e-6 * max(gaps.max(), 1e-12)


def _path_position(stroke, s, p):
    # arc-length coordinate of point p lying on the polyline, scanning in order
    best = None
    for i in range(len(stroke) - 1):
        a, b = stroke[i, :2], stroke[i + 1, :2]
        seg = b - a
        L = np.hypot(*seg)
        if L == 0:
            continue
        u = np.clip(np.dot(p - a, seg) / L**2, 0, 1)
        d = np.hypot(*(a + u * seg - p))
        if d < 1e-7:
            cand = s[i] + u * L
            if best is None:
                best = cand
    return best
