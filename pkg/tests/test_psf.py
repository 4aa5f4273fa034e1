import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_force_raster, random_signature
from sigverify.preprocess import EmptySignature, NormalizedSignature
from sigverify.psf import (
    FeatureTensor,
    NegativeTime,
    TensorFormatError,
    dumps_tensor,
    line_pixels,
    loads_tensor,
    rasterize,
    scale_to_square,
    segment_psf,
    segment_psf_temporal,
)


def _sig(*strokes):
    return NormalizedSignature(tuple(np.array(s, dtype=float) for s in strokes))


def test_segment_psf_zero_displacement():
    np.testing.assert_array_equal(segment_psf((2, 5), (2, 5)), [1, 0, 0, 0, 0, 0, 0])


def test_segment_psf_examples():
    np.testing.assert_array_equal(segment_psf((0, 0), (3, 4)), [1, 3, 4, 9, 12, 12, 16])
    np.testing.assert_array_equal(segment_psf((1, 1), (0, 1)), [1, -1, 0, 1, 0, 0, 0])


def test_temporal_at_time_zero_vanishes():
    np.testing.assert_array_equal(segment_psf_temporal((0, 0, 0), (5, -7)), np.zeros(7))


def test_temporal_unit_tau_matches_original():
    v = segment_psf_temporal((0, 0), (3, 4), t=math.e - 1)
    np.testing.assert_allclose(v, [1, 3, 4, 9, 12, 12, 16], rtol=1e-15)


def test_temporal_tau_two():
    v = segment_psf_temporal((0, 0), (1, 0), t=math.exp(2) - 1)
    np.testing.assert_allclose(v, [2, 2, 0, 4, 0, 0, 0], rtol=1e-14, atol=1e-14)


def test_negative_time():
    with pytest.raises(NegativeTime):
        segment_psf_temporal((0, 0, -1), (1, 1))


@pytest.mark.parametrize(
    "a, b, expected",
    [
        ((0, 0), (3, 0), [(0, 0), (1, 0), (2, 0), (3, 0)]),
        ((0, 0), (0, -2), [(0, 0), (0, -1), (0, -2)]),
        ((0, 0), (2, 1), [(0, 0), (1, 1), (2, 1)]),  # tie at x=1 rounds away from start
        ((2, 1), (0, 0), [(2, 1), (1, 0), (0, 0)]),
        ((0, 0), (3, 3), [(0, 0), (1, 1), (2, 2), (3, 3)]),
    ],
)
def test_line_pixels(a, b, expected):
    assert line_pixels(*a, *b) == expected


def test_rasterize_single_point():
    t = rasterize(_sig([[0, 0, 0, 1]]))
    assert t.data.shape == (7, 128, 16)
    assert not t.data.any()


def test_rasterize_horizontal_segment():
    t = rasterize(_sig([[0, 64, 0, 1], [10, 64, 5, 0]]))
    assert t.data[0].sum() == 11
    assert np.array_equal(np.flatnonzero(t.data[0, 64]), np.arange(11))
    assert np.count_nonzero(t.data[0]) == 11
    assert np.all(t.data[1, 64, :11] == 10)


def test_rasterize_top_row_clamped():
    t = rasterize(_sig([[0, 0, 0, 1], [0, 128, 5, 0]]))
    assert t.data[0, :, 0].sum() == 128


def test_rasterize_empty():
    with pytest.raises(EmptySignature):
        rasterize(NormalizedSignature(()))


def test_rasterize_overlap_last_writer_wins():
    s1 = [[0, 10, 0, 1], [20, 10, 10, 0]]
    s2 = [[10, 0, 20, 1], [10, 20, 30, 0]]
    t = rasterize(_sig(s1, s2))
    # vertical stroke drawn second: dx = 0, dy = 20 at the crossing
    assert t.data[1, 10, 10] == 0
    assert t.data[2, 10, 10] == 20


def test_stacked_is_original_then_temporal():
    rng = np.random.default_rng(4)
    sig = NormalizedSignature(tuple(random_signature(rng, 4, 20)))
    stacked = rasterize(sig, "stacked").data
    np.testing.assert_array_equal(stacked[:7], rasterize(sig, "original").data)
    np.testing.assert_array_equal(stacked[7:], rasterize(sig, "temporal").data)


def test_temporal_with_unit_tau_equals_original():
    rng = np.random.default_rng(5)
    strokes = random_signature(rng, 3, 15)
    for s in strokes:
        s[:, 2] = math.e - 1
    sig = NormalizedSignature(tuple(strokes))
    np.testing.assert_allclose(rasterize(sig, "temporal").data, rasterize(sig, "original").data, rtol=1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_rasterizer_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    strokes = random_signature(rng, 5, 20)
    for variant in ("original", "stacked"):
        fast = rasterize(NormalizedSignature(tuple(strokes)), variant).data
        np.testing.assert_array_equal(fast, brute_force_raster(strokes, variant))


def test_pixelwise_psf_identities():
    rng = np.random.default_rng(8)
    t = rasterize(NormalizedSignature(tuple(random_signature(rng, 6, 30)))).data
    drawn = t[0] != 0
    assert np.all(t[0][drawn] == 1)
    assert np.array_equal(t[3][drawn], t[1][drawn] ** 2)
    assert np.array_equal(t[6][drawn], t[2][drawn] ** 2)
    assert np.array_equal(t[4][drawn], t[1][drawn] * t[2][drawn])
    assert np.array_equal(t[4], t[5])
    assert not t[:, ~drawn].any()


@given(st.floats(0, 2000), st.floats(0, 128))
def test_width_multiple_of_16(x, y):
    t = rasterize(_sig([[0, 0, 0, 1], [x, y, 1, 0]]))
    assert t.width % 16 == 0 and t.width >= 16
    assert t.width >= round(x) + 1


def test_scale_identity_at_128():
    data = np.random.default_rng(0).normal(size=(7, 128, 128))
    out = scale_to_square(FeatureTensor(data))
    assert np.array_equal(out.data, data)


@pytest.mark.parametrize("w", [16, 48, 128, 200, 1024])
def test_scale_preserves_constants(w):
    data = np.full((2, 128, w), 3.25)
    out = scale_to_square(data)
    assert out.shape == (2, 128, 128)
    np.testing.assert_allclose(out, 3.25, rtol=1e-14)


@pytest.mark.parametrize("col", [0, 37, 100, 255])
def test_scale_single_column_mass(col):
    data = np.zeros((1, 128, 256))
    data[0, :, col] = 1.0
    out = scale_to_square(data)[0, 0]
    nz = np.flatnonzero(out)
    # hand-computed: half-pixel aligned 2:1 decimation puts weight 1/2 on output col // 2
    assert list(nz) == [col // 2]
    assert out[col // 2] * (256 / 128) == pytest.approx(1.0)


def test_psft_round_trip():
    rng = np.random.default_rng(1)
    t = FeatureTensor(rng.normal(size=(14, 128, 32)).astype(np.float32), "stacked")
    blob = dumps_tensor(t)
    assert blob[:4] == b"PSFT"
    assert len(blob) == 4 + 4 * 4 + 1 + 4 * 14 * 128 * 32
    back = loads_tensor(blob)
    assert back.variant == "stacked"
    np.testing.assert_array_equal(back.data, t.data)


def test_psft_header_layout():
    blob = dumps_tensor(FeatureTensor(np.zeros((7, 128, 16)), "temporal"))
    assert blob[4:8] == (1).to_bytes(4, "little")
    assert blob[8:12] == (7).to_bytes(4, "little")
    assert blob[12:16] == (128).to_bytes(4, "little")
    assert blob[16:20] == (16).to_bytes(4, "little")
    assert blob[20] == 1


def test_psft_rejects_garbage():
    with pytest.raises(TensorFormatError):
        loads_tensor(b"XXXX" + bytes(30))
    good = dumps_tensor(FeatureTensor(np.zeros((7, 128, 16)), "original"))
    with pytest.raises(TensorFormatError):
        loads_tensor(good[:-4])
