import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from colorguide.colormap import (
    CHROMA_RANGE,
    LUMA_RANGE,
    ColorMap,
    ColorMapOperator,
    QuantizedColorMap,
    from_wire,
    rate_bits,
    to_wire,
)

RGB2YUV = np.array(
    [[0.299, 0.587, 0.114], [-0.168736, -0.331264, 0.5], [0.5, -0.418688, -0.081312]]
)


def dct_matrix(n):
    k = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    mat = np.cos(np.pi * (2 * j + 1) * k / (2 * n)) * math.sqrt(2 / n)
    mat[0] /= math.sqrt(2)
    return mat


def lowpass(rng, shape, keep):
    """Band-limited random image built from the lowest ``keep`` frequencies."""
    h, w, c = shape
    ch, cw = dct_matrix(h), dct_matrix(w)
    coeffs = np.zeros(shape)
    coeffs[:keep, :keep] = rng.standard_normal((keep, keep, c))
    return np.einsum("ki,klc,lj->ijc", ch, coeffs, cw)


def test_dense_dct_oracle(rng):
    x = rng.random((64, 64, 3))
    op = ColorMapOperator(64, 64, 8, 3)
    ch, cw = dct_matrix(64)[:8], dct_matrix(64)[:8]
    got = op.apply(x).coeffs
    for c in range(3):
        assert np.allclose(got[..., c], ch @ x[..., c] @ cw.T, atol=1e-10)


def test_constant_image_dc(rng):
    op = ColorMapOperator(12, 8, 4, 3)
    v = 0.37
    coeffs = op.apply(np.full((12, 8, 3), v)).coeffs
    assert np.allclose(coeffs[0, 0], v * math.sqrt(96))
    rest = coeffs.copy()
    rest[0, 0] = 0
    assert np.abs(rest).max() < 1e-12


def test_bandlimited_fixed_point(rng):
    op = ColorMapOperator(16, 16, 5, 3)
    x = lowpass(rng, (16, 16, 3), 5)
    assert np.allclose(op.lift(op.apply(x)), x, atol=1e-8)


def test_lift_cases(rng):
    op = ColorMapOperator(10, 10, 3, 1)
    c = ColorMap(rng.standard_normal((3, 3, 1)), (10, 10))
    assert np.allclose(op.apply(op.lift(c)).coeffs, c.coeffs, atol=1e-8)
    assert np.all(op.lift(ColorMap(np.zeros((3, 3, 1)), (10, 10))) == 0)
    with pytest.raises(ValueError):
        op.lift(ColorMap(np.zeros((4, 4, 1)), (10, 10)))
    with pytest.raises(ValueError):
        op.apply(np.zeros((10, 9, 1)))


def test_parseval(rng):
    op = ColorMapOperator(16, 12, 4, 3)
    x = rng.standard_normal((16, 12, 3))
    full = np.stack([dct_matrix(16) @ x[..., c] @ dct_matrix(12).T for c in range(3)], -1)
    kept = full[:4, :4]
    discarded = np.sum(full**2) - np.sum(kept**2)
    assert np.sum((x - op.lift(op.apply(x))) ** 2) == pytest.approx(discarded, rel=1e-10)


def test_dense_matrix_projection_and_rank():
    op = ColorMapOperator(6, 5, 3, 3)
    a = op.dense_matrix()
    lift = op.lift_flat(np.eye(op.map_dim)).T
    assert np.allclose(a @ lift @ a, a, atol=1e-12)
    assert np.linalg.matrix_rank(a) == 3 * 3 * 3
    assert np.allclose(a @ a.T, np.eye(op.map_dim), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(
    h=st.integers(2, 12),
    w=st.integers(2, 12),
    data=st.data(),
)
def test_operator_properties(h, w, data):
    m = data.draw(st.integers(1, min(h, w)))
    c = data.draw(st.sampled_from([1, 3]))
    seed = data.draw(st.integers(0, 2**31))
    r = np.random.default_rng(seed)
    op = ColorMapOperator(h, w, m, c)
    x, y = r.standard_normal((2, h, w, c))
    a, b = r.standard_normal(2)
    assert np.allclose(op.apply_array(a * x + b * y), a * op.apply_array(x) + b * op.apply_array(y), atol=1e-10)
    px = op.lift_array(op.apply_array(x))
    assert np.allclose(op.apply_array(px), op.apply_array(x), atol=1e-8)
    assert np.allclose(op.lift_array(op.apply_array(px)), px, atol=1e-8)


def test_operator_bounds():
    with pytest.raises(ValueError):
        ColorMapOperator(8, 6, 7, 3)
    with pytest.raises(ValueError):
        ColorMapOperator(8, 8, 0, 3)


def test_energy_increases_with_m(rng):
    h = 16
    # low-pass filtered noise: 1/f^2 spectrum
    f = np.hypot(*np.meshgrid(np.arange(h), np.arange(h), indexing="ij"))
    coeffs = rng.standard_normal((h, h, 3)) / (1 + f[..., None]) ** 2
    x = np.einsum("ki,klc,lj->ijc", dct_matrix(h), coeffs, dct_matrix(h))
    fractions = [
        np.sum(ColorMapOperator(h, h, m, 3).apply_array(x) ** 2) / np.sum(x**2)
        for m in range(1, h + 1)
    ]
    assert np.all(np.diff(fractions) > 0)
    assert fractions[-1] == pytest.approx(1.0)


def test_thumbnail_roundtrip(rng):
    c = ColorMap(rng.standard_normal((4, 4, 3)), (16, 12))
    back = ColorMap.from_thumbnail(c.thumbnail(), (16, 12))
    assert np.allclose(back.coeffs, c.coeffs)
    const = ColorMapOperator(16, 12, 4, 3).apply(np.full((16, 12, 3), 0.3))
    assert np.allclose(const.thumbnail(), 0.3)


@pytest.mark.parametrize("bits", [1, 5, 8])
def test_mid_gray_wire(bits):
    op = ColorMapOperator(8, 8, 4, 3)
    q = to_wire(op.apply(np.full((8, 8, 3), 0.5)), bits)
    assert len(np.unique(q.luma)) == 1
    step = (CHROMA_RANGE[1] - CHROMA_RANGE[0]) / 2**bits
    for plane in (q.chroma_u, q.chroma_v):
        mid = CHROMA_RANGE[0] + (plane + 0.5) * step
        assert np.all(np.abs(mid) <= step / 2 + 1e-12)


def test_wire_roundtrip_bound(rng):
    m = 6
    # smooth ramp thumbnail inside the gamut
    ii, jj = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    thumb = np.stack([0.3 + 0.05 * ii, 0.6 - 0.04 * jj, 0.4 + 0.02 * (ii + jj)], -1)
    c = ColorMap.from_thumbnail(thumb, (16, 16))
    back = from_wire(to_wire(c, 8)).thumbnail()
    yuv, yuv_back = thumb @ RGB2YUV.T, back @ RGB2YUV.T
    half_step = 1 / 2**9
    assert np.all(np.abs(yuv_back[..., 0] - yuv[..., 0]) <= half_step + 1e-12)
    for k in (1, 2):
        pooled = yuv[..., k].reshape(3, 2, 3, 2).mean(axis=(1, 3))
        sub_err = np.abs(np.repeat(np.repeat(pooled, 2, 0), 2, 1) - yuv[..., k])
        assert np.all(np.abs(yuv_back[..., k] - yuv[..., k]) <= half_step + sub_err + 1e-12)


def test_wire_fixed_point_and_zero_codes(rng):
    op = ColorMapOperator(16, 16, 5, 3)
    c = op.apply(rng.random((16, 16, 3)))
    once = from_wire(to_wire(c, 4))
    twice = from_wire(to_wire(once, 4))
    assert np.allclose(once.coeffs, twice.coeffs, atol=1e-12)
    k = 3
    zero = QuantizedColorMap(5, 4, np.zeros((5, 5)), np.zeros((k, k)), np.zeros((k, k)), (16, 16))
    thumb = from_wire(zero).thumbnail() @ RGB2YUV.T
    assert np.allclose(thumb[..., 0], LUMA_RANGE[0] + 0.5 / 16)
    assert np.allclose(thumb[..., 1:], CHROMA_RANGE[0] + 0.5 / 16)


def test_wire_rejects_bad_input(rng):
    c1 = ColorMap(rng.standard_normal((2, 2, 1)), (4, 4))
    with pytest.raises(ValueError):
        to_wire(c1, 5)
    c3 = ColorMap(rng.standard_normal((2, 2, 3)), (4, 4))
    for bits in (0, 9):
        with pytest.raises(ValueError):
            to_wire(c3, bits)
    with pytest.raises(ValueError):
        QuantizedColorMap(2, 2, np.full((2, 2), 4), np.zeros((1, 1)), np.zeros((1, 1)))


@pytest.mark.parametrize("m,bits,expected", [(16, 5, 1920), (2, 1, 6), (25, 5, 4815), (1, 3, 9)])
def test_rate_bits(m, bits, expected):
    k = (m + 1) // 2
    q = QuantizedColorMap(m, bits, np.zeros((m, m)), np.zeros((k, k)), np.zeros((k, k)))
    assert rate_bits(q) == expected == q.bit_cost()
    # bits physically written: two size bytes plus the planes, rounded up to bytes
    assert len(q.to_bytes()) == math.ceil((16 + expected) / 8)


@settings(max_examples=50, deadline=None)
@given(m=st.integers(1, 40).map(lambda k: 2 * k), bits=st.integers(1, 8))
def test_rate_even_m(m, bits):
    k = m // 2
    q = QuantizedColorMap(m, bits, np.zeros((m, m)), np.zeros((k, k)), np.zeros((k, k)))
    assert rate_bits(q) == 1.5 * bits * m * m


@settings(max_examples=60, deadline=None)
@given(m=st.integers(1, 20), bits=st.integers(1, 8), seed=st.integers(0, 2**31))
def test_wire_bytes_roundtrip(m, bits, seed):
    r = np.random.default_rng(seed)
    k = (m + 1) // 2
    top = 1 << bits
    q = QuantizedColorMap(m, bits, r.integers(0, top, (m, m)), r.integers(0, top, (k, k)), r.integers(0, top, (k, k)))
    back = QuantizedColorMap.from_bytes(q.to_bytes())
    for name in ("luma", "chroma_u", "chroma_v"):
        assert np.array_equal(getattr(q, name), getattr(back, name))
    assert (back.m, back.bits) == (m, bits)
