import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from trafficdiff.enhance import (
    EnhanceConfig,
    PixelImage,
    enhance_batch,
    enhance_pipeline,
    gamma_correct,
    normalize_unit,
    quantize_u8,
    resize_area,
    save_png,
)
from trafficdiff.gasf import GasfImage, gasf_encode

cv2 = pytest.importorskip("cv2")


def unit(px):
    return PixelImage(np.asarray(px, dtype=np.float64), "unit")


@pytest.mark.parametrize("v,p", [(-1.0, 0), (1.0, 255), (0.0, 128), (-0.5, 64)])
def test_quantize_examples(v, p):
    assert quantize_u8(np.array([[v]])).pixels[0, 0] == p


@given(arrays(np.float64, (4, 4), elements=st.floats(-1, 1)))
def test_quantize_matches_decimal_half_up(m):
    from decimal import ROUND_HALF_UP, Decimal

    got = quantize_u8(m).pixels
    for v, p in zip(m.ravel(), got.ravel()):
        want = int(Decimal((v + 1.0) / 2.0 * 255.0).quantize(Decimal(1), rounding=ROUND_HALF_UP))
        assert p == want


@pytest.mark.parametrize("p,v", [(255, 1.0), (0, 0.0), (51, 0.2)])
def test_normalize_unit(p, v):
    assert normalize_unit(PixelImage(np.array([[p]], np.uint8), "u8")).pixels[0, 0] == pytest.approx(v, abs=1e-15)


def test_normalize_requires_u8():
    with pytest.raises(ValueError):
        normalize_unit(unit([[0.5]]))


def test_gamma_examples():
    out = gamma_correct(unit([[0.0, 1.0, 0.0625]]), 0.25).pixels[0]
    np.testing.assert_allclose(out, [0.0, 1.0, 0.5], atol=1e-15)
    x = np.random.default_rng(0).random((3, 3))
    assert np.array_equal(gamma_correct(unit(x), 1.0).pixels, x)
    assert gamma_correct(unit([[0.5]]), 1.0, A=3.0).pixels[0, 0] == 1.0
    for g in (0.0, -1.0):
        with pytest.raises(ValueError):
            gamma_correct(unit([[0.5]]), g)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.05, 0.99))
def test_gamma_monotone(a, b, g):
    if a == b:
        return
    lo, hi = sorted((a, b))
    out = gamma_correct(unit([[lo, hi]]), g).pixels[0]
    assert out[0] < out[1] or (out[0] == out[1] and np.isclose(lo, hi))


def test_gamma_raises_mean_of_gasf_image():
    g = gasf_encode(np.random.default_rng(2).random(32))
    img = normalize_unit(quantize_u8(g))
    assert img.pixels.var() > 0
    assert gamma_correct(img, 0.25).pixels.mean() > img.pixels.mean()


def test_resize_examples():
    np.testing.assert_array_equal(resize_area(np.array([[0.0, 1.0], [1.0, 0.0]]), 1, 1), [[0.5]])
    np.testing.assert_array_equal(resize_area(np.full((7, 5), 0.3), 3, 2), np.full((3, 2), 0.3))
    a, b, c, d = 0.1, 0.2, 0.7, 0.9
    q = np.block([[np.full((2, 2), a), np.full((2, 2), b)], [np.full((2, 2), c), np.full((2, 2), d)]])
    np.testing.assert_allclose(resize_area(q, 2, 2), [[a, b], [c, d]], atol=1e-15)
    x = np.random.default_rng(0).random((5, 5))
    assert np.array_equal(resize_area(x, 5, 5), x)
    with pytest.raises(ValueError):
        resize_area(x, 0, 2)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
def test_resize_integer_factor_is_block_mean(oh, ow, kh, kw, seed):
    x = np.random.default_rng(seed).random((oh * kh, ow * kw))
    want = x.reshape(oh, kh, ow, kw).mean(axis=(1, 3))
    got = resize_area(x, oh, ow)
    np.testing.assert_allclose(got, want, atol=1e-13)
    assert got.mean() == pytest.approx(x.mean(), abs=1e-13)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 70), st.integers(2, 70), st.integers(1, 40), st.integers(1, 40),
       st.integers(0, 2**31))
def test_resize_matches_cv2_inter_area_on_downscale(h, w, oh, ow, seed):
    if oh > h or ow > w:
        return
    x = np.random.default_rng(seed).random((h, w))
    want = cv2.resize(x, (ow, oh), interpolation=cv2.INTER_AREA)
    np.testing.assert_allclose(resize_area(x, oh, ow), want, atol=1e-6)


def test_resize_u8_pixelimage_rounds():
    img = PixelImage(np.array([[0, 1], [0, 0]], np.uint8), "u8")
    out = resize_area(img, 1, 1)
    assert out.stage == "u8" and out.pixels.dtype == np.uint8 and out.pixels[0, 0] == 0


def test_pipeline_endpoints_and_purity():
    cfg = EnhanceConfig(resolution=8)
    lo = enhance_pipeline(GasfImage(np.full((32, 32), -1.0)), cfg)
    hi = enhance_pipeline(GasfImage(np.full((32, 32), 1.0)), cfg)
    assert lo.pixels.shape == (8, 8) and np.all(lo.pixels == 0.0)
    assert np.all(hi.pixels == 1.0)
    g = gasf_encode(np.random.default_rng(0).random(32))
    assert np.array_equal(enhance_pipeline(g, cfg).pixels, enhance_pipeline(g, cfg).pixels)


def test_pipeline_stage_order_oracle():
    # independent composition: cv2 area resize of gamma(round((v+1)/2*255)/255)
    g = gasf_encode(np.random.default_rng(5).random(48))
    ref = np.floor((g.matrix + 1) / 2 * 255 + 0.5) / 255
    ref = cv2.resize(ref ** 0.25, (16, 16), interpolation=cv2.INTER_AREA)
    got = enhance_pipeline(g, EnhanceConfig(resolution=16)).pixels
    np.testing.assert_allclose(got, ref, atol=1e-6)
    assert got.min() >= 0 and got.max() <= 1


def test_batch_matches_pipeline():
    rng = np.random.default_rng(3)
    mats = np.stack([gasf_encode(rng.random(40)).matrix for _ in range(4)])
    cfg = EnhanceConfig(resolution=16)
    b = enhance_batch(mats, cfg)
    assert b.dtype == np.float32 and b.shape == (4, 16, 16)
    for i in range(4):
        single = enhance_pipeline(GasfImage(mats[i].astype(np.float32).astype(np.float64)), cfg)
        np.testing.assert_allclose(b[i], single.pixels, atol=1e-6)


def test_batch_independent_of_storage_precision():
    mats = np.stack([gasf_encode(np.random.default_rng(i).random(40)).matrix for i in range(3)])
    cfg = EnhanceConfig(resolution=16)
    assert np.array_equal(enhance_batch(mats, cfg), enhance_batch(mats.astype(np.float32), cfg))


def test_png(tmp_path):
    from PIL import Image

    x = np.linspace(0, 1, 16).reshape(4, 4)
    save_png(tmp_path / "a.png", x)
    back = np.asarray(Image.open(tmp_path / "a.png"))
    assert back.dtype == np.uint8
    np.testing.assert_array_equal(back, np.floor(x * 255 + 0.5).astype(np.uint8))
