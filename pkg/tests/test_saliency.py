import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from fundus2ffa.data_pipeline import render_phantom
from fundus2ffa.errors import DataError, ParameterError
from fundus2ffa.saliency import (
    SaliencyConfig,
    SaliencyMap,
    compute_saliency,
    estimate_background,
    read_raw_map,
    saliency_to_visual,
    write_raw_map,
)


def blob_image(size=96, cx=48, cy=48, half=4, bg=0.2, fg=0.9):
    img = np.full((size, size), bg)
    img[cy - half: cy + half + 1, cx - half: cx + half + 1] = fg
    return img


def test_background_of_constant():
    np.testing.assert_allclose(estimate_background(np.full((64, 64), 0.2)), np.rint(0.2 * 255) / 255)


def test_background_ignores_thin_stripe():
    img = np.full((80, 80), 0.2)
    img[:, 38:43] = 0.9
    np.testing.assert_allclose(estimate_background(img), np.rint(0.2 * 255) / 255)


def test_background_checkerboard_matches_oracle():
    yy, xx = np.mgrid[0:60, 0:60]
    img = ((yy + xx) % 2).astype(float)
    bg = estimate_background(img)
    np.testing.assert_array_equal(bg, oracles.median_sort(img, 51))
    # every 51x51 window holds 1301 of one colour and 1300 of the other
    assert set(np.unique(bg)) <= {0.0, 1.0}


def test_constant_image_zero_map():
    smap = compute_saliency(np.full((64, 64), 100 / 255))
    assert np.abs(smap.data).max() < 1e-15


def test_contrast_factor_exact():
    img = blob_image()
    one = compute_saliency(img, SaliencyConfig(a=1.0)).data
    two = compute_saliency(img, SaliencyConfig(a=2.0)).data
    np.testing.assert_array_equal(two, 2.0 * one)


def test_blob_response():
    img = blob_image()
    s = compute_saliency(img).data
    assert s[45:52, 45:52].min() > 0.1
    assert np.abs(s[:20, :20]).max() < 0.02


def test_composition_matches_filter_oracles(rng):
    img = rng.integers(0, 256, (16, 16)) / 255
    cfg = SaliencyConfig(median_kernel=9)
    expected = oracles.gaussian_direct(img, 7, 1.5) - oracles.median_sort(img, 9)
    np.testing.assert_allclose(compute_saliency(img, cfg).data, expected, atol=1e-12)


@given(st.integers(-12, 12), st.integers(-12, 12))
def test_shift_equivariance(dx, dy):
    base = compute_saliency(blob_image(128, 64, 64)).data
    moved = compute_saliency(blob_image(128, 64 + dx, 64 + dy)).data
    np.testing.assert_allclose(np.roll(base, (dy, dx), axis=(0, 1))[40:88, 40:88], moved[40:88, 40:88], atol=1e-6)


@given(st.integers(-40, 40))
def test_constant_offset_invariance(shift_code):
    # 8-bit grid values: the median works on quantized codes
    img = blob_image(64, 32, 32, 3, bg=77 / 255, fg=153 / 255)
    shifted = img + shift_code / 255
    a = compute_saliency(img).data
    b = compute_saliency(shifted).data
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_phantom_blob_contrast():
    ratios = []
    for i in range(16):
        ph = render_phantom(0, i, 256)
        if ph.blob_center is None:
            continue
        s = compute_saliency(ph.angiography).data
        yy, xx = np.mgrid[0:256, 0:256]
        inside = (xx - ph.blob_center[0]) ** 2 + (yy - ph.blob_center[1]) ** 2 <= ph.blob_sigma ** 2
        ratios.append(s[inside].mean() / s[ph.blob == 0].mean())
    assert ratios and min(ratios) > 5


def test_rejects_color():
    with pytest.raises(ParameterError):
        compute_saliency(np.zeros((64, 64, 3)))


def test_config_validation():
    with pytest.raises(ParameterError):
        SaliencyConfig(median_kernel=50)
    with pytest.raises(ParameterError):
        SaliencyConfig(gaussian_sigma=0)


# ----------------------------------------------------------------- visual

def test_visual_zero_map_is_gray():
    np.testing.assert_array_equal(saliency_to_visual(SaliencyMap(np.zeros((5, 5)))), 0.5)


def test_visual_symmetric_endpoints():
    d = np.array([[-0.3, 0.0, 0.3]])
    np.testing.assert_allclose(saliency_to_visual(SaliencyMap(d)), [[0.0, 0.5, 1.0]])


@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4))
def test_visual_in_unit_range(vals):
    v = saliency_to_visual(SaliencyMap(np.array(vals).reshape(2, 2)))
    assert v.min() >= 0 and v.max() <= 1
    c = saliency_to_visual(SaliencyMap(np.array(vals).reshape(2, 2)), color=True)
    assert c.shape == (2, 2, 3) and c.min() >= 0 and c.max() <= 1


# -------------------------------------------------------------- raw maps

def test_raw_roundtrip(tmp_path, rng):
    d = rng.normal(size=(7, 11)).astype(np.float32).astype(np.float64)
    write_raw_map(tmp_path / "m.raw", SaliencyMap(d))
    buf = (tmp_path / "m.raw").read_bytes()
    assert len(buf) == 8 + 4 * 77
    assert int.from_bytes(buf[:4], "little") == 11 and int.from_bytes(buf[4:8], "little") == 7
    np.testing.assert_array_equal(read_raw_map(tmp_path / "m.raw"), d)


def test_raw_truncated(tmp_path):
    (tmp_path / "t.raw").write_bytes(b"\x02\x00\x00\x00\x02\x00\x00\x00abc")
    with pytest.raises(DataError):
        read_raw_map(tmp_path / "t.raw")
