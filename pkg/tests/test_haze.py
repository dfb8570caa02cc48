import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from priornet import haze, metrics, scenes
from priornet.errors import ShapeError


def params(A, t, beta=1.0):
    return haze.HazeParams(A=np.full(3, A), beta_scatter=beta, t=np.asarray(t, dtype=float))


def test_transmission_from_depth():
    d = np.zeros((4, 5))
    np.testing.assert_array_equal(haze.transmission_from_depth(d, 1.3), 1.0)
    np.testing.assert_array_equal(haze.transmission_from_depth(np.full((2, 2), 7.0), 0.0), 1.0)
    beta = 1.7
    d = np.array([[math.log(2) / beta, 100.0]])
    t = haze.transmission_from_depth(d, beta)
    assert t[0, 0] == pytest.approx(0.5, abs=1e-15)
    assert t[0, 1] == haze.T_FLOOR
    with pytest.raises(ValueError):
        haze.transmission_from_depth(d, -1)


def test_synthesize_examples():
    rng = np.random.default_rng(0)
    J = rng.random((3, 4, 4))
    np.testing.assert_array_equal(haze.synthesize_haze(J, params(0.8, np.ones((4, 4)))), J)
    I = haze.synthesize_haze(J, params(1.0, np.full((4, 4), haze.T_FLOOR)))
    np.testing.assert_allclose(I, 0.05 * J + 0.95, atol=1e-12)
    I = haze.synthesize_haze(np.full((3, 1, 1), 0.5), params(1.0, [[0.5]]))
    assert I.ravel().tolist() == [0.75] * 3
    with pytest.raises(ShapeError):
        haze.synthesize_haze(J, params(1.0, np.ones((3, 4))))


def test_ideal_K_scalar_case():
    I = np.full((3, 1, 1), 0.75)
    km = haze.ideal_K(I, params(1.0, [[0.5]]), b=1.0)
    np.testing.assert_allclose(km.k, 2.0, atol=1e-15)
    np.testing.assert_allclose(haze.restore(I, km), 0.5, atol=1e-15)


def test_ideal_K_no_haze_reduces_to_identity():
    rng = np.random.default_rng(1)
    I = rng.uniform(0, 0.99, (3, 5, 5))
    A = 0.8
    km = haze.ideal_K(I, params(A, np.ones((5, 5))), b=A)
    np.testing.assert_allclose(km.k, (I - A) / (I - 1), atol=1e-12)
    np.testing.assert_allclose(haze.restore(I, km), I, atol=1e-12)


def test_ideal_K_guards_saturated_pixels():
    I = np.ones((3, 2, 2))
    km = haze.ideal_K(I, params(0.9, np.full((2, 2), 0.5)))
    assert np.all(np.isfinite(km.k))


def test_restore_examples():
    I = np.random.default_rng(2).random((3, 3, 3))
    np.testing.assert_array_equal(haze.restore(I, np.ones_like(I), 1.0), I)
    np.testing.assert_array_equal(haze.restore(I, np.zeros_like(I), 0.3), 0.3)
    assert haze.restore(np.full((3, 1, 1), 0.75), np.full((3, 1, 1), 2.0), 1.0).ravel().tolist() == [0.5] * 3
    with pytest.raises(ShapeError):
        haze.restore(I, np.ones((3, 2, 3)), 1.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), b=st.sampled_from([0.5, 1.0]))
def test_round_trip_property(seed, b):
    rng = np.random.default_rng(seed)
    J = rng.random((3, 8, 8))
    p = haze.HazeParams(A=rng.uniform(0.5, 1.0, 3), beta_scatter=1.0, t=rng.uniform(haze.T_FLOOR, 1.0, (8, 8)))
    I = haze.synthesize_haze(J, p)
    restored = haze.restore(I, haze.ideal_K(I, p, b))
    # direct inversion oracle J = (I - A) / t + A
    direct = (I - p.A[:, None, None]) / p.t[None] + p.A[:, None, None]
    ok = np.abs(I - 1) >= 1e-3
    np.testing.assert_allclose(direct[ok], J[ok], atol=1e-9)
    np.testing.assert_allclose(restored[ok], J[ok], atol=1e-5)


@settings(max_examples=40, deadline=None)
@given(j=st.floats(0, 0.6), a=st.floats(0.65, 1.0), t1=st.floats(0.05, 1.0), t2=st.floats(0.05, 1.0))
def test_lower_transmission_moves_toward_airlight(j, a, t1, t2):
    lo, hi = sorted((t1, t2))
    J = np.full((3, 1, 1), j)
    I_lo = haze.synthesize_haze(J, params(a, [[lo]]))
    I_hi = haze.synthesize_haze(J, params(a, [[hi]]))
    assert np.all(np.abs(a - I_lo) <= np.abs(a - I_hi) + 1e-15)


def dark_channel_oracle(I, patch):
    _, h, w = I.shape
    r = patch // 2
    out = np.empty((h, w))
    for i in range(h):
        for j in range(w):
            best = np.inf
            for c in range(3):
                for u in range(-r, r + 1):
                    for v in range(-r, r + 1):
                        ii = min(max(i + u, 0), h - 1)
                        jj = min(max(j + v, 0), w - 1)
                        best = min(best, I[c, ii, jj])
            out[i, j] = best
    return out


def test_dark_channel_examples():
    np.testing.assert_array_equal(haze.dark_channel(np.ones((3, 6, 6)), 3), 1.0)
    I = np.random.default_rng(3).random((3, 6, 6))
    I[np.arange(36) % 3, np.arange(36) // 6, np.arange(36) % 6] = 0
    np.testing.assert_array_equal(haze.dark_channel(I, 3), 0.0)
    with pytest.raises(ValueError):
        haze.dark_channel(I, 4)


@pytest.mark.parametrize("patch", [1, 3, 5])
def test_dark_channel_matches_exhaustive_min(patch):
    I = np.random.default_rng(patch).random((3, 5, 5))
    np.testing.assert_array_equal(haze.dark_channel(I, patch), dark_channel_oracle(I, patch))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), c=st.floats(0.01, 1.0))
def test_dark_channel_scales_with_brightness(seed, c):
    I = np.random.default_rng(seed).random((3, 7, 7))
    np.testing.assert_allclose(haze.dark_channel(c * I, 3), c * haze.dark_channel(I, 3), rtol=1e-12)


def test_box_mean_matches_direct_window_mean():
    a = np.random.default_rng(4).random((9, 7))
    r = 2
    out = haze.box_mean(a, r)
    for i in range(9):
        for j in range(7):
            win = a[max(i - r, 0):i + r + 1, max(j - r, 0):j + r + 1]
            assert out[i, j] == pytest.approx(win.mean(), abs=1e-12)


def test_guided_filter_constant_source_is_fixed_point():
    guide = np.random.default_rng(5).random((20, 20))
    np.testing.assert_allclose(haze.guided_filter(guide, np.full((20, 20), 0.4), 3, 1e-3), 0.4, atol=1e-12)


def test_dcp_pure_airlight():
    I = np.empty((3, 20, 20))
    I[:] = np.array([0.8, 0.85, 0.9])[:, None, None]
    np.testing.assert_allclose(haze.dcp_dehaze(I), I, atol=1e-12)


def test_dcp_shadowed_scene_is_nearly_unchanged():
    rng = np.random.default_rng(6)
    I = rng.uniform(0.3, 0.9, (3, 32, 32))
    I[2] = 0.0  # dark channel is zero everywhere
    out = haze.dcp_dehaze(I, refine=None)
    np.testing.assert_allclose(out, I, atol=1e-12)


@pytest.mark.parametrize("refine", ["guided", "box", None])
def test_dcp_improves_uniform_haze(refine):
    clean, _ = scenes.make_scene(np.random.default_rng(7))
    hazy, _ = scenes.uniform_haze(clean, t=0.6, A=0.9)
    out = haze.dcp_dehaze(hazy, refine=refine)
    assert metrics.psnr(out, clean) > metrics.psnr(hazy, clean)
    assert out.min() >= 0 and out.max() <= 1


def test_dcp_black_image_uses_airlight_floor():
    out = haze.dcp_dehaze(np.zeros((3, 16, 16)))
    assert np.all(np.isfinite(out)) and out.max() == 0


def test_public_outputs_stay_in_unit_range():
    rng = np.random.default_rng(8)
    J = rng.random((3, 16, 16))
    p = params(0.95, rng.uniform(0.05, 1, (16, 16)))
    I = haze.synthesize_haze(J, p)
    for out in (I, haze.restore(I, rng.normal(0, 5, I.shape), 1.0), haze.dcp_dehaze(I)):
        assert out.min() >= 0 and out.max() <= 1
