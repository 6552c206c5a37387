import numpy as np
import pytest

from tilescope.errors import ParameterError
from tilescope.imaging import (
    Channel,
    Image,
    TileAddress,
    Translation,
    adjust_contrast,
    quantize,
    translate_array,
    warp_translate,
)

from conftest import make_image


def quantize_oracle(values, bit_depth):
    """Scalar reference: clamp, then round half away from zero."""
    import math

    top = 2**bit_depth - 1
    out = []
    for v in np.asarray(values, dtype=np.float64).ravel():
        v = min(max(v, 0.0), float(top))
        out.append(math.floor(v + 0.5))
    return np.array(out).reshape(np.shape(values))


def translate_oracle(arr, dx, dy):
    """Direct per-pixel bilinear pull: out[y, x] = in[y - dy, x - dx]."""
    h, w = arr.shape
    out = np.zeros((h, w), dtype=np.float64)
    for y in range(h):
        for x in range(w):
            sy, sx = y - dy, x - dx
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            fy, fx = sy - y0, sx - x0
            acc = 0.0
            for oy, wy in ((0, 1 - fy), (1, fy)):
                for ox, wx in ((0, 1 - fx), (1, fx)):
                    yy, xx = y0 + oy, x0 + ox
                    if 0 <= yy < h and 0 <= xx < w and wy * wx:
                        acc += wy * wx * arr[yy, xx]
            out[y, x] = acc
    return out


class TestQuantize:
    def test_matches_scalar_oracle_on_random_values(self, rng):
        values = rng.uniform(-20, 300, size=(64, 64))
        for depth in (8, 16):
            np.testing.assert_array_equal(
                quantize(values, depth), quantize_oracle(values, depth)
            )

    def test_half_levels_round_up(self):
        np.testing.assert_array_equal(quantize([0.5, 1.5, 2.5], 8), [1, 2, 3])

    def test_clamps_to_range(self):
        np.testing.assert_array_equal(quantize([-5.0, 300.0], 8), [0, 255])
        np.testing.assert_array_equal(quantize([70000.0], 16), [65535])

    def test_dtype_matches_depth(self):
        assert quantize([1.0], 8).dtype == np.uint8
        assert quantize([1.0], 16).dtype == np.uint16


class TestImage:
    def test_pixels_are_read_only(self):
        img = make_image(np.zeros((4, 4), dtype=np.uint8))
        with pytest.raises((ValueError, RuntimeError)):
            img.pixels[0, 0] = 1

    def test_rejects_non_2d(self):
        with pytest.raises(ParameterError):
            make_image(np.zeros((4, 4, 3), dtype=np.uint8))

    def test_rejects_float_dtype(self):
        with pytest.raises(ParameterError):
            make_image(np.zeros((4, 4), dtype=np.float32))

    def test_rejects_nonpositive_pixel_size(self):
        with pytest.raises(ParameterError):
            make_image(np.zeros((4, 4), dtype=np.uint8), pixel_size=0.0)

    def test_equality_is_bit_exact(self):
        a = make_image(np.arange(16, dtype=np.uint8).reshape(4, 4))
        b = make_image(np.arange(16, dtype=np.uint8).reshape(4, 4))
        assert a == b
        c = b.with_pixels(b.pixels.copy() + 1)
        assert a != c
        assert a != b.with_pixels(b.pixels.astype(np.uint16))

    def test_properties(self):
        img = make_image(np.zeros((3, 5), dtype=np.uint16), pixel_size=0.5)
        assert (img.height, img.width) == (3, 5)
        assert img.bit_depth == 16
        assert img.max_level == 65535

    def test_astype_float_preserves_values(self):
        img = make_image(np.array([[0, 255]], dtype=np.uint8))
        f = img.astype_float()
        assert f.dtype == np.float64
        np.testing.assert_array_equal(f, [[0.0, 255.0]])


class TestTileAddress:
    def test_fields_round_trip(self):
        addr = TileAddress(roi_id=2, row=1, col=3, timestep=7, channel=Channel.FL, z_index=1)
        assert (addr.roi_id, addr.row, addr.col, addr.timestep, addr.z_index) == (2, 1, 3, 7, 1)
        assert addr.channel is Channel.FL


class TestTranslateArray:
    def test_integer_shift_moves_content(self):
        arr = np.zeros((5, 5))
        arr[1, 1] = 9.0
        out = translate_array(arr, 2, 1)
        assert out[2, 3] == 9.0
        assert out.sum() == 9.0

    def test_matches_bilinear_oracle_fractional(self, rng):
        arr = rng.random((12, 12))
        for dx, dy in [(0.25, 0.0), (-1.5, 2.75), (3.3, -0.6), (0.0, 0.0)]:
            np.testing.assert_allclose(
                translate_array(arr, dx, dy), translate_oracle(arr, dx, dy), atol=1e-12
            )

    def test_out_of_frame_fills_zero(self):
        arr = np.ones((4, 4))
        out = translate_array(arr, 2.0, 0.0)
        np.testing.assert_array_equal(out[:, :2], 0.0)

    def test_opposite_integer_shifts_cancel(self, rng):
        arr = rng.random((16, 16))
        back = translate_array(translate_array(arr, 3, -2), -3, 2)
        np.testing.assert_allclose(back[4:12, 4:12], arr[4:12, 4:12], atol=1e-12)


class TestWarpTranslate:
    def test_preserves_metadata_and_dtype(self, rng):
        img = make_image(
            (rng.random((8, 8)) * 65535).astype(np.uint16), pixel_size=0.4,
            channel=Channel.PC,
        )
        out = warp_translate(img, Translation(1.5, -0.5))
        assert out.pixels.dtype == np.uint16
        assert out.pixel_size == img.pixel_size
        assert out.channel is img.channel
        assert out.pixels.shape == img.pixels.shape

    def test_zero_shift_is_identity(self, rng):
        img = make_image((rng.random((8, 8)) * 255).astype(np.uint8))
        assert warp_translate(img, Translation(0.0, 0.0)) == img


class TestAdjustContrast:
    def test_linear_window_maps_range(self):
        img = make_image(np.array([[10, 20, 30]], dtype=np.uint8))
        out = adjust_contrast(img, 10, 30)
        np.testing.assert_array_equal(out.pixels, [[0, 128, 255]])

    def test_values_outside_window_saturate(self):
        img = make_image(np.array([[0, 5, 250, 255]], dtype=np.uint8))
        out = adjust_contrast(img, 5, 250)
        assert out.pixels[0, 0] == 0
        assert out.pixels[0, -1] == 255

    def test_full_window_is_identity(self, rng):
        img = make_image((rng.random((6, 6)) * 255).astype(np.uint8))
        assert adjust_contrast(img, 0, 255) == img

    def test_16_bit_window(self):
        img = make_image(np.array([[1000, 2000]], dtype=np.uint16))
        out = adjust_contrast(img, 1000, 2000)
        np.testing.assert_array_equal(out.pixels, [[0, 65535]])

    def test_invalid_window_rejected(self):
        img = make_image(np.zeros((2, 2), dtype=np.uint8))
        for lo, hi in [(10, 10), (30, 20), (-1, 50), (0, 256)]:
            with pytest.raises(ParameterError):
                adjust_contrast(img, lo, hi)
