import numpy as np
import pytest

from tilescope.imaging import Channel, Image


@pytest.fixture
def rng():
    return np.random.default_rng(20240117)


def make_image(pixels, pixel_size=1.0, channel=Channel.BF):
    return Image(np.asarray(pixels), pixel_size, channel)


def textured(rng, shape=(128, 128), smooth=3, dtype=np.uint8, channel=Channel.PC):
    """A smooth random texture with enough structure for feature work."""
    from scipy import ndimage

    base = ndimage.gaussian_filter(rng.random(shape), smooth)
    base = (base - base.min()) / (base.max() - base.min() + 1e-12)
    top = np.iinfo(dtype).max
    return Image((base * top).astype(dtype), 1.0, channel)
