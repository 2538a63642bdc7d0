"""CT attenuation windowing and resizing to the network input grid."""
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class AttenuationWindow:
    hu_low: int
    hu_high: int

    def __post_init__(self):
        if not self.hu_low < self.hu_high:
            raise ParameterError(f"window needs hu_low < hu_high, got ({self.hu_low}, {self.hu_high})")


LOW_WINDOW = AttenuationWindow(-1400, -950)
NORMAL_WINDOW = AttenuationWindow(-1400, 200)
HIGH_WINDOW = AttenuationWindow(-160, 240)
DEFAULT_WINDOWS = (LOW_WINDOW, NORMAL_WINDOW, HIGH_WINDOW)


def window_rescale(hu_grid, window):
    """Map ``[hu_low, hu_high]`` linearly onto ``[0, 255]``, clamping outside."""
    hu = np.asarray(hu_grid, dtype=np.float64)
    v = (hu - window.hu_low) / float(window.hu_high - window.hu_low)
    return np.clip(v, 0.0, 1.0) * 255.0


def _axis_weights(n_in, n_out):
    if n_out == 1 or n_in == 1:
        pos = np.zeros(n_out)
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    i0 = np.minimum(np.floor(pos).astype(np.intp), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = pos - i0
    return i0, i1, w


def resize_bilinear(img, size):
    """Corner-aligned bilinear resize of the last two axes to ``size``.

    ``size`` is an int (square) or ``(height, width)``. Output is clipped to
    the input range so interpolation never over- or undershoots.
    """
    img = np.asarray(img, dtype=np.float64)
    oh, ow = (size, size) if np.isscalar(size) else size
    h, w = img.shape[-2:]
    if (oh, ow) == (h, w):
        return img.copy()
    y0, y1, wy = _axis_weights(h, oh)
    x0, x1, wx = _axis_weights(w, ow)
    rows = img[..., y0, :] * (1.0 - wy)[:, None] + img[..., y1, :] * wy[:, None]
    out = rows[..., x0] * (1.0 - wx) + rows[..., x1] * wx
    lo = img.min(axis=(-2, -1), keepdims=True)
    hi = img.max(axis=(-2, -1), keepdims=True)
    return np.clip(out, lo, hi)


def window_channels(hu_grid, windows=DEFAULT_WINDOWS):
    """3 x H x W stack of windowed channels at native resolution."""
    return np.stack([window_rescale(hu_grid, w) for w in windows])


def make_input(slice_, target_size, windows=DEFAULT_WINDOWS):
    """Network input image: three windowed channels resized to target_size^2."""
    if int(target_size) < 8:
        raise ParameterError("target_size must be >= 8")
    hu = getattr(slice_, "hu_grid", slice_)
    return resize_bilinear(window_channels(hu, windows), int(target_size))


def make_inputs(slices, target_size, windows=DEFAULT_WINDOWS, dtype=np.float64):
    return np.stack([make_input(s, target_size, windows) for s in slices]).astype(dtype, copy=False)


def hflip(batch):
    return batch[..., ::-1].copy()


@dataclass
class ChannelStats:
    """Per-channel mean/std fitted on a training fold."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, images):
        images = np.asarray(images, dtype=np.float64)
        mean = images.mean(axis=(0, 2, 3))
        std = images.std(axis=(0, 2, 3))
        return cls(mean, np.where(std > 1e-6, std, 1.0))

    def apply(self, images):
        dt = images.dtype if np.issubdtype(images.dtype, np.floating) else np.float64
        m = self.mean.astype(dt)[None, :, None, None]
        s = self.std.astype(dt)[None, :, None, None]
        return (images - m) / s
