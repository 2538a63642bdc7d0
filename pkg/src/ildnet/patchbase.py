"""Patch-based sliding-window baseline and timing harness."""
import time
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from threadpoolctl import threadpool_info, threadpool_limits

from . import nn
from .errors import DataError, ParameterError
from .preprocess import ChannelStats, window_channels
from .synthdata import NUM_CLASSES

PATCH_CLASSES = NUM_CLASSES + 1  # healthy + diseases


@dataclass
class Patches:
    images: np.ndarray  # (P, 3, s, s) windowed channels
    positions: np.ndarray  # (P, 2) top-left (row, col)
    labels: np.ndarray  # (P,) majority mask id, 0 = healthy
    grid: tuple  # positions per axis before any restriction


def grid_positions(h, w, patch_size, stride):
    if h < patch_size or w < patch_size:
        raise DataError(f"slice {h}x{w} is smaller than the {patch_size}px patch")
    ys = np.arange(0, h - patch_size + 1, stride)
    xs = np.arange(0, w - patch_size + 1, stride)
    return ys, xs


def extract_patches(slice_, patch_size=32, stride=10, restrict_to_lung=False, channels=None):
    """Regular grid of patches labelled by the majority class of their mask.

    With ``restrict_to_lung`` only patches whose centre lies in the slice's
    lung ellipse are kept.
    """
    if patch_size < 1 or stride < 1:
        raise ParameterError("patch_size and stride must be >= 1")
    h, w = slice_.mask.shape
    ys, xs = grid_positions(h, w, patch_size, stride)
    pos = np.stack(np.meshgrid(ys, xs, indexing="ij"), axis=-1).reshape(-1, 2)
    if restrict_to_lung:
        lung = slice_.lung_mask()
        c = patch_size // 2
        pos = pos[lung[pos[:, 0] + c, pos[:, 1] + c]]
    if channels is None:
        channels = window_channels(slice_.hu_grid)
    win = sliding_window_view(channels, (patch_size, patch_size), axis=(1, 2))
    images = np.ascontiguousarray(win[:, pos[:, 0], pos[:, 1]].transpose(1, 0, 2, 3))
    mwin = sliding_window_view(slice_.mask, (patch_size, patch_size))[pos[:, 0], pos[:, 1]]
    counts = np.stack([(mwin == k).sum(axis=(1, 2)) for k in range(PATCH_CLASSES)], axis=1)
    labels = counts.argmax(axis=1)
    return Patches(images, pos, labels, (len(ys), len(xs)))


def patch_spec(patch_size=32, width=16):
    """Patch classifier: two conv blocks, global-size FC head over 5 classes."""
    return nn.NetworkSpec((3, patch_size, patch_size), [
        nn.Conv(width, 5, pad=2), nn.ReLU(), nn.MaxPool(2),
        nn.Conv(2 * width, 5, pad=2), nn.ReLU(), nn.MaxPool(2),
        nn.Conv(4 * width, 3, pad=1), nn.ReLU(), nn.MaxPool(2),
        nn.FC(128), nn.ReLU(), nn.FC(PATCH_CLASSES),
    ])


@dataclass
class PatchModel:
    net: object
    stats: ChannelStats
    patch_size: int = 32

    def predict_proba(self, images, batch_size=256):
        x = self.stats.apply(np.asarray(images, dtype=self.net.dtype))
        return nn.softmax(nn.predict(self.net, x, batch_size).astype(np.float64))


def patch_train(images, labels, net_spec=None, opt=None):
    images = np.asarray(images)
    labels = np.asarray(labels, dtype=np.intp)
    if len(images) == 0:
        raise DataError("no training patches")
    opt = opt or nn.OptConfig()
    net_spec = net_spec or patch_spec(images.shape[-1])
    stats = ChannelStats.fit(images)
    x = stats.apply(images.astype(opt.dtype))
    result = nn.train(x, labels, net_spec, nn.loss_softmax_xent, opt)
    return PatchModel(result.net, stats, images.shape[-1]), result.history


def slide_predict(slice_, model, stride=10, fraction=0.05, restrict_to_lung=False, batch_size=256):
    """Classify every grid patch and aggregate to a slice-level label set.

    Returns ``(class_map, labels)``: class_map holds the predicted class id
    per grid position (-1 where skipped); labels is the sorted list of disease
    indices (0..C-1) whose patch count exceeds ``fraction`` of the
    classified positions.
    """
    p = extract_patches(slice_, model.patch_size, stride, restrict_to_lung)
    gh, gw = p.grid
    class_map = np.full((gh, gw), -1, dtype=np.int64)
    if len(p.images) == 0:
        return class_map, []
    pred = model.predict_proba(p.images, batch_size).argmax(axis=1)
    class_map[p.positions[:, 0] // stride, p.positions[:, 1] // stride] = pred
    counts = np.bincount(pred, minlength=PATCH_CLASSES)
    labels = [k - 1 for k in range(1, PATCH_CLASSES) if counts[k] > fraction * len(pred)]
    return class_map, labels


# --------------------------------------------------------------------------
# timing


@dataclass
class TimingStats:
    method: str
    n_slices: int
    min_s: float
    max_s: float
    mean_s: float
    threads: int


def blas_threads():
    info = threadpool_info()
    return max((i.get("num_threads", 1) for i in info), default=1)


def benchmark(methods, slices, repetitions=1, threads=1):
    """Wall-clock seconds per slice for each ``name -> callable(slice)``.

    Each method gets one untimed warm-up call; every method runs under the
    same BLAS thread limit.
    """
    if len(slices) == 0:
        raise DataError("benchmark needs at least one slice")
    if repetitions < 1:
        raise ParameterError("repetitions must be >= 1")
    out = {}
    with threadpool_limits(limits=threads):
        used = blas_threads()
        for name, fn in methods.items():
            fn(slices[0])
            per = []
            for s in slices:
                t0 = time.perf_counter()
                for _ in range(repetitions):
                    fn(s)
                per.append((time.perf_counter() - t0) / repetitions)
            per = np.array(per)
            out[name] = TimingStats(name, len(slices), float(per.min()), float(per.max()), float(per.mean()), used)
    return out
