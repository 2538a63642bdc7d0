"""Synthetic CT-like slices with per-pixel disease masks.

Each slice is a body ellipse of soft tissue holding one elliptical lung.
Disease regions are irregular blobs inside the lung, each filled with a
class-specific procedural texture:

* ground glass  - hazy, moderately raised attenuation
* reticular     - fine lattice of bright lines
* honeycomb     - clustered air cysts with thick bright walls
* emphysema     - very low attenuation pockets near -1000 HU

Several classes may be painted on the same slice; later paints overwrite
earlier ones and the mask records exactly what ended up where.
"""
import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import rng as rngmod
from .errors import DataError, ParameterError
from .preprocess import resize_bilinear

CLASS_NAMES = ("GroundGlass", "Reticular", "Honeycomb", "Emphysema")
NUM_CLASSES = len(CLASS_NAMES)
HU_MIN, HU_MAX = -1400, 400

# presence threshold used on 512x512 slices
REFERENCE_GRID = 512
REFERENCE_THRESHOLD = 6000


def default_threshold(grid_size):
    """Pixel threshold equivalent to 6000 px at 512x512, scaled by area."""
    return max(1, int(round(REFERENCE_THRESHOLD * grid_size * grid_size / REFERENCE_GRID ** 2)))


@dataclass
class LabeledSlice:
    hu_grid: np.ndarray
    mask: np.ndarray
    patient_id: str
    slice_id: str = ""
    lung: tuple = None  # (cy, cx, ry, rx) of the lung ellipse, when known

    def __post_init__(self):
        if self.hu_grid.shape != self.mask.shape or self.hu_grid.ndim != 2:
            raise DataError("hu_grid and mask must be 2-D arrays of identical shape")

    def lung_mask(self):
        h, w = self.mask.shape
        if self.lung is None:
            return np.ones((h, w), dtype=bool)
        cy, cx, ry, rx = self.lung
        yy, xx = np.mgrid[0:h, 0:w]
        return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


@dataclass
class GeneratorSpec:
    num_patients: int = 100
    slices_per_patient: int = 8
    grid_size: int = 64
    class_prevalence: tuple = (0.35, 0.3, 0.25, 0.35)
    # disease area as a fraction of lung area, drawn uniformly per region
    region_fraction: tuple = (0.04, 0.35)
    noise_hu: float = 20.0

    def validate(self):
        if int(self.num_patients) < 1:
            raise ParameterError("num_patients must be >= 1")
        if int(self.slices_per_patient) < 1:
            raise ParameterError("slices_per_patient must be >= 1")
        if int(self.grid_size) < 32:
            raise ParameterError("grid_size must be >= 32")
        prev = np.asarray(self.class_prevalence, dtype=float)
        if prev.shape != (NUM_CLASSES,):
            raise ParameterError(f"class_prevalence needs {NUM_CLASSES} entries")
        if np.any(~np.isfinite(prev)) or np.any(prev < 0) or np.any(prev > 1):
            raise ParameterError("class_prevalence entries must lie in [0, 1]")
        lo, hi = self.region_fraction
        if not 0 < lo <= hi <= 1:
            raise ParameterError("region_fraction must satisfy 0 < lo <= hi <= 1")
        if self.noise_hu < 0:
            raise ParameterError("noise_hu must be non-negative")


# --------------------------------------------------------------------------
# generation


def _smooth_noise(rng, size, cell):
    """Zero-mean, unit-ish smooth field with correlation length ~cell px."""
    n = max(2, int(np.ceil(size / cell)) + 1)
    coarse = rng.standard_normal((n, n))
    return resize_bilinear(coarse, size)


def _blob(rng, yy, xx, lung, area):
    """Irregular elliptical blob of roughly ``area`` px centred in the lung."""
    cy, cx, ry, rx = lung
    r = np.sqrt(rng.uniform(0, 0.6))
    t = rng.uniform(0, 2 * np.pi)
    by, bx = cy + r * ry * np.sin(t), cx + r * rx * np.cos(t)
    aspect = rng.uniform(0.6, 1.6)
    a = np.sqrt(area / np.pi * aspect)
    b = np.sqrt(area / np.pi / aspect)
    phi = rng.uniform(0, np.pi)
    dy, dx = yy - by, xx - bx
    u = dx * np.cos(phi) + dy * np.sin(phi)
    v = -dx * np.sin(phi) + dy * np.cos(phi)
    theta = np.arctan2(v, u)
    k = int(rng.integers(2, 6))
    edge = 1.0 + 0.15 * np.sin(k * theta + rng.uniform(0, 2 * np.pi))
    return (u / a) ** 2 + (v / b) ** 2 <= edge ** 2


def _texture_ground_glass(rng, g, scale):
    return -620.0 + 45.0 * _smooth_noise(rng, g, 6 * scale)


def _texture_reticular(rng, g, scale, yy, xx):
    period = 4.0 * scale
    out = np.full((g, g), -780.0)
    for _ in range(2):
        th = rng.uniform(0, np.pi)
        ph = rng.uniform(0, 2 * np.pi)
        wave = np.abs(np.sin(np.pi * (xx * np.cos(th) + yy * np.sin(th)) / period + ph))
        out = np.where(wave > 0.8, -180.0, out)
    return out


def _texture_honeycomb(rng, g, scale, yy, xx):
    cell = 6.0 * scale
    n = int(np.ceil(g / cell)) + 2
    seeds = (np.stack(np.mgrid[0:n, 0:n], axis=-1) - 1 + rng.uniform(0.15, 0.85, (n, n, 2))) * cell
    iy = np.clip((yy / cell).astype(int) + 1, 1, n - 2)
    ix = np.clip((xx / cell).astype(int) + 1, 1, n - 2)
    d = []
    for oy in (-1, 0, 1):
        for ox in (-1, 0, 1):
            s = seeds[iy + oy, ix + ox]
            d.append(np.hypot(yy - s[..., 0], xx - s[..., 1]))
    d = np.sort(np.stack(d), axis=0)
    wall = (d[1] - d[0]) < 1.2 * scale
    return np.where(wall, -230.0, -950.0)


def _texture_emphysema(rng, g, scale):
    spots = _smooth_noise(rng, g, 2 * scale)
    return np.where(spots > 0.6, -1010.0, -985.0) + 8.0 * spots


def generate_slice(rng, g, prevalence, region_fraction, noise_hu, patient, patient_id, slice_id):
    scale = g / 64.0
    yy, xx = np.mgrid[0:g, 0:g].astype(float)
    c = (g - 1) / 2.0
    body = ((yy - c) / (0.47 * g)) ** 2 + ((xx - c) / (0.48 * g)) ** 2 <= 1.0
    lung = (
        c + rng.uniform(-0.02, 0.02) * g,
        c + rng.uniform(-0.02, 0.02) * g,
        patient["lung_ry"] * g * rng.uniform(0.95, 1.05),
        patient["lung_rx"] * g * rng.uniform(0.95, 1.05),
    )
    lung_px = ((yy - lung[0]) / lung[2]) ** 2 + ((xx - lung[1]) / lung[3]) ** 2 <= 1.0

    hu = np.full((g, g), -1000.0)
    hu[body] = 40.0
    hu[lung_px] = -850.0 + patient["lung_offset"]
    # a few vessels, healthy tissue
    for _ in range(int(rng.integers(2, 6))):
        vy = lung[0] + rng.uniform(-0.7, 0.7) * lung[2]
        vx = lung[1] + rng.uniform(-0.7, 0.7) * lung[3]
        vr = rng.uniform(0.6, 1.4) * scale
        hu[(((yy - vy) ** 2 + (xx - vx) ** 2) <= vr * vr) & lung_px] = -60.0

    mask = np.zeros((g, g), dtype=np.uint8)
    present = np.flatnonzero(rng.random(NUM_CLASSES) < prevalence)
    lung_area = np.pi * lung[2] * lung[3]
    for k in rng.permutation(present):
        area = rng.uniform(*region_fraction) * lung_area
        region = _blob(rng, yy, xx, lung, area) & lung_px
        if k == 0:
            tex = _texture_ground_glass(rng, g, scale)
        elif k == 1:
            tex = _texture_reticular(rng, g, scale, yy, xx)
        elif k == 2:
            tex = _texture_honeycomb(rng, g, scale, yy, xx)
        else:
            tex = _texture_emphysema(rng, g, scale)
        hu[region] = tex[region]
        mask[region] = k + 1

    hu += noise_hu * rng.standard_normal((g, g))
    hu = np.clip(np.rint(hu), HU_MIN, HU_MAX).astype(np.int16)
    return LabeledSlice(hu, mask, patient_id, slice_id, tuple(float(v) for v in lung))


def generate_patient(spec, seed, index):
    """All slices of patient ``index``; depends only on (spec, seed, index)."""
    rng = rngmod.stream(seed, "data", index)
    patient = {
        "lung_ry": rng.uniform(0.30, 0.36),
        "lung_rx": rng.uniform(0.32, 0.40),
        "lung_offset": rng.uniform(-25, 25),
    }
    noise = spec.noise_hu * rng.uniform(0.8, 1.2)
    pid = f"P{index:04d}"
    prev = np.asarray(spec.class_prevalence, dtype=float)
    return [
        generate_slice(rng, int(spec.grid_size), prev, spec.region_fraction, noise,
                       patient, pid, f"{pid}_S{j:03d}")
        for j in range(int(spec.slices_per_patient))
    ]


def generate_dataset(spec, seed):
    """Generate ``num_patients * slices_per_patient`` labelled slices."""
    spec.validate()
    out = []
    for i in range(int(spec.num_patients)):
        out.extend(generate_patient(spec, seed, i))
    return out


# --------------------------------------------------------------------------
# labels


def mask_to_counts(slice_or_mask):
    """Pixels per disease class (ids 1..C), as a length-C int vector."""
    mask = getattr(slice_or_mask, "mask", slice_or_mask)
    mask = np.asarray(mask)
    counts = np.bincount(mask.ravel(), minlength=NUM_CLASSES + 1)
    if counts.size > NUM_CLASSES + 1:
        raise DataError(f"mask contains class ids above {NUM_CLASSES}")
    return counts[1:].astype(np.int64)


def counts_matrix(slices):
    return np.stack([mask_to_counts(s) for s in slices]) if slices else np.zeros((0, NUM_CLASSES), np.int64)


@dataclass(frozen=True)
class LabelMapping:
    kind: str = "step"
    T: float = REFERENCE_THRESHOLD
    T1: float = None
    T2: float = None

    def __post_init__(self):
        if self.kind not in ("identity", "step", "piecewise"):
            raise ParameterError(f"unknown mapping kind {self.kind!r}")
        if self.kind == "step" and not self.T > 0:
            raise ParameterError("step mapping requires T > 0")
        if self.kind == "piecewise":
            t1 = self.T / 2 if self.T1 is None else self.T1
            t2 = self.T if self.T2 is None else self.T2
            object.__setattr__(self, "T1", float(t1))
            object.__setattr__(self, "T2", float(t2))
            if not 0 <= self.T1 < self.T2:
                raise ParameterError("piecewise mapping requires 0 <= T1 < T2")

    @classmethod
    def parse(cls, text, default_T=REFERENCE_THRESHOLD):
        """Parse ``identity``, ``step``, ``step:T``, ``piecewise`` or ``piecewise:T1,T2``."""
        kind, _, arg = text.strip().partition(":")
        try:
            if kind == "identity" and not arg:
                return cls("identity", default_T)
            if kind == "step":
                return cls("step", float(arg) if arg else default_T)
            if kind == "piecewise":
                if not arg:
                    return cls("piecewise", default_T)
                t1, t2 = (float(v) for v in arg.split(","))
                return cls("piecewise", t2, t1, t2)
        except ValueError:
            pass
        raise ParameterError(f"invalid label mapping {text!r}")

    @property
    def truth_threshold(self):
        """Pixel count at which a class counts as present for evaluation."""
        return self.T2 if self.kind == "piecewise" else self.T

    def __str__(self):
        if self.kind == "identity":
            return "identity"
        if self.kind == "step":
            return f"step:{self.T:g}"
        return f"piecewise:{self.T1:g},{self.T2:g}"


def map_counts_to_labels(counts, mapping):
    c = np.asarray(counts, dtype=np.float64)
    if mapping.kind == "identity":
        return c.copy()
    if mapping.kind == "step":
        return (c >= mapping.T).astype(np.float64)
    return np.clip((c - mapping.T1) / (mapping.T2 - mapping.T1), 0.0, 1.0)


def binary_labels(counts, threshold):
    return (np.asarray(counts) >= threshold).astype(np.int64)


# --------------------------------------------------------------------------
# on-disk format

FORMAT = "ildnet-dataset"
FORMAT_VERSION = 1


def slice_to_bytes(s):
    return (np.ascontiguousarray(s.hu_grid, dtype="<i2").tobytes()
            + np.ascontiguousarray(s.mask, dtype=np.uint8).tobytes())


def slice_from_bytes(buf, h, w, patient_id, slice_id="", lung=None):
    n = h * w
    if len(buf) != 3 * n:
        raise DataError(f"slice {slice_id!r}: expected {3 * n} bytes, found {len(buf)}")
    hu = np.frombuffer(buf, dtype="<i2", count=n).reshape(h, w).astype(np.int16)
    mask = np.frombuffer(buf, dtype=np.uint8, count=n, offset=2 * n).reshape(h, w).copy()
    if mask.max(initial=0) > NUM_CLASSES:
        raise DataError(f"slice {slice_id!r}: mask id out of range")
    return LabeledSlice(hu, mask, patient_id, slice_id, None if lung is None else tuple(lung))


def write_dataset(out_dir, slices, meta=None):
    """Write slice files, then ``manifest.json`` last as the completion marker."""
    os.makedirs(os.path.join(out_dir, "slices"), exist_ok=True)
    if not slices:
        raise DataError("refusing to write an empty dataset")
    h, w = slices[0].mask.shape
    entries = []
    for s in slices:
        if s.mask.shape != (h, w):
            raise DataError("all slices in a dataset must share one grid size")
        rel = f"slices/{s.slice_id}.bin"
        with open(os.path.join(out_dir, rel), "wb") as fh:
            fh.write(slice_to_bytes(s))
        entries.append({"slice_id": s.slice_id, "patient_id": s.patient_id, "file": rel,
                        "lung": None if s.lung is None else [round(v, 6) for v in s.lung]})
    manifest = {"format": FORMAT, "version": FORMAT_VERSION, "height": h, "width": w,
                "classes": list(CLASS_NAMES), "meta": meta or {}, "slices": entries}
    tmp = os.path.join(out_dir, "manifest.json.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, os.path.join(out_dir, "manifest.json"))
    return manifest


def validate_manifest(manifest):
    """Raise DataError unless ``manifest`` matches the dataset schema."""
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT:
        raise DataError("manifest: wrong or missing format tag")
    if manifest.get("version") != FORMAT_VERSION:
        raise DataError(f"manifest: unsupported version {manifest.get('version')!r}")
    for key in ("height", "width"):
        if not isinstance(manifest.get(key), int) or manifest[key] < 1:
            raise DataError(f"manifest: bad {key}")
    entries = manifest.get("slices")
    if not isinstance(entries, list) or not entries:
        raise DataError("manifest: no slices")
    seen = set()
    for e in entries:
        for key in ("slice_id", "patient_id", "file"):
            if not isinstance(e.get(key), str):
                raise DataError(f"manifest: slice entry missing {key}")
        if e["slice_id"] in seen:
            raise DataError(f"manifest: duplicate slice_id {e['slice_id']}")
        seen.add(e["slice_id"])


def read_dataset(data_dir):
    path = os.path.join(data_dir, "manifest.json")
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"no manifest.json in {data_dir}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest.json is not valid JSON: {exc}") from None
    validate_manifest(manifest)
    h, w = manifest["height"], manifest["width"]
    out = []
    for e in manifest["slices"]:
        try:
            with open(os.path.join(data_dir, e["file"]), "rb") as fh:
                buf = fh.read()
        except FileNotFoundError:
            raise DataError(f"missing slice file {e['file']}") from None
        out.append(slice_from_bytes(buf, h, w, e["patient_id"], e["slice_id"], e.get("lung")))
    return out, manifest


def spec_to_dict(spec):
    d = asdict(spec)
    d["class_prevalence"] = [float(v) for v in spec.class_prevalence]
    d["region_fraction"] = [float(v) for v in spec.region_fraction]
    return d
