"""Dataset ingestion, resizing, splitting, augmentation, the synthetic
concentrated-vs-dispersed gaze generator and per-class mean images."""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .images import IMAGE_SUFFIXES, ImageDecodeError, read_image, to_bytes, write_ppm
from .tensor import DTYPE, make_rng

log = logging.getLogger(__name__)

CLASS_NAMES = ("ASD", "TD")
IMAGE_SIZE = 48
SPLITS = ("train", "val", "test")


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    """Images ``(N, 48, 48, 3)`` in [0, 1] with integer labels (0=ASD, 1=TD).

    ``split`` holds "train"/"val"/"test" or "" while unsplit; ``provenance``
    is "original" or "augmented".
    """

    images: np.ndarray
    labels: np.ndarray
    split: np.ndarray = None
    provenance: np.ndarray = None
    class_names: tuple = CLASS_NAMES
    sources: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.images)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.split is None:
            self.split = np.full(n, "", dtype="<U5")
        if self.provenance is None:
            self.provenance = np.full(n, "original", dtype="<U9")
        if not (len(self.labels) == len(self.split) == len(self.provenance) == n):
            raise DataError("images, labels, split and provenance lengths differ")

    def __len__(self):
        return len(self.images)

    def arrays(self, split):
        mask = self.split == split
        return self.images[mask], self.labels[mask]

    def subset(self, mask):
        return Dataset(self.images[mask], self.labels[mask], self.split[mask],
                       self.provenance[mask], self.class_names)

    def counts(self):
        return {name: int((self.labels == i).sum()) for i, name in enumerate(self.class_names)}

    def split_sizes(self):
        return {s: int((self.split == s).sum()) for s in SPLITS}

    @staticmethod
    def concat(parts):
        return Dataset(
            np.concatenate([p.images for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.split for p in parts]),
            np.concatenate([p.provenance for p in parts]),
            parts[0].class_names,
            [s for p in parts for s in p.sources],
        )


def resize_bilinear(img, out=(IMAGE_SIZE, IMAGE_SIZE)):
    """Corner-aligned bilinear resize of an ``(H, W, C)`` image."""
    h, w = img.shape[:2]
    oh, ow = out
    if (h, w) == (oh, ow):
        return np.array(img, dtype=DTYPE)

    def axis_coords(n_in, n_out):
        if n_out == 1 or n_in == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        lo = np.minimum(np.floor(pos).astype(int), n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = axis_coords(h, oh)
    x0, x1, fx = axis_coords(w, ow)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    img = np.asarray(img, dtype=DTYPE)
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    res = top * (1 - fy) + bottom * fy
    return np.clip(res, img.min(), img.max())


def load_directory(root):
    """Load ``root/ASD`` and ``root/TD`` images, resized to 48x48."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"data root {root} does not exist")
    images, labels, sources = [], [], []
    for label, name in enumerate(CLASS_NAMES):
        class_dir = root / name
        if not class_dir.is_dir():
            raise DataError(f"missing class directory {class_dir}")
        loaded = 0
        for path in sorted(p for p in class_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES):
            try:
                img = read_image(path)
            except ImageDecodeError as exc:
                log.warning("skipping undecodable image %s", exc)
                continue
            images.append(resize_bilinear(img))
            labels.append(label)
            sources.append(str(path))
            loaded += 1
        if loaded == 0:
            raise DataError(f"class {name} has no decodable images under {class_dir}")
    ds = Dataset(np.stack(images), np.array(labels))
    ds.sources = sources
    return ds


def load_directories(roots):
    return Dataset.concat([load_directory(r) for r in roots])


def split_dataset(ds, seed, ratios=(0.8, 0.1, 0.1)):
    """Random (unstratified) split; val and test get ``floor(ratio * N)``."""
    n = len(ds)
    if n < 10:
        raise DataError(f"need at least 10 items to split, got {n}")
    n_val = math.floor(ratios[1] * n)
    n_test = math.floor(ratios[2] * n)
    order = make_rng(seed, "split").permutation(n)
    split = np.full(n, "train", dtype="<U5")
    split[order[:n_val]] = "val"
    split[order[n_val:n_val + n_test]] = "test"
    return Dataset(ds.images, ds.labels, split, ds.provenance.copy(), ds.class_names, ds.sources)


@dataclass(frozen=True)
class AugmentSpec:
    rotation_max_deg: float = 20.0
    shear_max: float = 0.2
    width_shift_max_frac: float = 0.1
    copies: int = 3


def affine_image(img, rotation_deg=0.0, shear=0.0, width_shift=0.0):
    """Rotate and shear about the image centre, then shift horizontally by
    ``width_shift`` pixels. Bilinear sampling, zero fill outside."""
    h, w = img.shape[:2]
    theta = math.radians(rotation_deg)
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    shr = np.array([[1.0, 0.0], [shear, 1.0]])  # (row, col): col += shear * row
    forward = rot @ shr
    inverse = np.linalg.inv(forward)
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    shift = np.array([0.0, width_shift])
    # input = inverse @ (output - center - shift) + center
    offset = center - inverse @ (center + shift)
    out = np.empty_like(img, dtype=DTYPE)
    for c in range(img.shape[2]):
        out[..., c] = ndimage.affine_transform(img[..., c], inverse, offset=offset, order=1,
                                               mode="constant", cval=0.0, prefilter=False)
    return np.clip(out, 0.0, 1.0)


def random_affine(img, spec, rng):
    rot = rng.uniform(-spec.rotation_max_deg, spec.rotation_max_deg)
    shear = rng.uniform(-spec.shear_max, spec.shear_max)
    shift = rng.uniform(-spec.width_shift_max_frac, spec.width_shift_max_frac) * img.shape[1]
    return affine_image(img, rot, shear, shift)


def augment_dataset(ds, spec=AugmentSpec(), rng=None, seed=0, paper_compat=False):
    """Append ``spec.copies`` augmented copies per item.

    By default only train items are augmented (val/test untouched). With
    ``paper_compat`` every item is augmented and the result is left unsplit,
    to be split afterwards.
    """
    rng = rng or make_rng(seed, "augment")
    if paper_compat:
        source = np.arange(len(ds))
    else:
        source = np.flatnonzero(ds.split == "train")
    new = [random_affine(ds.images[i], spec, rng) for i in source for _ in range(spec.copies)]
    idx = np.repeat(source, spec.copies)
    if not new:
        return ds
    split = np.full(len(idx), "" if paper_compat else "train", dtype="<U5")
    base_split = np.full(len(ds), "", dtype="<U5") if paper_compat else ds.split
    return Dataset(
        np.concatenate([ds.images, np.stack(new)]),
        np.concatenate([ds.labels, ds.labels[idx]]),
        np.concatenate([base_split, split]),
        np.concatenate([ds.provenance, np.full(len(idx), "augmented", dtype="<U9")]),
        ds.class_names,
        ds.sources,
    )


@dataclass(frozen=True)
class SyntheticSpec:
    per_class: int = 250
    size: int = IMAGE_SIZE
    td_jitter: float = 4.0
    sigma_range: tuple = (2.0, 4.0)
    asd_blobs: tuple = (4, 7)
    trace_intensity: float = 0.35
    trace_width: float = 0.8


def _blob(yy, xx, cy, cx, sigma):
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))


def _segment(yy, xx, p, q, width):
    # distance from every pixel to segment p-q
    d = q - p
    length2 = float(d @ d)
    if length2 == 0:
        t = np.zeros_like(yy)
    else:
        t = np.clip(((yy - p[0]) * d[0] + (xx - p[1]) * d[1]) / length2, 0.0, 1.0)
    dist2 = (yy - p[0] - t * d[0]) ** 2 + (xx - p[1] - t * d[1]) ** 2
    return np.exp(-dist2 / (2 * width ** 2))


def synthetic_image(label, spec, rng):
    s = spec.size
    yy, xx = np.mgrid[0:s, 0:s].astype(DTYPE)
    c = (s - 1) / 2.0
    img = np.zeros((s, s), dtype=DTYPE)
    if label == CLASS_NAMES.index("TD"):
        cy, cx = c + rng.uniform(-spec.td_jitter, spec.td_jitter, size=2)
        img += _blob(yy, xx, cy, cx, rng.uniform(*spec.sigma_range))
    else:
        k = int(rng.integers(spec.asd_blobs[0], spec.asd_blobs[1] + 1))
        margin = 4.0
        centers = rng.uniform(margin, s - 1 - margin, size=(k, 2))
        sigmas = rng.uniform(*spec.sigma_range, size=k)
        for (cy, cx), sg in zip(centers, sigmas):
            img += _blob(yy, xx, cy, cx, sg)
        for p, q in zip(centers[:-1], centers[1:]):
            img += spec.trace_intensity * _segment(yy, xx, p, q, spec.trace_width)
    img = np.clip(img, 0.0, 1.0)
    return np.repeat(img[..., None], 3, axis=2)


def generate_synthetic(spec=SyntheticSpec(), rng=None, seed=0):
    """Seeded stand-in for the gaze datasets: one concentrated blob for TD,
    several dispersed fixations joined by saccade traces for ASD."""
    rng = rng or make_rng(seed, "synthetic")
    if spec.per_class < 1:
        raise DataError("per_class must be >= 1")
    images, labels = [], []
    for label in range(len(CLASS_NAMES)):
        for _ in range(spec.per_class):
            images.append(synthetic_image(label, spec, rng))
            labels.append(label)
    return Dataset(np.stack(images), np.array(labels))


def export_dataset(ds, root):
    """Write ``root/ASD/*.ppm`` and ``root/TD/*.ppm`` (P6, maxval 255)."""
    root = Path(root)
    counters = {}
    for img, label in zip(ds.images, ds.labels):
        name = ds.class_names[label]
        (root / name).mkdir(parents=True, exist_ok=True)
        i = counters.get(name, 0)
        counters[name] = i + 1
        write_ppm(root / name / f"{i:05d}.ppm", to_bytes(img))
    return root


def radial_dispersion(img):
    """Intensity-weighted mean squared distance from the intensity centroid."""
    gray = np.asarray(img, dtype=DTYPE)
    if gray.ndim == 3:
        gray = gray.mean(axis=2)
    mass = gray.sum()
    if mass <= 0:
        return 0.0
    yy, xx = np.mgrid[0:gray.shape[0], 0:gray.shape[1]]
    cy = (gray * yy).sum() / mass
    cx = (gray * xx).sum() / mass
    return float((gray * ((yy - cy) ** 2 + (xx - cx) ** 2)).sum() / mass)


def class_mean_images(ds):
    """Per-class pixel-wise mean images and the dispersion of each mean."""
    means = {}
    for i, name in enumerate(ds.class_names):
        members = ds.images[ds.labels == i]
        if len(members) == 0:
            raise DataError(f"class {name} is empty")
        means[name] = members.mean(axis=0)
    dispersion = {name: radial_dispersion(m) for name, m in means.items()}
    return means["ASD"], means["TD"], dispersion
