"""Datasets and the stratified five-fold cross-validation protocol.

Images are rank-3 [channels, H, W] tensors with values in [0, 1]. The
synthetic generator produces four separable texture classes at desk scale;
load_image_dir ingests binary portable pixmaps (P5 grayscale / P6 RGB),
one subdirectory per class.
"""

from dataclasses import dataclass
import re
from pathlib import Path

import numpy as np

from .tensor import Tensor, from_array
from .rng import stream

SYNTHETIC_CLASSES = ("blob", "checkerboard", "gradient", "stripes")
NOISE_SIGMA = 0.05


@dataclass
class Dataset:
    samples: list  # of (image: Tensor [C,H,W], label: int)
    class_names: list

    def __post_init__(self):
        for img, label in self.samples:
            if not 0 <= label < len(self.class_names):
                raise ValueError(f"label {label} out of range")
        shapes = {img.shape for img, _ in self.samples}
        if len(shapes) > 1:
            raise ValueError(f"images must share one shape, got {shapes}")

    def __len__(self):
        return len(self.samples)

    @property
    def image_shape(self):
        return self.samples[0][0].shape

    def class_counts(self):
        counts = [0] * len(self.class_names)
        for _, label in self.samples:
            counts[label] += 1
        return counts

    def stacked(self):
        """(images [N,C,H,W], labels [N]) as plain arrays for the trainer."""
        imgs = np.stack([img.view() for img, _ in self.samples])
        labels = np.array([label for _, label in self.samples], dtype=np.int64)
        return imgs, labels


@dataclass
class FoldPlan:
    folds: list  # k lists of sample indices
    seed: int

    @property
    def k(self):
        return len(self.folds)

    def train_indices(self, fold):
        out = []
        for f, idxs in enumerate(self.folds):
            if f != fold:
                out.extend(idxs)
        return out


# ---------------------------------------------------------------------------
# synthetic data


def _texture(name, size, s):
    # phase jitter is kept small so every class stays linearly separable
    # from raw pixels (the regression baseline in the tests depends on it)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if name == "stripes":
        phase = s.uniform(low=-0.5, high=0.5)
        img = 0.5 + 0.5 * np.sin(2 * np.pi * (yy + phase) / 4.0)
    elif name == "checkerboard":
        px = s.uniform(low=-0.5, high=0.5)
        py = s.uniform(low=-0.5, high=0.5)
        img = 0.5 + 0.5 * np.sign(
            np.sin(2 * np.pi * (xx + px) / 4.0) * np.sin(2 * np.pi * (yy + py) / 4.0)
        )
    elif name == "blob":
        cx = size / 2 + s.uniform(low=-1.5, high=1.5)
        cy = size / 2 + s.uniform(low=-1.5, high=1.5)
        width = size * (0.15 + 0.1 * s.uniform())
        img = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * width**2))
    elif name == "gradient":
        offset = s.uniform(low=-0.15, high=0.15)
        img = (xx + yy) / (2 * (size - 1)) + offset
    else:
        raise ValueError(f"unknown texture {name!r}")
    contrast = 0.7 + 0.3 * s.uniform()
    img = 0.5 + contrast * (img - 0.5)
    img += s.normal(size=img.shape, sigma=NOISE_SIGMA)
    return np.clip(img, 0.0, 1.0)


def generate_synthetic(per_class=25, size=16, seed=0, classes=SYNTHETIC_CLASSES) -> Dataset:
    """Four procedural texture classes with per-sample jitter and noise.
    Pure function of (arguments, seed)."""
    if size < 8:
        raise ValueError(f"size must be >= 8, got {size}")
    samples = []
    for label, name in enumerate(classes):
        s = stream(seed, f"synthetic/{name}")
        for _ in range(per_class):
            img = _texture(name, size, s)
            samples.append((from_array(img[None]), label))
    return Dataset(samples, list(classes))


# ---------------------------------------------------------------------------
# portable pixmap IO (binary P5/P6 only)


def _read_pnm_header(buf, path):
    # magic, then 3 decimal fields (4 for us: width height maxval), with
    # '#' comments allowed between tokens
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] != b"\n":
                pos += 1
            continue
        m = re.match(rb"\d+", buf[pos:])
        if not m:
            raise ValueError(f"{path}: malformed pixmap header")
        fields.append(int(m.group()))
        pos += m.end()
    return fields[0], fields[1], fields[2], pos + 1  # single whitespace after maxval


def read_pnm(path) -> Tensor:
    """Decode a binary P5 (grayscale) or P6 (RGB) file to a [C,H,W] tensor
    scaled to [0, 1]."""
    buf = Path(path).read_bytes()
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: expected binary P5/P6, got {magic!r}")
    width, height, maxval, offset = _read_pnm_header(buf, path)
    if not 0 < maxval < 256:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    channels = 1 if magic == b"P5" else 3
    need = width * height * channels
    raster = buf[offset : offset + need]
    if len(raster) != need:
        raise ValueError(f"{path}: truncated raster ({len(raster)} of {need} bytes)")
    arr = np.frombuffer(raster, dtype=np.uint8).astype(np.float64) / maxval
    arr = arr.reshape(height, width, channels).transpose(2, 0, 1)
    return from_array(arr)


def write_pnm(path, image: Tensor, maxval=255):
    """Quantize a [C,H,W] tensor in [0,1] to binary P5 (1 channel) or
    P6 (3 channels)."""
    arr = image.view()
    c, h, w = arr.shape
    if c == 1:
        magic = b"P5"
    elif c == 3:
        magic = b"P6"
    else:
        raise ValueError(f"can only write 1- or 3-channel images, got {c}")
    raster = np.rint(np.clip(arr, 0, 1) * maxval).astype(np.uint8)
    raster = raster.transpose(1, 2, 0)
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n%d\n" % (w, h, maxval))
        f.write(raster.tobytes())


def load_image_dir(root) -> Dataset:
    """One subdirectory per class, holding *.pgm / *.ppm files. Class order
    and sample order are lexicographic, independent of filesystem order."""
    root = Path(root)
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise ValueError(f"{root}: no class subdirectories")
    samples = []
    class_names = []
    shape = None
    for label, d in enumerate(class_dirs):
        class_names.append(d.name)
        files = sorted(p for p in d.iterdir() if p.suffix in (".pgm", ".ppm"))
        if not files:
            raise ValueError(f"{d}: empty class directory")
        for p in files:
            img = read_pnm(p)
            if shape is None:
                shape = img.shape
            elif img.shape != shape:
                raise ValueError(f"{p}: image shape {img.shape} != expected {shape}")
            samples.append((img, label))
    return Dataset(samples, class_names)


# ---------------------------------------------------------------------------
# folds


def make_folds(dataset: Dataset, k=5, seed=0) -> FoldPlan:
    """Stratified k-fold: per-class shuffle, then round-robin so fold sizes
    per class differ by at most one (extras land in the lowest folds)."""
    by_class = {}
    for idx, (_, label) in enumerate(dataset.samples):
        by_class.setdefault(label, []).append(idx)
    folds = [[] for _ in range(k)]
    for label in sorted(by_class):
        idxs = by_class[label]
        if len(idxs) < k:
            raise ValueError(
                f"class {dataset.class_names[label]!r} has {len(idxs)} samples, needs >= {k}"
            )
        perm = stream(seed, f"folds/class{label}").permutation(len(idxs))
        for t, p in enumerate(perm):
            folds[t % k].append(idxs[p])
    return FoldPlan([sorted(f) for f in folds], seed)


def write_fold_plan(path, plan: FoldPlan):
    with open(path, "w") as f:
        f.write(f"# seed = {plan.seed}\n")
        for i, fold in enumerate(plan.folds):
            f.write(f"fold {i}: " + " ".join(str(j) for j in fold) + "\n")
