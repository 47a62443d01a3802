"""Image I/O, dataset manifests, splits, rotation, augmentation.

Images are single-channel uint8, stored on disk as binary PGM (P5,
maxval 255). A manifest is a text listing of relative image paths and
class labels; paths are relative to the manifest's directory.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .rng import substream

# ImageNet per-channel constants collapsed to one grayscale channel.
GRAY_MEAN = 0.449
GRAY_STD = 0.226


@dataclass
class Image:
    """Grayscale uint8 image; pixels shaped (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 2 or self.pixels.size == 0:
            raise DataError(f"image pixels must be a non-empty 2-D array, got shape {self.pixels.shape}")

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    def __eq__(self, other):
        return isinstance(other, Image) and np.array_equal(self.pixels, other.pixels)


# ---------------------------------------------------------------------------
# PGM (binary P5, maxval 255)
# ---------------------------------------------------------------------------


def pgm_write(image: Image, path):
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(image.pixels.tobytes())


def pgm_read(path) -> Image:
    with open(path, "rb") as f:
        data = f.read()

    # header = magic, width, height, maxval as whitespace-separated tokens;
    # '#' starts a comment running to end of line
    tokens = []
    off = 0
    while len(tokens) < 4:
        if off >= len(data):
            raise DataError(f"{path}: truncated PGM header at offset {off}")
        c = data[off : off + 1]
        if c.isspace():
            off += 1
            continue
        if c == b"#":
            nl = data.find(b"\n", off)
            if nl < 0:
                raise DataError(f"{path}: unterminated comment at offset {off}")
            off = nl + 1
            continue
        start = off
        while off < len(data) and not data[off : off + 1].isspace():
            off += 1
        tokens.append(data[start:off])

    if tokens[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM (magic {tokens[0]!r} at offset 0)")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise DataError(f"{path}: non-numeric PGM header field")
    if maxval != 255:
        raise DataError(f"{path}: maxval must be 255, got {maxval}")
    if width < 1 or height < 1:
        raise DataError(f"{path}: bad dimensions {width}x{height}")

    off += 1  # single whitespace byte after maxval
    need = width * height
    payload = data[off : off + need]
    if len(payload) < need:
        raise DataError(
            f"{path}: short pixel payload at offset {off}: need {need} bytes, have {len(payload)}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return Image(pixels.copy())


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


@dataclass
class Manifest:
    """Ordered (relative path, class label) pairs plus the sorted class set."""

    entries: list = field(default_factory=list)  # [(path, label)]
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        if not self.class_names and self.entries:
            self.class_names = sorted({label for _, label in self.entries})
        for path, label in self.entries:
            if label not in self.class_names:
                raise DataError(f"label {label!r} not in class set {self.class_names}")
        paths = [p for p, _ in self.entries]
        if len(set(paths)) != len(paths):
            raise DataError("duplicate paths in manifest")

    def __len__(self):
        return len(self.entries)

    def class_index(self, label):
        return self.class_names.index(label)

    def labels_as_indices(self):
        lut = {name: i for i, name in enumerate(self.class_names)}
        return np.array([lut[label] for _, label in self.entries], dtype=np.int64)

    def subset(self, indices):
        return Manifest([self.entries[i] for i in indices], list(self.class_names))


def manifest_write(manifest: Manifest, path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("#classes:\t" + ",".join(manifest.class_names) + "\n")
        for p, label in manifest.entries:
            f.write(f"{p}\t{label}\n")


def manifest_read(path) -> Manifest:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].startswith("#classes:\t"):
        raise DataError(f"{path}: missing '#classes:' header line")
    class_names = lines[0].split("\t", 1)[1].split(",")
    entries = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        if "\t" not in line:
            raise DataError(f"{path}:{ln}: expected 'path<TAB>class'")
        p, label = line.split("\t", 1)
        entries.append((p, label))
    return Manifest(entries, class_names)


def ingest_directory(root) -> Manifest:
    """One subdirectory per class; entries sorted by (class, filename)."""
    classes = sorted(
        d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d))
    )
    if not classes:
        raise DataError(f"{root}: no class subdirectories found")
    entries = []
    for cls in classes:
        files = sorted(
            f for f in os.listdir(os.path.join(root, cls))
            if os.path.isfile(os.path.join(root, cls, f))
        )
        if not files:
            raise DataError(f"{root}: class directory {cls!r} is empty")
        entries.extend((f"{cls}/{f}", cls) for f in files)
    return Manifest(entries, classes)


def split_manifest(manifest: Manifest, fractions=(0.70, 0.10, 0.20), seed=0, out_dir=None):
    """Stratified train/validation/test split; floor counts, remainder to train.

    If out_dir is given, writes train.txt / val.txt / test.txt there.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {fractions}")
    if len(manifest) == 0:
        raise ConfigError("cannot split an empty manifest")
    rng = substream(seed, "split")
    buckets = ([], [], [])
    for cls in manifest.class_names:
        idx = [i for i, (_, label) in enumerate(manifest.entries) if label == cls]
        perm = rng.permutation(len(idx))
        idx = [idx[j] for j in perm]
        n = len(idx)
        n_val = int(math.floor(fractions[1] * n))
        n_test = int(math.floor(fractions[2] * n))
        n_train = n - n_val - n_test
        buckets[0].extend(idx[:n_train])
        buckets[1].extend(idx[n_train : n_train + n_val])
        buckets[2].extend(idx[n_train + n_val :])
    splits = tuple(manifest.subset(b) for b in buckets)
    if out_dir is not None:
        for name, m in zip(("train.txt", "val.txt", "test.txt"), splits):
            manifest_write(m, os.path.join(out_dir, name))
    return splits


# ---------------------------------------------------------------------------
# Rotation / rotated-dataset generator
# ---------------------------------------------------------------------------


def rotate90(image: Image, direction) -> Image:
    """90-degree rotation: 'left' = counter-clockwise, 'right' = clockwise."""
    if direction == "left":
        return Image(np.rot90(image.pixels, 1).copy())
    if direction == "right":
        return Image(np.rot90(image.pixels, -1).copy())
    raise ConfigError(f"direction must be 'left' or 'right', got {direction!r}")


ROTATED_CLASSES = ("original", "rot_left", "rot_right")


def build_rotated_dataset(source_manifest: Manifest, source_root, out_root, seed=0) -> Manifest:
    """Assign each source image uniformly to {original, rot_left, rot_right},
    rotate accordingly, and write the result under out_root/<class>/."""
    rng = substream(seed, "rotated")
    for cls in ROTATED_CLASSES:
        os.makedirs(os.path.join(out_root, cls), exist_ok=True)
    entries = []
    assignment = rng.integers(0, 3, size=len(source_manifest))
    for (rel, _), which in zip(source_manifest.entries, assignment):
        try:
            img = pgm_read(os.path.join(source_root, rel))
        except OSError as e:
            raise DataError(f"cannot read {rel}: {e}")
        cls = ROTATED_CLASSES[which]
        if cls == "rot_left":
            img = rotate90(img, "left")
        elif cls == "rot_right":
            img = rotate90(img, "right")
        fname = rel.replace("/", "__")
        out_rel = f"{cls}/{fname}"
        try:
            pgm_write(img, os.path.join(out_root, out_rel))
        except OSError as e:
            raise DataError(f"cannot write {out_rel}: {e}")
        entries.append((out_rel, cls))
    manifest = Manifest(entries, list(ROTATED_CLASSES))
    manifest_write(manifest, os.path.join(out_root, "manifest.txt"))
    return manifest


# ---------------------------------------------------------------------------
# Augmentation and normalization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentConfig:
    hflip_probability: float = 0.5
    rotation_degrees: float = 5.0
    translate_fraction: float = 0.05
    jitter_fraction: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.hflip_probability <= 1.0:
            raise ConfigError("hflip_probability must be in [0,1]")
        if self.rotation_degrees < 0 or self.translate_fraction < 0 or self.jitter_fraction < 0:
            raise ConfigError("augmentation magnitudes must be >= 0")


AUGMENT_OFF = AugmentConfig(0.0, 0.0, 0.0, 0.0)


def _rotate_small(pixels, angle_deg):
    # inverse-map nearest-neighbor rotation about the image center; fill 0
    h, w = pixels.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    yy, xx = np.mgrid[0:h, 0:w]
    dy, dx = yy - cy, xx - cx
    src_y = np.rint(cy + cos_t * dy + sin_t * dx).astype(np.int64)
    src_x = np.rint(cx - sin_t * dy + cos_t * dx).astype(np.int64)
    valid = (src_y >= 0) & (src_y < h) & (src_x >= 0) & (src_x < w)
    out = np.zeros_like(pixels)
    out[valid] = pixels[src_y[valid], src_x[valid]]
    return out


def _translate(pixels, dy, dx):
    h, w = pixels.shape
    out = np.zeros_like(pixels)
    ys = slice(max(dy, 0), min(h + dy, h))
    xs = slice(max(dx, 0), min(w + dx, w))
    ys_src = slice(max(-dy, 0), min(h - dy, h))
    xs_src = slice(max(-dx, 0), min(w - dx, w))
    out[ys, xs] = pixels[ys_src, xs_src]
    return out


def augment(image: Image, config: AugmentConfig, rng) -> Image:
    """Random hflip, small rotation, integer translation, brightness jitter.

    Shape-preserving; output stays in [0,255]; the all-off config is the
    identity. Draw order is fixed so substreams replay exactly.
    """
    px = image.pixels
    if config.hflip_probability > 0 and rng.random() < config.hflip_probability:
        px = px[:, ::-1]
    if config.rotation_degrees > 0:
        angle = rng.uniform(-config.rotation_degrees, config.rotation_degrees)
        px = _rotate_small(px, angle)
    if config.translate_fraction > 0:
        h, w = px.shape
        dy = int(round(rng.uniform(-config.translate_fraction, config.translate_fraction) * h))
        dx = int(round(rng.uniform(-config.translate_fraction, config.translate_fraction) * w))
        if dy or dx:
            px = _translate(px, dy, dx)
    if config.jitter_fraction > 0:
        factor = rng.uniform(1.0 - config.jitter_fraction, 1.0 + config.jitter_fraction)
        px = np.clip(np.rint(px.astype(np.float64) * factor), 0, 255).astype(np.uint8)
    return Image(np.ascontiguousarray(px))


@dataclass(frozen=True)
class NormalizationSpec:
    mean: float = GRAY_MEAN
    std: float = GRAY_STD

    def __post_init__(self):
        if self.std <= 0:
            raise ConfigError("normalization std must be > 0")


def normalize(image: Image, spec: NormalizationSpec = NormalizationSpec(), dtype=np.float32):
    """(pixel/255 - mean)/std, shaped [1, H, W]."""
    t = (image.pixels.astype(np.float64) / 255.0 - spec.mean) / spec.std
    return t[None, :, :].astype(dtype)


# ---------------------------------------------------------------------------
# Synthetic dataset generator
# ---------------------------------------------------------------------------


def synthetic_pattern(class_index, num_classes, height, width):
    """Deterministic class-distinctive base image.

    An oriented sinusoidal grating (orientation varies with class) plus a
    bright corner block so 90-degree rotations stay distinguishable.
    """
    theta = math.pi * class_index / num_classes
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    phase = 2.0 * math.pi * 3.0 * (xx * math.cos(theta) + yy * math.sin(theta)) / width
    base = 110.0 + 70.0 * np.sin(phase)
    bh, bw = max(2, height // 4), max(2, width // 4)
    base[:bh, :bw] = 250.0
    return np.clip(np.rint(base), 0, 255).astype(np.uint8)


def gen_synthetic(num_classes, per_class, size, noise_level, seed, out_root) -> Manifest:
    """Write a balanced PGM dataset of seeded noisy class patterns."""
    if num_classes < 2:
        raise ConfigError("need at least 2 classes")
    if per_class < 1:
        raise ConfigError("need at least 1 image per class")
    h, w = size if isinstance(size, tuple) else (size, size)
    width_digits = len(str(num_classes - 1))
    entries = []
    class_names = [f"c{k:0{width_digits}d}" for k in range(num_classes)]
    for k, cls in enumerate(class_names):
        os.makedirs(os.path.join(out_root, cls), exist_ok=True)
        base = synthetic_pattern(k, num_classes, h, w).astype(np.float64)
        for i in range(per_class):
            px = base
            if noise_level > 0:
                rng = substream(seed, "synth", k, i)
                px = base + rng.standard_normal((h, w)) * (noise_level * 255.0)
            img = Image(np.clip(np.rint(px), 0, 255).astype(np.uint8))
            rel = f"{cls}/img_{i:05d}.pgm"
            pgm_write(img, os.path.join(out_root, rel))
            entries.append((rel, cls))
    manifest = Manifest(entries, class_names)
    manifest_write(manifest, os.path.join(out_root, "manifest.txt"))
    return manifest
