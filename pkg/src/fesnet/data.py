"""Dataset ingestion, preprocessing, and augmentation for fundus images.

On-disk layout (documented in the README, one directory per dataset):

    <root>/images/*.png      3-channel fundus photographs
    <root>/masks/*.png       binary vessel annotations, paired by stem
    <root>/roi/*.png         optional field-of-view masks, paired by stem

Only PNG and binary PPM/PGM files are accepted; the datasets' native
formats are converted once, up front. Pairing is lexicographic by stem.

Preprocessing follows a fixed order: resize to a standard width of 640
(bilinear for the image, nearest-neighbor for masks), z-score normalize
the image, then zero-pad bottom/right to multiples of 16. Padding and
rotation fill are excluded from loss and metrics through the sample's
region-of-interest mask, which starts as the field-of-view mask (or all
ones) and is carried through every geometric transform.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

SUPPORTED_EXTENSIONS = {".png", ".ppm", ".pgm"}
MASK_THRESHOLD = 127
ZSCORE_MIN_STD = 1e-6

DATASET_KINDS = ("drive", "stare", "chase", "hrf")

# (total, train, test) image counts per dataset; None disables the total check.
DATASET_COUNTS = {
    "drive": (40, 20, 20),
    "stare": (20, 10, 10),
    "chase": (28, 20, 8),
    "hrf": (45, 30, 15),
}


class DatasetError(ValueError):
    pass


@dataclass
class Sample:
    """One image/mask pair moving through the pipeline."""

    image: np.ndarray              # (3, H, W) float32; 0-255 at load, z-scored later
    mask: np.ndarray               # (H, W) uint8, {0, 1}
    roi: np.ndarray | None         # (H, W) uint8, {0, 1}; evaluation/loss region
    id: str
    split: str                     # "train" | "test"
    orig_hw: tuple | None = None   # extents at load time
    content_hw: tuple | None = None  # extents before zero-padding


@dataclass
class DatasetSpec:
    kind: str
    root: Path
    mask_dir: str = "masks"
    roi_dir: str = "roi"

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in DATASET_KINDS:
            raise DatasetError(f"unknown dataset kind {self.kind!r}, expected one of {DATASET_KINDS}")
        self.root = Path(self.root)


@dataclass
class AugmentConfig:
    contrast_range: tuple = (0.8, 1.2)
    brightness_range: tuple = (-0.2, 0.2)   # additive, in z-score units
    flip_prob: float = 0.5
    rotation_range: tuple = (1.0, 360.0)


# -- image file IO -------------------------------------------------------------


def read_image(path) -> np.ndarray:
    """Read a 3-channel image as (3, H, W) float32 in 0..255."""
    path = Path(path)
    if path.suffix.lower() not in SUPPORTED_EXTENSIONS:
        raise DatasetError(f"{path}: unsupported format {path.suffix!r} "
                           f"(supported: {sorted(SUPPORTED_EXTENSIONS)})")
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def read_binary_mask(path) -> np.ndarray:
    """Read a mask as (H, W) uint8 {0,1}; values above 127 count as foreground."""
    path = Path(path)
    if path.suffix.lower() not in SUPPORTED_EXTENSIONS:
        raise DatasetError(f"{path}: unsupported format {path.suffix!r}")
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    binary = (arr > MASK_THRESHOLD).astype(np.uint8)
    if not np.isin(binary, (0, 1)).all():
        raise DatasetError(f"{path}: mask is not binary after thresholding")
    return binary


def write_png(array: np.ndarray, path) -> None:
    """Write (H, W) grayscale or (H, W, 3) RGB uint8 data as PNG."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(path)


# -- dataset loading -----------------------------------------------------------


def _stems(directory: Path) -> dict[str, Path]:
    found = {}
    for p in sorted(directory.iterdir()):
        if p.suffix.lower() in SUPPORTED_EXTENSIONS:
            if p.stem in found:
                raise DatasetError(f"{directory}: duplicate stem {p.stem!r} "
                                   f"({found[p.stem].name} and {p.name})")
            found[p.stem] = p
    return found


def _assign_splits(kind: str, stems: list[str]) -> dict[str, str]:
    n = len(stems)
    if kind == "drive":
        # Native DRIVE stems carry "training"/"test"; honor them when present,
        # otherwise the first 20 (lexicographic) train.
        if all(("train" in s.lower()) or ("test" in s.lower()) for s in stems):
            return {s: ("train" if "train" in s.lower() else "test") for s in stems}
        return {s: ("train" if i < 20 else "test") for i, s in enumerate(stems)}
    if kind == "stare":
        return {s: ("train" if i < 10 else "test") for i, s in enumerate(stems)}
    if kind == "chase":
        return {s: ("train" if i < 20 else "test") for i, s in enumerate(stems)}
    # HRF: three 15-image categories (healthy / glaucoma / diabetic retinopathy)
    # tagged by stem suffix; the first 10 of each train.
    groups: dict[str, list[str]] = {}
    for s in stems:
        tag = s.rsplit("_", 1)[-1].lower()
        if tag not in ("h", "g", "dr"):
            raise DatasetError(
                f"hrf stem {s!r} has no category suffix (_h, _g, or _dr); "
                "rename during conversion"
            )
        groups.setdefault(tag, []).append(s)
    splits = {}
    for members in groups.values():
        for i, s in enumerate(members):
            splits[s] = "train" if i < 10 else "test"
    return splits


def load_dataset(spec: DatasetSpec, validate_counts: bool = True) -> list[Sample]:
    """Load every image/mask pair under ``spec.root`` with splits assigned."""
    images_dir = spec.root / "images"
    masks_dir = spec.root / spec.mask_dir
    roi_dir = spec.root / spec.roi_dir
    if not images_dir.is_dir():
        raise DatasetError(f"{spec.root}: missing images/ directory")
    if not masks_dir.is_dir():
        raise DatasetError(f"{spec.root}: missing {spec.mask_dir}/ directory")

    image_files = _stems(images_dir)
    mask_files = _stems(masks_dir)
    roi_files = _stems(roi_dir) if roi_dir.is_dir() else {}

    if not image_files:
        raise DatasetError(f"{images_dir}: no supported image files found")
    missing = sorted(set(image_files) - set(mask_files))
    if missing:
        raise DatasetError(f"{spec.root}: image {missing[0]!r} has no mask")
    orphans = sorted(set(mask_files) - set(image_files))
    if orphans:
        raise DatasetError(f"{spec.root}: mask {orphans[0]!r} has no image")

    stems = sorted(image_files)
    splits = _assign_splits(spec.kind, stems)

    samples = []
    for stem in stems:
        image = read_image(image_files[stem])
        mask = read_binary_mask(mask_files[stem])
        if mask.shape != image.shape[1:]:
            raise DatasetError(
                f"{spec.root}: {stem!r} image is {image.shape[1:]}, mask is {mask.shape}"
            )
        roi = None
        if stem in roi_files:
            roi = read_binary_mask(roi_files[stem])
            if roi.shape != mask.shape:
                raise DatasetError(
                    f"{spec.root}: {stem!r} roi is {roi.shape}, expected {mask.shape}"
                )
        samples.append(Sample(image=image, mask=mask, roi=roi, id=stem,
                              split=splits[stem], orig_hw=mask.shape))

    if validate_counts:
        total, n_train, n_test = DATASET_COUNTS[spec.kind]
        got_train = sum(1 for s in samples if s.split == "train")
        got_test = len(samples) - got_train
        if len(samples) != total or got_train != n_train or got_test != n_test:
            raise DatasetError(
                f"{spec.root}: {spec.kind} must have {n_train} train / {n_test} test images, "
                f"found {got_train}/{got_test}"
            )
    return samples


# -- preprocessing -------------------------------------------------------------


def resize_image_bilinear(image: np.ndarray, th: int, tw: int) -> np.ndarray:
    """Resize a (C, H, W) image to (C, th, tw) with bilinear sampling."""
    h, w = image.shape[1:]
    zoom = (th / h, tw / w)
    out = np.stack([
        ndimage.zoom(ch, zoom, order=1, mode="grid-constant", grid_mode=True)
        for ch in image
    ])
    return out.astype(image.dtype)


def resize_mask_nearest(mask: np.ndarray, th: int, tw: int) -> np.ndarray:
    """Resize an (H, W) mask with nearest-neighbor; the value set is preserved."""
    h, w = mask.shape
    return ndimage.zoom(mask, (th / h, tw / w), order=0, mode="grid-constant", grid_mode=True)


def _resize_to_width(sample: Sample, target_width: int) -> Sample:
    h, w = sample.mask.shape
    if w == target_width:
        return sample
    th = int(round(h * target_width / w))
    image = resize_image_bilinear(sample.image, th, target_width)
    mask = resize_mask_nearest(sample.mask, th, target_width)
    roi = None if sample.roi is None else resize_mask_nearest(sample.roi, th, target_width)
    return replace(sample, image=image, mask=mask, roi=roi)


def _pad_to_multiple(sample: Sample, multiple: int) -> Sample:
    h, w = sample.mask.shape
    ph = (-h) % multiple
    pw = (-w) % multiple
    roi = sample.roi if sample.roi is not None else np.ones((h, w), dtype=np.uint8)
    if ph == 0 and pw == 0:
        return replace(sample, roi=roi, content_hw=(h, w))
    image = np.pad(sample.image, ((0, 0), (0, ph), (0, pw)))
    mask = np.pad(sample.mask, ((0, ph), (0, pw)))
    roi = np.pad(roi, ((0, ph), (0, pw)))
    return replace(sample, image=image, mask=mask, roi=roi, content_hw=(h, w))


def resize_and_pad(sample: Sample, target_width: int = 640, multiple: int = 16) -> Sample:
    """Scale to the target width (aspect preserved) and zero-pad bottom/right
    so both extents are multiples of ``multiple``. The pre-pad extent is
    recorded in ``content_hw`` and the pad region is zeroed in the roi."""
    return _pad_to_multiple(_resize_to_width(sample, target_width), multiple)


def zscore_normalize(image: np.ndarray, per_channel: bool = False) -> np.ndarray:
    """Center to mean 0 and scale to unit standard deviation.

    Statistics are taken over all channels jointly unless ``per_channel``.
    The standard deviation is clamped below at 1e-6, so a constant image
    maps to all zeros.
    """
    image = np.asarray(image, dtype=np.float32)
    axes = (1, 2) if per_channel else None
    mean = image.mean(axis=axes, keepdims=per_channel)
    std = np.maximum(image.std(axis=axes, keepdims=per_channel), ZSCORE_MIN_STD)
    return (image - mean) / std


def prepare_sample(sample: Sample, target_width: int = 640, multiple: int = 16,
                   per_channel: bool = False) -> Sample:
    """Resize, z-score, then pad: the standard inference-time preprocessing."""
    resized = _resize_to_width(sample, target_width)
    resized = replace(resized, image=zscore_normalize(resized.image, per_channel))
    return _pad_to_multiple(resized, multiple)


# -- augmentation --------------------------------------------------------------


def flip_sample(sample: Sample, horizontal: bool) -> Sample:
    axis = -1 if horizontal else -2
    return replace(
        sample,
        image=np.flip(sample.image, axis=axis).copy(),
        mask=np.flip(sample.mask, axis=axis).copy(),
        roi=None if sample.roi is None else np.flip(sample.roi, axis=axis).copy(),
    )


def rotate_sample(sample: Sample, angle_degrees: float) -> Sample:
    """Rotate about the image center; bilinear for the image, nearest for
    masks, zero fill outside. Fill pixels leave the roi."""
    def rot(arr2d, order):
        return ndimage.rotate(arr2d, angle_degrees, reshape=False, order=order,
                              mode="constant", cval=0.0, prefilter=False)

    image = np.stack([rot(ch, 1) for ch in sample.image]).astype(sample.image.dtype)
    mask = rot(sample.mask, 0)
    roi = sample.roi if sample.roi is not None else np.ones_like(sample.mask)
    roi = rot(roi, 0)
    return replace(sample, image=image, mask=mask, roi=roi)


def augment(sample: Sample, config: AugmentConfig, rng: np.random.Generator) -> Sample:
    """Random flips, rotation, contrast, and brightness for training samples.

    Geometric transforms are applied identically to image, mask, and roi;
    photometric ones touch the image only. Exactly five draws are taken per
    call regardless of which flips fire, so the rng stream stays aligned.
    """
    u_h, u_v = rng.random(2)
    angle = rng.uniform(*config.rotation_range)
    contrast = rng.uniform(*config.contrast_range)
    brightness = rng.uniform(*config.brightness_range)
    out = sample
    if u_h < config.flip_prob:
        out = flip_sample(out, horizontal=True)
    if u_v < config.flip_prob:
        out = flip_sample(out, horizontal=False)
    out = rotate_sample(out, angle)
    image = (out.image * contrast + brightness).astype(np.float32)
    return replace(out, image=image)


def random_crop(sample: Sample, size: int, rng: np.random.Generator) -> Sample:
    """Aligned crop of image/mask/roi with rng-chosen origin."""
    h, w = sample.mask.shape
    if h < size or w < size:
        raise ValueError(f"sample extent {h}x{w} is smaller than crop size {size}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return replace(
        sample,
        image=sample.image[:, top:top + size, left:left + size].copy(),
        mask=sample.mask[top:top + size, left:left + size].copy(),
        roi=None if sample.roi is None
        else sample.roi[top:top + size, left:left + size].copy(),
    )


def sample_rng(seed: int, epoch: int, sample_id: str) -> np.random.Generator:
    """Per-(seed, epoch, sample) stream, stable across platforms, so samples
    can be augmented concurrently without changing results."""
    tag = zlib.crc32(sample_id.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, epoch, tag))))
