import numpy as np
import pytest

from fesnet.data import write_png
from fesnet.model import ArchConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Small widths keep unit tests fast; the reference ArchConfig is exercised
# where the parameter budget or the full network is the point.
TINY_ARCH = ArchConfig(pcb_channels=(4, 8, 8, 8), head_channels=(8, 16),
                       feb_channels=(4, 8, 8, 16), fuse_channels=8)


def _vessel_mask(size: int, seed: int) -> np.ndarray:
    """A synthetic vessel-ish pattern: a sine band plus a ring."""
    r = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    band = np.abs(yy - (size / 2 + (size / 6) * np.sin(2 * np.pi * xx / size
                                                       + r.uniform(0, 6))))
    ring = np.abs(np.hypot(yy - size / 2, xx - size / 2) - size / 3)
    mask = (band < size / 16) | (ring < size / 24)
    return mask.astype(np.uint8)


def synth_image(size: int, mask: np.ndarray, seed: int) -> np.ndarray:
    """uint8 RGB image whose bright structures follow the mask."""
    r = np.random.default_rng(seed)
    base = r.normal(100, 12, size=(size, size, 3))
    base += mask[:, :, None] * 90.0
    return np.clip(base, 0, 255).astype(np.uint8)


DATASET_STEMS = {
    "drive": [f"{i:02d}_test" for i in range(1, 21)]
    + [f"{i:02d}_training" for i in range(21, 41)],
    "stare": [f"im{i:04d}" for i in range(1, 21)],
    "chase": [f"image_{i:02d}" for i in range(1, 29)],
    "hrf": [f"{i:02d}_{tag}" for tag in ("dr", "g", "h") for i in range(1, 16)],
}


def make_dataset_tree(root, kind: str, size: int = 24, with_roi: bool = False,
                      stems=None):
    """Write a miniature dataset in the documented on-disk layout."""
    stems = DATASET_STEMS[kind] if stems is None else stems
    (root / "images").mkdir(parents=True)
    (root / "masks").mkdir()
    if with_roi:
        (root / "roi").mkdir()
    for i, stem in enumerate(stems):
        mask = _vessel_mask(size, seed=i)
        write_png(synth_image(size, mask, seed=100 + i), root / "images" / f"{stem}.png")
        write_png(mask * 255, root / "masks" / f"{stem}.png")
        if with_roi:
            roi = np.zeros((size, size), np.uint8)
            roi[1:-1, 1:-1] = 1
            write_png(roi * 255, root / "roi" / f"{stem}.png")
    return root


@pytest.fixture
def drive_tree(tmp_path):
    return make_dataset_tree(tmp_path / "drive", "drive", size=24)
