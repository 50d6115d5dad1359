"""Synthetic labeled vehicle-like images made of Gaussian blobs.

Each class is a fixed blob layout along a horizontal footprint; samples are
the class template shifted by a random sub-pixel offset plus half-normal
noise. All classes carry the same template mass so they differ only in how
the mass is arranged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mkflow.classify import LabeledDataset, write_labels
from mkflow.errors import InvalidArgument
from mkflow.imaging import GrayImage, save_pgm, to_distribution

# blob centres as (x, y) fractions of the image, one layout per class
_LAYOUTS = (
    ((0.33, 0.5), (0.67, 0.5)),
    ((0.25, 0.5), (0.5, 0.5), (0.75, 0.5)),
    ((0.3, 0.35), (0.3, 0.65), (0.7, 0.35), (0.7, 0.65)),
)
_BLOB_SIGMA = 0.03  # fraction of the smaller image side; point-like scatterers
_TEMPLATE_MASS = 0.009  # template mass per image pixel; keeps blob peaks below 1


@dataclass(frozen=True)
class SynthSpec:
    classes: int = 3
    per_class: int = 60
    width: int = 29
    height: int = 24
    jitter_px: float = 2.0
    noise_sigma: float = 0.05
    blob_counts: tuple[int, ...] = field(default=())
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise InvalidArgument("need at least 2 classes")
        if self.per_class < 1:
            raise InvalidArgument("per_class must be positive")
        if self.width < 1 or self.height < 1:
            raise InvalidArgument("image dimensions must be positive")
        if not (0 <= self.jitter_px < min(self.width, self.height) / 4):
            raise InvalidArgument(
                f"jitter_px must lie in [0, {min(self.width, self.height) / 4}), got {self.jitter_px}"
            )
        if self.noise_sigma < 0:
            raise InvalidArgument("noise_sigma must be nonnegative")
        counts = self.blob_counts or tuple(2 + (k % 3) for k in range(self.classes))
        if len(counts) != self.classes or any(b < 1 for b in counts):
            raise InvalidArgument("blob_counts needs one positive entry per class")
        object.__setattr__(self, "blob_counts", tuple(int(b) for b in counts))

    def class_name(self, k: int) -> str:
        return f"class{k}"


def _layout(k: int, blobs: int) -> list[tuple[float, float]]:
    """Blob centres for class ``k``; classes without a built-in layout get a row of blobs."""
    if k < len(_LAYOUTS) and len(_LAYOUTS[k]) == blobs:
        return list(_LAYOUTS[k])
    # golden-ratio offsets keep the rows of different classes apart
    ys = 0.3 + 0.4 * ((k * 0.618034) % 1.0)
    return [((b + 1) / (blobs + 1), ys) for b in range(blobs)]


def render_template(spec: SynthSpec, k: int, shift: tuple[float, float] = (0.0, 0.0)) -> np.ndarray:
    """Noise-free class ``k`` image, blob centres moved by ``shift`` = (dx, dy) pixels."""
    h, w = spec.height, spec.width
    centres = _layout(k, spec.blob_counts[k])
    sigma = _BLOB_SIGMA * min(w, h)
    amplitude = _TEMPLATE_MASS * w * h / (len(centres) * 2 * np.pi * sigma**2)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros((h, w))
    for fx, fy in centres:
        cx = fx * (w - 1) + shift[0]
        cy = fy * (h - 1) + shift[1]
        img += amplitude * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma**2))
    return img


def sample_image(spec: SynthSpec, k: int, index: int) -> np.ndarray:
    """Sample ``index`` of class ``k``; depends only on (seed, k, index)."""
    rng = np.random.default_rng([spec.seed, k, index])
    shift = rng.uniform(-spec.jitter_px, spec.jitter_px, size=2)
    img = render_template(spec, k, (shift[0], shift[1]))
    if spec.noise_sigma > 0:
        img = img + np.abs(rng.normal(0.0, spec.noise_sigma, size=img.shape))
    return np.clip(img, 0.0, 1.0)


def generate(spec: SynthSpec, out_dir: str | Path | None = None) -> LabeledDataset:
    """Build the dataset; with ``out_dir`` also write ``<class>_<index>.pgm`` files and labels.csv."""
    ids, images, labels = [], [], []
    for k in range(spec.classes):
        for index in range(spec.per_class):
            ids.append(f"{spec.class_name(k)}_{index:03d}")
            # 8-bit rounding up front so the in-memory dataset matches its PGM files
            images.append(GrayImage.from_array(sample_image(spec, k, index)).quantized())
            labels.append(spec.class_name(k))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for item_id, img in zip(ids, images):
            save_pgm(img, out / f"{item_id}.pgm")
        write_labels(out / "labels.csv", ids, labels)
    items = [to_distribution(img) for img in images]
    return LabeledDataset(ids, items, labels)
