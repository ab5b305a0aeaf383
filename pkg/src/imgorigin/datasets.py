"""Synthetic image datasets for desk-scale experiments.

Two base generators plus a mixture:

* ``gaussian-blobs``: one soft bright blob on a dim background, with
  randomized center, width, amplitude, background level and pixel noise.
* ``striped-patterns``: an oriented sinusoidal grating with randomized
  frequency, phase, contrast and orientation.
* ``mixed``: alternates the two generators image by image and scales
  each image's pattern contrast (and, proportionally, its pixel noise)
  by a random factor, giving a deliberately heterogeneous complexity
  profile: some images are crisp, some are dim and nearly flat.

When a class count is given, the class steers the dominant factor of
variation (blob position sector, stripe orientation sector), so classes
are visually distinct but overlapping. All pixels land in [0, 1] and are
stored as float32. Generation is a pure function of the spec: same spec,
same bytes; different seeds give disjoint draws.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import MissingArtifactError
from .tensorio import Rng, read_tensor, write_tensor

__all__ = [
    "Dataset",
    "DatasetSpec",
    "GENERATORS",
    "load_dataset",
    "make_overlapping",
    "save_dataset",
    "synth_dataset",
]

GENERATORS = ("gaussian-blobs", "striped-patterns", "mixed")

MANIFEST_NAME = "manifest.json"
IMAGES_NAME = "images.rntz"
LABELS_NAME = "labels.rntz"


@dataclass(frozen=True)
class DatasetSpec:
    generator: str
    count: int = 256
    image_shape: tuple = (1, 8, 8)
    num_classes: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(
                f"unknown generator {self.generator!r}, expected one of {GENERATORS}"
            )
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if len(self.image_shape) != 3:
            raise ValueError("image_shape must be (channels, height, width)")
        if self.num_classes is not None and self.num_classes < 2:
            raise ValueError("num_classes must be >= 2 when given")

    @property
    def dataset_id(self) -> str:
        c, h, w = self.image_shape
        cls = self.num_classes if self.num_classes is not None else 0
        return f"{self.generator}-{self.count}x{c}x{h}x{w}-c{cls}-s{self.seed}"


@dataclass
class Dataset:
    dataset_id: str
    images: np.ndarray  # (N, C, H, W) float32 in [0, 1]
    labels: np.ndarray | None  # (N,) int, or None
    meta: dict

    @property
    def count(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple:
        return tuple(self.images.shape[1:])


def _channelize(rng: Rng, base: np.ndarray, c: int, noise: float) -> np.ndarray:
    img = np.empty((c,) + base.shape)
    for ch in range(c):
        gain = rng.uniform(0.65, 1.0) if c > 1 else 1.0
        img[ch] = base * gain
    img += rng.normal(img.shape) * noise
    return np.clip(img, 0.0, 1.0)


def _blob_image(rng: Rng, shape, label, num_classes, scale: float = 1.0) -> np.ndarray:
    c, h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    if label is None:
        cy = rng.uniform(0.25, 0.75) * (h - 1)
        cx = rng.uniform(0.25, 0.75) * (w - 1)
    else:
        # class picks an angular sector around the image center
        angle = 2.0 * np.pi * (label + rng.uniform(0.1, 0.9)) / num_classes
        radius = rng.uniform(0.18, 0.34) * min(h, w)
        cy = (h - 1) / 2.0 + radius * np.sin(angle)
        cx = (w - 1) / 2.0 + radius * np.cos(angle)
    width = rng.uniform(1.1, 2.3)
    amplitude = rng.uniform(0.55, 0.95) * scale
    background = rng.uniform(0.02, 0.12)
    base = background + amplitude * np.exp(
        -((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * width**2)
    )
    return _channelize(rng, base, c, 0.01 * scale)


def _stripe_image(rng: Rng, shape, label, num_classes, scale: float = 1.0) -> np.ndarray:
    c, h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    if label is None:
        theta = rng.uniform(0.0, np.pi)
    else:
        theta = np.pi * (label + rng.uniform(0.15, 0.85)) / num_classes
    freq = rng.uniform(1.2, 3.2)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    contrast = rng.uniform(0.25, 0.45) * scale
    offset = rng.uniform(0.4, 0.6)
    t = (xx * np.cos(theta) + yy * np.sin(theta)) / max(h, w)
    base = offset + contrast * np.sin(2.0 * np.pi * freq * t + phase)
    return _channelize(rng, base, c, 0.01 * scale)


def synth_dataset(spec: DatasetSpec) -> Dataset:
    """Generate the dataset described by ``spec`` (pure, deterministic)."""
    rng = Rng(spec.seed)
    n = spec.count
    labels = None
    if spec.num_classes is not None:
        labels = rng.child(1).integers(0, spec.num_classes, n).astype(np.int64)
    images = np.empty((n,) + tuple(spec.image_shape), dtype=np.float32)
    for i in range(n):
        r = rng.child(2).child(i)
        label = None if labels is None else int(labels[i])
        if spec.generator == "gaussian-blobs":
            img = _blob_image(r, spec.image_shape, label, spec.num_classes)
        elif spec.generator == "striped-patterns":
            img = _stripe_image(r, spec.image_shape, label, spec.num_classes)
        else:
            scale = r.uniform(0.05, 1.0)
            img = (
                _blob_image(r, spec.image_shape, label, spec.num_classes, scale)
                if i % 2 == 0
                else _stripe_image(r, spec.image_shape, label, spec.num_classes, scale)
            )
        images[i] = img.astype(np.float32)
    meta = {
        "generator": spec.generator,
        "count": n,
        "image_shape": list(spec.image_shape),
        "num_classes": spec.num_classes,
        "seed": spec.seed,
    }
    return Dataset(spec.dataset_id, images, labels, meta)


def make_overlapping(base: Dataset, fraction: float, fresh_seed: int) -> Dataset:
    """A dataset sharing ``fraction`` of its images with ``base``.

    The first round(fraction * N) images are taken from ``base`` (a
    seeded random subset), the rest are freshly generated from the same
    spec under ``fresh_seed``. Total count matches ``base``.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction={fraction} outside [0, 1]")
    n = base.count
    n_shared = int(round(fraction * n))
    spec = DatasetSpec(
        generator=base.meta["generator"],
        count=n,
        image_shape=tuple(base.meta["image_shape"]),
        num_classes=base.meta["num_classes"],
        seed=fresh_seed,
    )
    fresh = synth_dataset(spec)
    pick = Rng(fresh_seed).child(3).permutation(n)[:n_shared]
    pick.sort()
    images = np.concatenate([base.images[pick], fresh.images[: n - n_shared]])
    labels = None
    if base.labels is not None:
        labels = np.concatenate([base.labels[pick], fresh.labels[: n - n_shared]])
    meta = dict(base.meta)
    meta.update(
        {
            "overlap_fraction": fraction,
            "overlap_base": base.dataset_id,
            "seed": fresh_seed,
        }
    )
    ds_id = f"{base.dataset_id}-ov{int(round(fraction * 100))}-s{fresh_seed}"
    return Dataset(ds_id, images, labels, meta)


def save_dataset(ds: Dataset, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"dataset_id": ds.dataset_id, "meta": ds.meta, "has_labels": ds.labels is not None}
    with open(directory / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_tensor(directory / IMAGES_NAME, ds.images)
    if ds.labels is not None:
        write_tensor(directory / LABELS_NAME, ds.labels.astype(np.float32))
    return directory


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.is_file():
        raise MissingArtifactError(f"dataset manifest not found: {manifest_path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    images = read_tensor(directory / IMAGES_NAME)
    labels = None
    if manifest.get("has_labels"):
        labels = read_tensor(directory / LABELS_NAME).astype(np.int64)
    return Dataset(manifest["dataset_id"], images, labels, manifest["meta"])
