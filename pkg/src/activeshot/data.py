"""Dataset ingestion: Omniglot-style image trees, caching, synthetic glyphs.

Images are grayscale 20x20 with ink as 1 and background as 0, values in
[0, 1]. Downscaling is plain area averaging so ingestion is deterministic
and free of resampling-filter ambiguity. Rotation augmentation (90, 180,
270 degrees) mints new classes that never share an id with their source.

The synthetic generator produces procedurally distinct glyph classes
(oriented bars, blob pairs, rings) for tests and desk-scale training runs
where the real dataset is unavailable.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .container import load_container, save_container
from .errors import DataError
from .seeding import derive_rng

IMAGE_SIDE = 20
OMNIGLOT_SAMPLES_PER_CLASS = 20
ROTATION_DEGREES = (90, 180, 270)
_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif"}


@dataclass
class Dataset:
    """Immutable-by-convention map of class id to (n, 20, 20) sample stack."""

    classes: dict[str, np.ndarray]
    split: str = "all"

    def __post_init__(self):
        for cid, stack in self.classes.items():
            if stack.ndim != 3 or stack.shape[1:] != (IMAGE_SIDE, IMAGE_SIDE):
                raise DataError(f"class {cid!r}: expected (n, 20, 20) images, got {stack.shape}")
            if stack.size and (stack.min() < 0.0 or stack.max() > 1.0):
                raise DataError(f"class {cid!r}: pixel values outside [0, 1]")

    def class_ids(self) -> list[str]:
        return sorted(self.classes)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def samples(self, class_id: str) -> np.ndarray:
        try:
            return self.classes[class_id]
        except KeyError:
            raise DataError(f"unknown class id {class_id!r}") from None


def _box_weights(src: int, dst: int) -> np.ndarray:
    """Fractional-overlap averaging weights, one row per output pixel."""
    w = np.zeros((dst, src), dtype=np.float64)
    step = src / dst
    for i in range(dst):
        lo, hi = i * step, (i + 1) * step
        for j in range(int(lo), min(src, int(np.ceil(hi)))):
            overlap = min(hi, j + 1.0) - max(lo, float(j))
            if overlap > 0:
                w[i, j] = overlap
    return w / step


def area_downscale(image: np.ndarray, side: int = IMAGE_SIDE) -> np.ndarray:
    """Downscale a 2-D image to side x side by exact area averaging."""
    rows = _box_weights(image.shape[0], side)
    cols = _box_weights(image.shape[1], side)
    return rows @ image.astype(np.float64) @ cols.T


def _load_image(path: Path) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as img:
            gray = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    except (OSError, UnidentifiedImageError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    small = area_downscale(gray)
    inked = 1.0 - small  # source images are dark strokes on light ground
    return np.clip(inked, 0.0, 1.0).astype(np.float32)


def load_omniglot(
    root: str | Path,
    rotations: bool = False,
    min_samples: int = OMNIGLOT_SAMPLES_PER_CLASS,
) -> Dataset:
    """Ingest an alphabet/character/sample image tree.

    Every character directory becomes one class; with ``rotations`` each
    class additionally yields three rotated classes. Traversal order is
    sorted, so repeated ingestion of the same tree is identical.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    classes: dict[str, np.ndarray] = {}
    for alphabet in sorted(p for p in root.iterdir() if p.is_dir()):
        for character in sorted(p for p in alphabet.iterdir() if p.is_dir()):
            files = sorted(
                p for p in character.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES
            )
            if not files:
                continue
            if len(files) < min_samples:
                raise DataError(
                    f"class {alphabet.name}/{character.name} has {len(files)} samples,"
                    f" expected at least {min_samples}"
                )
            stack = np.stack([_load_image(p) for p in files])
            classes[f"{alphabet.name}/{character.name}"] = stack
    if not classes:
        raise DataError(f"no character classes found under {root}")
    if rotations:
        for cid in list(classes):
            stack = classes[cid]
            for k, degrees in enumerate(ROTATION_DEGREES, start=1):
                classes[f"{cid}/rot{degrees:03d}"] = np.ascontiguousarray(
                    np.rot90(stack, k=k, axes=(1, 2))
                )
    return Dataset(classes=classes)


def split_classes(dataset: Dataset, train_count: int, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic seeded shuffle of class ids, then a disjoint split."""
    ids = dataset.class_ids()
    if not 0 < train_count < len(ids):
        raise DataError(
            f"train_count must be in (0, {len(ids)}), got {train_count}"
        )
    order = derive_rng(seed, "class-split").permutation(len(ids))
    train_ids = {ids[i] for i in order[:train_count]}
    train = {cid: dataset.classes[cid] for cid in ids if cid in train_ids}
    test = {cid: dataset.classes[cid] for cid in ids if cid not in train_ids}
    return Dataset(train, split="train"), Dataset(test, split="test")


# ---------------------------------------------------------------------------
# synthetic glyphs


def _render_glyph(class_index: int, seed: int) -> np.ndarray:
    rng = derive_rng(seed, "glyph", class_index)
    yy, xx = np.mgrid[0:IMAGE_SIDE, 0:IMAGE_SIDE].astype(np.float64)
    cy, cx = yy - (IMAGE_SIDE - 1) / 2.0, xx - (IMAGE_SIDE - 1) / 2.0
    kind = class_index % 3
    if kind == 0:
        theta = rng.uniform(0.0, np.pi)
        offset = rng.uniform(-4.0, 4.0)
        thickness = rng.uniform(1.2, 2.5)
        dist = np.abs(cx * np.cos(theta) + cy * np.sin(theta) - offset)
        img = np.exp(-((dist / thickness) ** 2))
    elif kind == 1:
        img = np.zeros_like(xx)
        for _ in range(int(rng.integers(2, 4))):
            by, bx = rng.uniform(3.0, IMAGE_SIDE - 4.0, size=2)
            sigma = rng.uniform(1.3, 2.6)
            bump = np.exp(-(((yy - by) ** 2 + (xx - bx) ** 2) / (2.0 * sigma**2)))
            img = np.maximum(img, bump)
    else:
        by, bx = rng.uniform(-3.0, 3.0, size=2)
        radius = rng.uniform(3.5, 7.0)
        thickness = rng.uniform(0.8, 1.8)
        dist = np.abs(np.sqrt((cy - by) ** 2 + (cx - bx) ** 2) - radius)
        img = np.exp(-((dist / thickness) ** 2))
    return (img / img.max()).astype(np.float32)


def synth_glyphs(
    num_classes: int,
    samples_per_class: int = 20,
    noise: float = 0.05,
    seed: int = 0,
) -> Dataset:
    """Procedural glyph classes with per-sample pixel noise, seed-stable."""
    if num_classes < 1:
        raise DataError("num_classes must be >= 1")
    classes: dict[str, np.ndarray] = {}
    for i in range(num_classes):
        pattern = _render_glyph(i, seed)
        rng = derive_rng(seed, "glyph-noise", i)
        jitter = rng.uniform(-noise, noise, size=(samples_per_class,) + pattern.shape)
        stack = np.clip(pattern[None, :, :] + jitter, 0.0, 1.0).astype(np.float32)
        classes[f"glyph{i:04d}"] = stack
    return Dataset(classes=classes)


# ---------------------------------------------------------------------------
# on-disk cache


def save_dataset(path: str | Path, dataset: Dataset) -> None:
    meta = {"split": dataset.split, "num_classes": dataset.num_classes}
    save_container(path, "dataset", meta, dict(sorted(dataset.classes.items())))


def load_dataset(path: str | Path) -> Dataset:
    kind, meta, arrays = load_container(path)
    if kind != "dataset":
        raise DataError(f"{path} is a {kind!r} container, not a dataset")
    return Dataset(classes=arrays, split=meta.get("split", "all"))


def resolve_dataset(path: str | Path) -> Dataset:
    """Accept a cache file, a directory holding one, or a raw image tree."""
    path = Path(path)
    if path.is_file():
        return load_dataset(path)
    if path.is_dir():
        cache = path / "dataset.bin"
        if cache.is_file():
            return load_dataset(cache)
        return load_omniglot(path)
    raise DataError(f"no dataset at {path}")
