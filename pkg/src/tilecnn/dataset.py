"""Labeled tile corpora and synthetic two-class fixtures.

The synthetic generators stand in for real photographs: a pair of flat
color fields (two powders imaged side by side) and a pair of grayscale
textures (porous vs. fibrous micrographs). ``make_mixture`` splices the two
members of a pair tile by tile so every tile has a known ground truth.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .image_io import load_image, to_float
from .tiling import TileGrid, grid_dims

COLOR_A = (0.9, 0.9, 0.85)
COLOR_B = (0.95, 0.8, 0.2)

STRIPE_PERIOD = 8


@dataclass
class LabeledTileSet:
    tiles: np.ndarray  # (N, tile_h, tile_w, channels) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.tiles = np.asarray(self.tiles, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.tiles.ndim != 4:
            raise ValueError(f"tiles must be (N, H, W, C), got {self.tiles.shape}")
        if len(self.labels) != len(self.tiles):
            raise ValueError("tiles and labels differ in length")
        if len(self.class_names) < 2:
            raise ValueError("need at least 2 classes")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label out of range")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def tile_shape(self) -> tuple[int, int, int]:
        return tuple(self.tiles.shape[1:])

    def __len__(self) -> int:
        return len(self.labels)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, index) -> "LabeledTileSet":
        return LabeledTileSet(self.tiles[index], self.labels[index], list(self.class_names))

    @classmethod
    def from_grids(cls, grids: Sequence[TileGrid], class_names: Sequence[str]) -> "LabeledTileSet":
        """One grid per class, in class-index order."""
        if len(grids) != len(class_names):
            raise ValueError("need exactly one grid per class")
        shapes = {g.tiles.shape[1:] for g in grids}
        if len(shapes) != 1:
            raise ValueError(f"tile dimension mismatch across classes: {sorted(shapes)}")
        tiles = np.concatenate([g.tiles for g in grids])
        labels = np.concatenate([np.full(len(g), k) for k, g in enumerate(grids)])
        return cls(tiles, labels, list(class_names))


@dataclass(frozen=True)
class SynthSpec:
    kind: str = "color"  # "color" or "texture"
    height: int = 200
    width: int = 200
    mix_fraction: float = 0.5
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("color", "texture"):
            raise ValueError(f"unknown synth kind {self.kind!r}")
        if not 0.0 <= self.mix_fraction <= 1.0:
            raise ValueError(f"mix_fraction must be in [0, 1], got {self.mix_fraction}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.height < 1 or self.width < 1:
            raise ValueError("image dimensions must be >= 1")


def build_dataset(class_dirs: Sequence, class_names: Sequence[str]) -> LabeledTileSet:
    """Load every PNG in ``class_dirs[k]`` as a tile of class ``k``.

    Files are read in lexicographic name order so item order is reproducible.
    """
    if len(class_dirs) != len(class_names):
        raise ValueError("class_dirs and class_names differ in length")
    tiles, labels = [], []
    shape = None
    for k, d in enumerate(class_dirs):
        d = Path(d)
        if not d.is_dir():
            raise FileNotFoundError(f"file not found: {d}")
        files = sorted(p for p in d.iterdir() if p.suffix.lower() == ".png" and p.is_file())
        if not files:
            raise ValueError(f"class {k} has no tiles ({d})")
        for f in files:
            tile = to_float(load_image(f))
            if shape is None:
                shape = tile.shape
            elif tile.shape != shape:
                raise ValueError(
                    f"dimension mismatch: {f} is {tile.shape}, expected {shape}"
                )
            tiles.append(tile)
            labels.append(k)
    return LabeledTileSet(np.stack(tiles), np.array(labels), list(class_names))


def split(ds: LabeledTileSet, train_fraction: float, seed: int) -> tuple[LabeledTileSet, LabeledTileSet]:
    """Stratified train/validation split.

    Each class contributes ``floor(n_k * train_fraction)`` items to the
    training side, clamped so that both sides get at least one.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    train_idx, val_idx = [], []
    for k in range(ds.num_classes):
        members = np.flatnonzero(ds.labels == k)
        n = len(members)
        if n < 2:
            raise ValueError(f"class {k} has {n} item(s); need at least 2 to split")
        n_train = min(max(int(np.floor(n * train_fraction)), 1), n - 1)
        members = members[rng.permutation(n)]
        train_idx.append(members[:n_train])
        val_idx.append(members[n_train:])
    return ds.subset(np.concatenate(train_idx)), ds.subset(np.concatenate(val_idx))


def _add_noise(img: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma > 0:
        img = img + rng.normal(0.0, sigma, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def make_color_pair(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(spec.seed)
    shape = (spec.height, spec.width, 3)
    a = _add_noise(np.broadcast_to(np.array(COLOR_A), shape).copy(), spec.noise_sigma, rng)
    b = _add_noise(np.broadcast_to(np.array(COLOR_B), shape).copy(), spec.noise_sigma, rng)
    return a, b


def _porous(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    # pores: the lowest 30% of smoothed white noise
    field_ = ndimage.gaussian_filter(rng.normal(size=(h, w)), sigma=2.0, mode="wrap")
    pores = field_ < np.quantile(field_, 0.3)
    return np.where(pores, 0.15, 0.8)


def _fibrous(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    theta = rng.uniform(0.0, np.pi)
    phase = rng.uniform(0.0, STRIPE_PERIOD)
    y, x = np.mgrid[0:h, 0:w]
    t = (x * np.cos(theta) + y * np.sin(theta) + phase) % STRIPE_PERIOD
    return np.where(t < 3.0, 0.85, 0.2)


def make_texture_pair(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """Grayscale (porous, fibrous) textures, each ``(H, W, 1)``.

    Porous: dark blobs from thresholded low-pass noise on a light ground.
    Fibrous: bright parallel stripes of period 8 px at a random angle on a
    dark ground.
    """
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    porous = _add_noise(_porous(h, w, rng), spec.noise_sigma, rng)
    fibrous = _add_noise(_fibrous(h, w, rng), spec.noise_sigma, rng)
    return porous[:, :, None], fibrous[:, :, None]


def make_pair(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    return make_color_pair(spec) if spec.kind == "color" else make_texture_pair(spec)


def make_mixture(
    spec: SynthSpec, img_a: np.ndarray, img_b: np.ndarray, tile: int
) -> tuple[np.ndarray, np.ndarray]:
    """Tile-aligned mixture of ``img_a`` and ``img_b``.

    Each grid cell independently shows ``img_b`` with probability
    ``spec.mix_fraction``. Returns the mixed image (cropped to whole tiles)
    and the boolean truth mask, ``True`` where ``img_b`` was used. The
    realized fraction is ``truth.mean()``.
    """
    if img_a.shape != img_b.shape:
        raise ValueError(f"size mismatch: {img_a.shape} vs {img_b.shape}")
    h, w = img_a.shape[:2]
    rows, cols = grid_dims(h, w, tile, tile)
    rng = np.random.default_rng(spec.seed)
    truth = rng.random((rows, cols)) < spec.mix_fraction
    pixel_mask = np.repeat(np.repeat(truth, tile, axis=0), tile, axis=1)[:, :, None]
    crop = (slice(0, rows * tile), slice(0, cols * tile))
    mix = np.where(pixel_mask, img_b[crop], img_a[crop])
    return mix, truth


def write_truth_csv(truth: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "label"])
        for (r, c), v in np.ndenumerate(truth):
            writer.writerow([r, c, int(v)])


def read_truth_csv(path) -> np.ndarray:
    """Inverse of :func:`write_truth_csv`; returns an integer label grid."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")
    with open(path, newline="") as fh:
        rows = [(int(r["row"]), int(r["col"]), int(r["label"])) for r in csv.DictReader(fh)]
    if not rows:
        raise ValueError(f"truth CSV {path} has no entries")
    n_rows = max(r for r, _, _ in rows) + 1
    n_cols = max(c for _, c, _ in rows) + 1
    if len(rows) != n_rows * n_cols:
        raise ValueError(f"truth CSV {path} does not cover a full {n_rows}x{n_cols} grid")
    grid = np.empty((n_rows, n_cols), dtype=np.int64)
    for r, c, v in rows:
        grid[r, c] = v
    return grid
