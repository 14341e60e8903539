"""Per-tile prediction maps and their renderings.

A :class:`PredictionMap` holds one class-probability vector per tile at the
tile's grid position. From it come the thresholded :class:`BinaryMask`, the
blue-to-yellow heatmap, and the source image with masked tiles tinted.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .image_io import check_image, to_rgb
from .nn.model import Model, predict_proba
from .tiling import TileGrid

HEAT_LOW = np.array([0.0, 0.0, 128.0])
HEAT_HIGH = np.array([255.0, 255.0, 0.0])
RED = (255, 0, 0)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class PredictionMap:
    probs: np.ndarray  # (rows, cols, K)
    tile_h: int
    tile_w: int

    @property
    def rows(self) -> int:
        return self.probs.shape[0]

    @property
    def cols(self) -> int:
        return self.probs.shape[1]

    @property
    def num_classes(self) -> int:
        return self.probs.shape[2]

    def vector(self) -> np.ndarray:
        """Probabilities flattened back to tiling order, shape (rows * cols, K)."""
        return self.probs.reshape(-1, self.num_classes)

    def _check_class(self, k: int) -> None:
        if not 0 <= k < self.num_classes:
            raise ValueError(f"class {k} out of range for {self.num_classes} classes")


@dataclass(frozen=True)
class BinaryMask:
    bits: np.ndarray  # (rows, cols) bool
    target_class: int
    tile_h: int
    tile_w: int

    @property
    def rows(self) -> int:
        return self.bits.shape[0]

    @property
    def cols(self) -> int:
        return self.bits.shape[1]


def reshape_to_map(vector: np.ndarray, rows: int, cols: int, tile_h: int, tile_w: int) -> PredictionMap:
    """Row-major reshape: entry ``i`` goes to ``(i // cols, i % cols)``."""
    vector = np.asarray(vector)
    if vector.shape[0] != rows * cols:
        raise ValueError(f"{vector.shape[0]} scores cannot fill a {rows}x{cols} grid")
    return PredictionMap(vector.reshape(rows, cols, -1), tile_h, tile_w)


def predict_tiles(model: Model, grid: TileGrid) -> tuple[np.ndarray, PredictionMap]:
    arch = model.arch
    if (grid.tile_h, grid.tile_w, grid.channels) != (arch.input_h, arch.input_w, arch.input_c):
        raise ValueError(
            f"{grid.tile_h}x{grid.tile_w}x{grid.channels} tiles do not match the model's "
            f"{arch.input_h}x{arch.input_w}x{arch.input_c} input"
        )
    vector = predict_proba(model, grid.tiles).astype(np.float64)
    return vector, reshape_to_map(vector, grid.rows, grid.cols, grid.tile_h, grid.tile_w)


def threshold(pmap: PredictionMap, target_class: int, tau: float = 0.5) -> BinaryMask:
    """Mark tiles whose ``target_class`` probability is at least ``tau``."""
    pmap._check_class(target_class)
    bits = pmap.probs[:, :, target_class] >= tau
    return BinaryMask(bits, target_class, pmap.tile_h, pmap.tile_w)


def class_fraction(mask: BinaryMask) -> float:
    if mask.bits.size == 0:
        raise ValueError("empty mask")
    return float(mask.bits.mean())


def _upscale(grid: np.ndarray, tile_h: int, tile_w: int) -> np.ndarray:
    return np.repeat(np.repeat(grid, tile_h, axis=0), tile_w, axis=1)


def render_heatmap(pmap: PredictionMap, display_class: int = 1) -> np.ndarray:
    """RGB uint8 image of one class's probability, one flat block per tile.

    0 maps to dark blue (0, 0, 128) and 1 to yellow (255, 255, 0), linearly.
    """
    pmap._check_class(display_class)
    v = np.clip(pmap.probs[:, :, display_class], 0.0, 1.0)[:, :, None]
    rgb = _round_half_away(HEAT_LOW + v * (HEAT_HIGH - HEAT_LOW)).astype(np.uint8)
    return _upscale(rgb, pmap.tile_h, pmap.tile_w)


def overlay(src: np.ndarray, mask: BinaryMask, color=RED, alpha: float = 0.5) -> np.ndarray:
    """Blend ``color`` into every masked tile of the 8-bit image ``src``.

    Grayscale sources are promoted to RGB first. Pixels outside masked tiles,
    including any remainder beyond the last whole tile, are copied unchanged.
    """
    check_image(src)
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    h_need, w_need = mask.rows * mask.tile_h, mask.cols * mask.tile_w
    if src.shape[0] < h_need or src.shape[1] < w_need:
        raise ValueError(
            f"{src.shape[0]}x{src.shape[1]} image is smaller than the {h_need}x{w_need} mask area"
        )
    out = to_rgb(src).copy()
    pixel_mask = np.zeros(out.shape[:2], dtype=bool)
    pixel_mask[:h_need, :w_need] = _upscale(mask.bits, mask.tile_h, mask.tile_w)
    blended = _round_half_away(alpha * np.asarray(color, dtype=np.float64) + (1.0 - alpha) * out[pixel_mask])
    out[pixel_mask] = np.clip(blended, 0, 255).astype(np.uint8)
    return out


def write_scores_csv(pmap: PredictionMap, path) -> None:
    """``row,col,p_0..p_{K-1},argmax`` per tile in raster order, 6 decimals."""
    k = pmap.num_classes
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", *[f"p_{i}" for i in range(k)], "argmax"])
        for i, p in enumerate(pmap.vector()):
            r, c = divmod(i, pmap.cols)
            writer.writerow([r, c, *[f"{x:.6f}" for x in p], int(np.argmax(p))])


def read_scores_csv(path, tile_h: int = 1, tile_w: int = 1) -> PredictionMap:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        k = sum(1 for h in header if h.startswith("p_"))
        rows = [(int(line[0]), int(line[1]), [float(x) for x in line[2:2 + k]]) for line in reader]
    n_rows = max(r for r, _, _ in rows) + 1
    n_cols = max(c for _, c, _ in rows) + 1
    probs = np.zeros((n_rows, n_cols, k))
    for r, c, p in rows:
        probs[r, c] = p
    return PredictionMap(probs, tile_h, tile_w)
