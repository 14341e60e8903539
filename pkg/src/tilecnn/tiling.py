"""Raster-scan subdivision of images into fixed-size, non-overlapping tiles.

Tiles are flattened row-major: flat index ``i`` sits at grid position
``(i // cols, i % cols)``. The mapping module reshapes predictions with the
same rule, so the two must stay in sync.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .image_io import check_image, from_float, save_image


class TileExportError(OSError):
    """Raised when tile export fails part-way; ``written`` counts completed files."""

    def __init__(self, message: str, written: int):
        super().__init__(message)
        self.written = written


@dataclass(frozen=True)
class TileGrid:
    tiles: np.ndarray  # (rows * cols, tile_h, tile_w, channels)
    rows: int
    cols: int
    tile_h: int
    tile_w: int

    def __post_init__(self):
        n, th, tw = self.tiles.shape[:3]
        if self.tiles.ndim != 4 or n != self.rows * self.cols or (th, tw) != (self.tile_h, self.tile_w):
            raise ValueError(
                f"tiles of shape {self.tiles.shape} do not match a "
                f"{self.rows}x{self.cols} grid of {self.tile_h}x{self.tile_w} tiles"
            )

    @property
    def channels(self) -> int:
        return self.tiles.shape[3]

    def __len__(self) -> int:
        return self.tiles.shape[0]

    def position(self, index: int) -> tuple[int, int]:
        return divmod(index, self.cols)

    def tile(self, row: int, col: int) -> np.ndarray:
        return self.tiles[row * self.cols + col]


def grid_dims(source_h: int, source_w: int, tile_h: int, tile_w: int) -> tuple[int, int]:
    if min(source_h, source_w, tile_h, tile_w) < 1:
        raise ValueError("image and tile dimensions must be >= 1")
    if tile_h > source_h or tile_w > source_w:
        raise ValueError(
            f"tile {tile_h}x{tile_w} is larger than the {source_h}x{source_w} source"
        )
    return source_h // tile_h, source_w // tile_w


def subdivide(img: np.ndarray, tile_h: int, tile_w: int | None = None) -> TileGrid:
    """Cut ``img`` into a row-major grid of ``tile_h x tile_w`` tiles.

    Pixels beyond the last whole tile in either direction are dropped.
    """
    check_image(img)
    if tile_w is None:
        tile_w = tile_h
    h, w, c = img.shape
    rows, cols = grid_dims(h, w, tile_h, tile_w)
    cropped = img[: rows * tile_h, : cols * tile_w]
    tiles = (
        cropped.reshape(rows, tile_h, cols, tile_w, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(rows * cols, tile_h, tile_w, c)
    )
    return TileGrid(np.ascontiguousarray(tiles), rows, cols, tile_h, tile_w)


def reassemble(grid: TileGrid) -> np.ndarray:
    th, tw, c = grid.tile_h, grid.tile_w, grid.channels
    return (
        grid.tiles.reshape(grid.rows, grid.cols, th, tw, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(grid.rows * th, grid.cols * tw, c)
    )


def tile_filename(row: int, col: int) -> str:
    return f"r{row}_c{col}.png"


def export_tiles(grid: TileGrid, directory) -> int:
    """Save every tile as ``r{row}_c{col}.png`` under ``directory``.

    Float tiles are quantized to 8 bits; uint8 tiles are written as-is.
    Returns the number of files written.
    """
    directory = Path(directory)
    written = 0
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for i, tile in enumerate(grid.tiles):
            r, c = grid.position(i)
            data = tile if tile.dtype == np.uint8 else from_float(tile)
            save_image(data, directory / tile_filename(r, c))
            written += 1
    except OSError as exc:
        raise TileExportError(
            f"tile export to {os.fspath(directory)} failed after {written} of {len(grid)} files: {exc}",
            written,
        ) from exc
    return written
