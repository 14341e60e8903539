"""PNG loading/saving and conversion between 8-bit and unit-interval images.

Images are plain numpy arrays of shape ``(H, W, C)`` with ``C`` in {1, 3}.
The 8-bit storage form is ``uint8``; the working form is ``float64`` in [0, 1].
"""

from __future__ import annotations

import os
import struct

import numpy as np
from PIL import Image as PILImage

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"

# PNG IHDR color types
_GRAY, _RGB, _PALETTE, _GRAY_ALPHA, _RGBA = 0, 2, 3, 4, 6

# Rec.601 luma in thousandths; dividing once keeps white at exactly 1.0
LUMA_WEIGHTS = np.array([299.0, 587.0, 114.0])


class ImageFormatError(ValueError):
    """Raised for malformed or unsupported PNG files."""


def check_image(img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected an H x W x C image with C in {{1, 3}}, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"image must be at least 1x1, got {img.shape[:2]}")


def _read_ihdr(path) -> tuple[int, int]:
    with open(path, "rb") as fh:
        head = fh.read(33)
    if len(head) < 33 or head[:8] != PNG_SIGNATURE or head[12:16] != b"IHDR":
        raise ImageFormatError(f"not a PNG file: {path}")
    bit_depth, color_type = struct.unpack(">BB", head[24:26])
    return bit_depth, color_type


def load_image(path) -> np.ndarray:
    """Decode a PNG file into an 8-bit ``(H, W, C)`` array.

    Gray and gray+alpha sources give one channel, RGB and RGBA give three;
    alpha is discarded. 16-bit samples are reduced to their high byte.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"file not found: {path}")
    bit_depth, color_type = _read_ihdr(path)
    if color_type not in (_GRAY, _RGB, _GRAY_ALPHA, _RGBA):
        raise ImageFormatError(f"unsupported PNG color type {color_type}: {path}")
    if bit_depth not in (8, 16):
        raise ImageFormatError(f"unsupported PNG bit depth {bit_depth}: {path}")

    try:
        with PILImage.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                data = np.asarray(im, dtype=np.uint32) >> 8
                data = data.astype(np.uint8)[:, :, None]
            elif color_type in (_GRAY, _GRAY_ALPHA):
                data = np.asarray(im.convert("L"), dtype=np.uint8)[:, :, None]
            else:
                data = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, SyntaxError, ValueError) as exc:
        raise ImageFormatError(f"malformed PNG {path}: {exc}") from exc
    return np.ascontiguousarray(data)


def save_image(img: np.ndarray, path) -> None:
    """Write an 8-bit image as a gray (C=1) or RGB (C=3) PNG."""
    check_image(img)
    if img.dtype != np.uint8:
        raise TypeError(f"save_image expects uint8 data, got {img.dtype}")
    mode = "L" if img.shape[2] == 1 else "RGB"
    arr = img[:, :, 0] if mode == "L" else img
    PILImage.fromarray(np.ascontiguousarray(arr), mode=mode).save(os.fspath(path), format="PNG")


def to_float(img: np.ndarray) -> np.ndarray:
    check_image(img)
    return img.astype(np.float64) / 255.0


def from_float(img: np.ndarray) -> np.ndarray:
    """Quantize a unit-interval image back to 8 bits (round half away from zero)."""
    check_image(img)
    scaled = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Rec.601 luminance; single-channel input is returned unchanged."""
    check_image(img)
    if img.shape[2] == 1:
        return img
    gray = (img @ LUMA_WEIGHTS.astype(img.dtype)) / 1000.0
    return np.clip(gray, 0.0, 1.0)[:, :, None]


def to_rgb(img: np.ndarray) -> np.ndarray:
    """Promote a single-channel image to three channels by replication."""
    check_image(img)
    if img.shape[2] == 3:
        return img
    return np.repeat(img, 3, axis=2)
