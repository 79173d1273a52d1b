"""Image ingestion: binary PPM/PGM natively, PNG (and friends) through Pillow."""

from __future__ import annotations

import logging
import os
import re

import numpy as np

from .errors import InvalidInputError
from .pyramid import MIN_SIDE

log = logging.getLogger(__name__)

_PNM_HEADER = re.compile(rb"^(P[56])\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")

IMAGE_EXTENSIONS = (".ppm", ".pgm", ".pnm", ".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def read_pnm(data: bytes) -> np.ndarray:
    mt = _PNM_HEADER.match(data)
    if not mt:
        raise InvalidInputError("not a binary PPM/PGM file")
    kind, w, h, maxval = mt[1], int(mt[2]), int(mt[3]), int(mt[4])
    if maxval != 255:
        raise InvalidInputError(f"only 8-bit PNM is supported (maxval {maxval})")
    c = 3 if kind == b"P6" else 1
    body = data[mt.end() : mt.end() + w * h * c]
    if len(body) != w * h * c:
        raise InvalidInputError("truncated PNM pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, c).copy()


def write_pnm(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise InvalidInputError("PNM output needs uint8 pixels")
    if img.ndim == 2:
        img = img[:, :, None]
    h, w, c = img.shape
    kind = {3: b"P6", 1: b"P5"}.get(c)
    if kind is None:
        raise InvalidInputError(f"cannot write {c}-channel PNM")
    return kind + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(img).tobytes()


def read_image(path) -> np.ndarray:
    """Return ``(h, w, C)`` uint8 pixels with C in {1, 3}."""
    path = os.fspath(path)
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] in (b"P5", b"P6"):
        return read_pnm(data)
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover
        raise InvalidInputError(f"{path}: only PPM/PGM are readable without Pillow") from exc
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I", "1"):
            arr = np.asarray(im.convert("L"))[:, :, None]
        else:
            arr = np.asarray(im.convert("RGB"))
    return arr.astype(np.uint8)


def write_image(path, img: np.ndarray):
    path = os.fspath(path)
    ext = os.path.splitext(path)[1].lower()
    if ext in (".ppm", ".pgm", ".pnm", ""):
        with open(path, "wb") as fh:
            fh.write(write_pnm(img))
        return
    from PIL import Image

    arr = np.asarray(img)
    Image.fromarray(arr[:, :, 0] if arr.shape[2] == 1 else arr).save(path)


def center_crop_pow2(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Crop to the largest centered power-of-two square, warning when pixels are dropped."""
    h, w = img.shape[:2]
    side = 1 << (min(h, w).bit_length() - 1) if min(h, w) > 0 else 0
    if side < MIN_SIDE:
        raise InvalidInputError(f"{name}: {h}x{w} is too small to crop to a {MIN_SIDE}x{MIN_SIDE} grid")
    if (h, w) != (side, side):
        log.warning("%s: %dx%d is not a power-of-two square, center-cropping to %d", name, h, w, side)
        y = (h - side) // 2
        x = (w - side) // 2
        img = img[y : y + side, x : x + side]
    return img


def list_images(directory) -> list[str]:
    names = sorted(f for f in os.listdir(directory) if f.lower().endswith(IMAGE_EXTENSIONS))
    return [os.path.join(directory, f) for f in names]
