"""Binary PPM/PGM reading and writing (8-bit only)."""
from __future__ import annotations

import os

import numpy as np

from .errors import DataError


def _tokens(blob, count):
    """First ``count`` header tokens and the offset of the raster."""
    out, pos = [], 0
    while len(out) < count:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError("truncated PNM header")
        out.append(blob[start:pos])
    # exactly one whitespace byte separates header and raster
    return out, pos + 1


def read_pnm(path):
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(str(exc)) from None
    (magic, w, h, maxval), pos = _tokens(blob, 4)
    if magic not in (b"P6", b"P5"):
        raise DataError(f"{path}: unsupported PNM type {magic!r}")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval > 255:
        raise DataError(f"{path}: only 8-bit images are supported")
    channels = 3 if magic == b"P6" else 1
    n = w * h * channels
    raster = np.frombuffer(blob, dtype=np.uint8, count=n, offset=pos) if len(blob) - pos >= n else None
    if raster is None:
        raise DataError(f"{path}: raster shorter than {w}x{h}x{channels}")
    img = raster.reshape(h, w, channels)
    return img if channels == 3 else img[..., 0]


def read_ppm(path):
    img = read_pnm(path)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=-1)
    return img


def read_raw_rgb(path, width, height):
    data = np.fromfile(path, dtype=np.uint8)
    if data.size != width * height * 3:
        raise DataError(f"{path}: expected {width * height * 3} bytes, found {data.size}")
    return data.reshape(height, width, 3)


def read_image(path, width=None, height=None):
    if str(path).endswith(".raw"):
        if width is None or height is None:
            raise DataError("raw RGB frames need explicit width and height")
        return read_raw_rgb(path, width, height)
    return read_ppm(path)


def write_ppm(path, img):
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def write_pgm(path, img, normalize=True):
    """Grey image; float maps are min-max scaled to 0..255 when ``normalize``."""
    arr = np.asarray(img)
    if arr.ndim == 3:
        arr = arr[..., 0]
    if normalize and arr.dtype != np.uint8:
        lo, hi = float(arr.min()), float(arr.max())
        arr = np.zeros(arr.shape) if hi <= lo else (arr - lo) / (hi - lo) * 255.0
        arr = np.round(arr)
    arr = np.ascontiguousarray(np.clip(arr, 0, 255), dtype=np.uint8)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def list_frames(directory):
    try:
        names = sorted(n for n in os.listdir(directory) if n.endswith((".ppm", ".raw")))
    except OSError as exc:
        raise DataError(str(exc)) from None
    if not names:
        raise DataError(f"no frames found in {directory}")
    return [os.path.join(directory, n) for n in names]


def read_boxes(path):
    boxes = []
    try:
        with open(path) as fh:
            for line in fh:
                parts = line.replace(",", " ").split()
                if not parts:
                    continue
                if len(parts) != 4:
                    raise DataError(f"{path}: expected 'x_tl y_tl x_br y_br', got {line.strip()!r}")
                boxes.append(tuple(float(v) for v in parts))
    except OSError as exc:
        raise DataError(str(exc)) from None
    except ValueError:
        raise DataError(f"{path}: non-numeric box value") from None
    return boxes


def format_box(box):
    return " ".join(f"{v:.3f}" for v in box)
