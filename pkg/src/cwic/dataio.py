"""Image ingestion and emission: PNG (via Pillow), PPM (P6, self-contained).

Images travel through the codec as float32 arrays shaped (3, H, W) with
values in [0, 1]. PPM parsing is hand-rolled so a box without imaging
libraries can still exchange data.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import DimensionError, IngestError

EXTENSIONS = (".png", ".ppm")


def _read_ppm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P6"):
        raise IngestError(f"{path}: not a P6 PPM file")
    # header tokens: magic, width, height, maxval; '#' starts a comment
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise IngestError(f"{path}: truncated PPM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError:
        raise IngestError(f"{path}: malformed PPM header") from None
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise IngestError(f"{path}: bad PPM dimensions {w}x{h} maxval {maxval}")
    depth = 1 if maxval < 256 else 2
    need = w * h * 3 * depth
    body = data[pos:pos + need]
    if len(body) < need:
        raise IngestError(f"{path}: PPM pixel data truncated")
    dt = np.uint8 if depth == 1 else np.dtype(">u2")
    px = np.frombuffer(body, dtype=dt).reshape(h, w, 3)
    return px.astype(np.float32) / maxval


def _write_ppm(path: str, rgb8: np.ndarray) -> None:
    h, w = rgb8.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(rgb8.tobytes())


def load_image(path: str) -> np.ndarray:
    """Read PNG or PPM into a (3, H, W) float32 array in [0, 1]."""
    ext = os.path.splitext(path)[1].lower()
    if not os.path.isfile(path):
        raise IngestError(f"{path}: no such file")
    if ext == ".ppm":
        hw3 = _read_ppm(path)
    elif ext == ".png":
        try:
            from PIL import Image
            with Image.open(path) as im:
                hw3 = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        except IngestError:
            raise
        except Exception as e:
            raise IngestError(f"{path}: cannot read PNG ({e})") from None
    else:
        raise IngestError(f"{path}: unsupported extension {ext!r}")
    return np.ascontiguousarray(hw3.transpose(2, 0, 1))


def save_image(path: str, img: np.ndarray) -> None:
    """Write a (3, H, W) array in [0, 1] as 8-bit PNG or PPM by extension."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise DimensionError(f"expected (3, H, W) image, got {img.shape}")
    rgb8 = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".ppm":
        _write_ppm(path, np.ascontiguousarray(rgb8))
    elif ext == ".png":
        from PIL import Image
        Image.fromarray(rgb8, mode="RGB").save(path)
    else:
        raise IngestError(f"{path}: unsupported extension {ext!r}")


def probe_size(path: str) -> tuple:
    """(H, W) without decoding pixel data."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".ppm":
        # full parse is cheap enough relative to desk-scale datasets
        img = _read_ppm(path)
        return img.shape[0], img.shape[1]
    if ext == ".png":
        try:
            from PIL import Image
            with Image.open(path) as im:
                w, h = im.size
            return h, w
        except Exception as e:
            raise IngestError(f"{path}: cannot read PNG ({e})") from None
    raise IngestError(f"{path}: unsupported extension {ext!r}")


def list_images(directory: str) -> list:
    """Sorted image paths under a directory (non-recursive)."""
    if not os.path.isdir(directory):
        raise IngestError(f"{directory}: not a directory")
    names = sorted(n for n in os.listdir(directory)
                   if os.path.splitext(n)[1].lower() in EXTENSIONS)
    return [os.path.join(directory, n) for n in names]


def random_crop(img: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random size x size crop; undersized images are rejected."""
    c, h, w = img.shape
    if h < size or w < size:
        raise DimensionError(f"image {h}x{w} smaller than crop {size}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return img[:, top:top + size, left:left + size]


def hflip(img: np.ndarray) -> np.ndarray:
    return img[:, :, ::-1].copy()
