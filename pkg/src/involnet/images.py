"""Image decoding (PNG/PPM via Pillow) and byte-exact PPM encoding."""
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .tensor import DTYPE

IMAGE_SUFFIXES = (".png", ".ppm")


class ImageDecodeError(ValueError):
    pass


def read_image(path):
    """Decode a PNG or binary PPM into an ``(H, W, 3)`` float array in [0, 1].

    Grayscale is replicated to three channels and alpha is dropped.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
                arr = np.repeat(arr[..., None], 3, axis=2)
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageDecodeError(f"{path}: {exc}") from None
    return np.clip(arr, 0.0, 1.0).astype(DTYPE)


def to_bytes(img):
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def encode_ppm(pixels):
    """Encode uint8 pixels: ``(H, W)`` as P5, ``(H, W, 3)`` as P6."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim == 2:
        magic = b"P5"
    elif pixels.ndim == 3 and pixels.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot encode array of shape {pixels.shape} as PPM")
    h, w = pixels.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def write_ppm(path, pixels):
    Path(path).write_bytes(encode_ppm(pixels))


def read_ppm_bytes(data):
    """Minimal parser for the P5/P6 files this package writes."""
    parts = data.split(maxsplit=4)
    magic, w, h, maxval, payload = parts[0], int(parts[1]), int(parts[2]), int(parts[3]), parts[4]
    channels = {b"P5": 1, b"P6": 3}[magic]
    if maxval != 255:
        raise ImageDecodeError(f"unsupported maxval {maxval}")
    arr = np.frombuffer(payload[:w * h * channels], dtype=np.uint8)
    return arr.reshape((h, w) if channels == 1 else (h, w, 3))
