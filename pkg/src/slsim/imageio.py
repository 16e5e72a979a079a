"""Image file IO: PFM depth maps, 8-bit gamma-encoded PNGs, 16-bit label PNGs.

All 8-bit PNGs produced here are gamma 2.2 encoded from linear values; the
loaders undo the encoding so the rest of the pipeline works in linear space.
PFM files store raw 32-bit floats (meters for depth maps), little-endian,
rows bottom-to-top per the format convention.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import IoFailure

GAMMA = 2.2


def linear_to_u8(img: np.ndarray) -> np.ndarray:
    """Gamma-encode a linear [0,1] image to uint8."""
    enc = np.clip(img, 0.0, 1.0) ** (1.0 / GAMMA)
    return np.rint(enc * 255.0).astype(np.uint8)


def u8_to_linear(img: np.ndarray) -> np.ndarray:
    """Decode a gamma-encoded uint8 image back to linear float64."""
    return (img.astype(np.float64) / 255.0) ** GAMMA


def save_gray_png(path: str | Path, img: np.ndarray) -> None:
    """Write a linear single-channel image as an 8-bit grayscale PNG."""
    if img.ndim != 2:
        raise IoFailure(f"grayscale PNG needs a 2D array, got shape {img.shape}")
    Image.fromarray(linear_to_u8(img), mode="L").save(str(path), format="PNG")


def load_gray_png(path: str | Path) -> np.ndarray:
    """Read an 8-bit grayscale PNG into a linear float64 image."""
    with Image.open(str(path)) as im:
        arr = np.asarray(im.convert("L"), dtype=np.uint8)
    return u8_to_linear(arr)


def save_rgb_png(path: str | Path, img: np.ndarray) -> None:
    """Write a linear HxWx3 image as an 8-bit sRGB-style PNG (gamma 2.2)."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise IoFailure(f"RGB PNG needs an HxWx3 array, got shape {img.shape}")
    Image.fromarray(linear_to_u8(img), mode="RGB").save(str(path), format="PNG")


def load_rgb_png(path: str | Path) -> np.ndarray:
    with Image.open(str(path)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return u8_to_linear(arr)


def save_png16(path: str | Path, img: np.ndarray) -> None:
    """Write a uint16 label image as a 16-bit grayscale PNG."""
    if img.ndim != 2:
        raise IoFailure(f"16-bit PNG needs a 2D array, got shape {img.shape}")
    if img.dtype != np.uint16:
        if np.any(img < 0) or np.any(img > 0xFFFF):
            raise IoFailure("16-bit PNG values must fit in uint16")
        img = img.astype(np.uint16)
    Image.fromarray(img).save(str(path), format="PNG")


def load_png16(path: str | Path) -> np.ndarray:
    with Image.open(str(path)) as im:
        arr = np.asarray(im)
    if arr.dtype not in (np.uint16, np.int32, np.uint8):
        raise IoFailure(f"{path}: not a 16-bit grayscale PNG (dtype {arr.dtype})")
    return arr.astype(np.uint16)


def save_pfm(path: str | Path, img: np.ndarray) -> None:
    """Write a 2D float image as a single-channel little-endian PFM."""
    if img.ndim != 2:
        raise IoFailure(f"PFM writer takes a 2D array, got shape {img.shape}")
    data = np.flipud(img).astype("<f4")
    height, width = img.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{width} {height}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(data.tobytes())


def load_pfm(path: str | Path) -> np.ndarray:
    """Read a single-channel PFM into a float32 array (top-down rows)."""
    with open(path, "rb") as f:
        tag = f.readline().decode("ascii").strip()
        if tag not in ("Pf", "PF"):
            raise IoFailure(f"{path}: not a PFM file (tag {tag!r})")
        dims = f.readline().decode("ascii").split()
        width, height = int(dims[0]), int(dims[1])
        scale = float(f.readline().decode("ascii").strip())
        channels = 1 if tag == "Pf" else 3
        count = width * height * channels
        buf = f.read(count * 4)
    if len(buf) != count * 4:
        raise IoFailure(f"{path}: truncated PFM payload")
    dtype = "<f4" if scale < 0 else ">f4"
    img = np.frombuffer(buf, dtype=dtype).reshape(height, width, channels)
    img = np.flipud(img).astype(np.float32)
    return img[:, :, 0] if channels == 1 else img


def luminance(rgb: np.ndarray) -> np.ndarray:
    """Rec. 709 luminance of a linear HxWx3 image."""
    return 0.2126 * rgb[..., 0] + 0.7152 * rgb[..., 1] + 0.0722 * rgb[..., 2]
