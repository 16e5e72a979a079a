"""Reflected-binary gray codes and projector pattern stacks.

Stripes vary along the projector column axis only; rows are never coded.
Stack layout is [all-white, all-black, bit planes MSB first], so observers
can recover per-pixel (max, min) brightness from the first two frames.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, IndexOutOfRange, LayoutMismatch, RasterMismatch
from .imageio import load_gray_png, save_gray_png

MAX_BITS = 16

_PATTERN_RE = re.compile(r"^pattern_(\d{2})\.png$")


def gray_encode_value(n: int) -> int:
    return n ^ (n >> 1)


def gray_decode_value(g: int) -> int:
    n = g
    shift = 1
    while (g >> shift) > 0:
        n ^= g >> shift
        shift += 1
    return n


def gray_decode_array(codes: np.ndarray) -> np.ndarray:
    """Vectorized inverse of the reflected-binary map, for codes < 2^16."""
    n = np.asarray(codes).astype(np.uint32)
    n = n ^ (n >> np.uint32(1))
    n = n ^ (n >> np.uint32(2))
    n = n ^ (n >> np.uint32(4))
    n = n ^ (n >> np.uint32(8))
    return n.astype(np.int64)


def encode(index: int, bits: int) -> np.ndarray:
    """Codeword of `index` as a uint8 bit vector, MSB first."""
    if not 1 <= bits <= MAX_BITS:
        raise IndexOutOfRange(f"bit count {bits} outside [1, {MAX_BITS}]")
    if not 0 <= index < (1 << bits):
        raise IndexOutOfRange(f"index {index} outside [0, 2^{bits})")
    g = gray_encode_value(index)
    out = np.empty(bits, dtype=np.uint8)
    for b in range(bits):
        out[b] = (g >> (bits - 1 - b)) & 1
    return out


def decode(codeword) -> int:
    """Column index for an MSB-first bit sequence.

    Any bit pattern maps to some integer; whether that integer is a real
    correspondence is judged upstream by the contrast mask.
    """
    bits = list(codeword)
    if len(bits) > MAX_BITS:
        raise IndexOutOfRange(f"codeword length {len(bits)} exceeds {MAX_BITS}")
    g = 0
    for b in bits:
        g = (g << 1) | (1 if b else 0)
    return gray_decode_value(g)


@dataclass(frozen=True)
class GrayCodeConfig:
    """Code-length parameters for column stripes."""

    column_count: int
    bit_count: int = field(default=-1)

    def __post_init__(self) -> None:
        if self.column_count < 1:
            raise ConfigError(f"column_count must be positive, got {self.column_count}")
        if self.bit_count == -1:
            object.__setattr__(self, "bit_count", bits_for_columns(self.column_count))
        if self.bit_count < 1:
            raise ConfigError(f"bit_count must be positive, got {self.bit_count}")
        if self.bit_count > MAX_BITS:
            raise ConfigError(f"bit_count {self.bit_count} exceeds {MAX_BITS}")
        if (1 << self.bit_count) < self.column_count:
            raise ConfigError(
                f"2^{self.bit_count} codes cannot cover {self.column_count} columns")


def bits_for_columns(column_count: int) -> int:
    if column_count < 1:
        raise ConfigError(f"column_count must be positive, got {column_count}")
    bits = max(1, math.ceil(math.log2(column_count)))
    if bits > MAX_BITS:
        raise ConfigError(f"{column_count} columns need {bits} bits, max is {MAX_BITS}")
    return bits


@dataclass(frozen=True)
class PatternStack:
    """Binary projector frames: white, black, then bit planes MSB -> LSB."""

    frames: np.ndarray  # (2 + bit_count, height, width) float64 in {0, 1}
    config: GrayCodeConfig

    def __post_init__(self) -> None:
        frames = np.ascontiguousarray(self.frames, dtype=np.float64)
        object.__setattr__(self, "frames", frames)
        if frames.ndim != 3:
            raise LayoutMismatch(f"frames must be (count, h, w), got {frames.shape}")
        expected = 2 + self.config.bit_count
        if frames.shape[0] != expected:
            raise LayoutMismatch(
                f"expected {expected} frames for {self.config.bit_count} bits, "
                f"got {frames.shape[0]}")
        if not np.all((frames == 0.0) | (frames == 1.0)):
            raise LayoutMismatch("pattern frames must be binary valued")
        if not np.all(frames[0] == 1.0):
            raise LayoutMismatch("frame 0 must be all white")
        if not np.all(frames[1] == 0.0):
            raise LayoutMismatch("frame 1 must be all black")

    @property
    def frame_count(self) -> int:
        return int(self.frames.shape[0])

    @property
    def height(self) -> int:
        return int(self.frames.shape[1])

    @property
    def width(self) -> int:
        return int(self.frames.shape[2])


def generate_pattern_stack(config: GrayCodeConfig, width: int,
                           height: int) -> PatternStack:
    """Column-stripe stack for a projector raster of width x height."""
    if width != config.column_count:
        raise RasterMismatch(
            f"raster width {width} does not match column_count {config.column_count}")
    if height < 1:
        raise ConfigError(f"raster height must be positive, got {height}")
    bits = config.bit_count
    columns = np.arange(width, dtype=np.int64)
    codes = columns ^ (columns >> 1)
    frames = np.empty((2 + bits, height, width), dtype=np.float64)
    frames[0] = 1.0
    frames[1] = 0.0
    for b in range(bits):
        plane = ((codes >> (bits - 1 - b)) & 1).astype(np.float64)
        frames[2 + b] = plane[np.newaxis, :]
    return PatternStack(frames=frames, config=config)


def pattern_filename(frame_index: int) -> str:
    return f"pattern_{frame_index:02d}.png"


def save_pattern_stack(stack: PatternStack, directory: str | Path) -> list[Path]:
    """Write one 8-bit grayscale PNG per frame; returns the paths written."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(stack.frame_count):
        path = directory / pattern_filename(i)
        save_gray_png(path, stack.frames[i])
        paths.append(path)
    return paths


def load_pattern_stack(directory: str | Path) -> PatternStack:
    """Rebuild a stack from `pattern_NN.png` files written by save_pattern_stack."""
    directory = Path(directory)
    indexed = []
    for path in directory.iterdir():
        m = _PATTERN_RE.match(path.name)
        if m:
            indexed.append((int(m.group(1)), path))
    if not indexed:
        raise LayoutMismatch(f"no pattern frames found in {directory}")
    indexed.sort()
    indices = [i for i, _ in indexed]
    if indices != list(range(len(indexed))):
        raise LayoutMismatch(f"pattern frames are not contiguous: {indices}")
    frames = np.stack([load_gray_png(path) for _, path in indexed])
    bit_count = frames.shape[0] - 2
    config = GrayCodeConfig(column_count=frames.shape[2], bit_count=bit_count)
    return PatternStack(frames=frames, config=config)
