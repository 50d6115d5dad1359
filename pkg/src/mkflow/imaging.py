"""Grayscale images: PGM I/O, bicubic resampling, conversion to mass distributions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mkflow.distributions import Grid, MassDistribution
from mkflow.errors import FormatError, InvalidArgument

CATMULL_ROM = -0.5
_WHITESPACE = b" \t\n\r\v\f"


@dataclass(frozen=True, eq=False)
class GrayImage:
    width: int
    height: int
    intensities: np.ndarray = field(repr=False)  # (height, width), values in [0, 1]

    def __post_init__(self):
        a = np.array(self.intensities, dtype=np.float64)
        if a.shape != (self.height, self.width):
            if a.size != self.width * self.height:
                raise InvalidArgument(
                    f"{a.size} intensities do not fit a {self.width}x{self.height} image"
                )
            a = a.reshape(self.height, self.width)
        if self.width < 1 or self.height < 1:
            raise InvalidArgument("image dimensions must be positive")
        if not np.all(np.isfinite(a)) or a.min(initial=0.0) < 0 or a.max(initial=0.0) > 1:
            raise InvalidArgument("intensities must lie in [0, 1]")
        a.setflags(write=False)
        object.__setattr__(self, "intensities", a)

    @classmethod
    def from_array(cls, values) -> "GrayImage":
        values = np.asarray(values, dtype=np.float64)
        return cls(values.shape[1], values.shape[0], values)

    def to_8bit(self) -> np.ndarray:
        """Samples as written by save_pgm: round half up onto 0..255."""
        return np.floor(self.intensities * 255 + 0.5).astype(np.uint8)

    def quantized(self) -> "GrayImage":
        """The image exactly as it reads back after a save_pgm round trip."""
        return GrayImage(self.width, self.height, self.to_8bit() / 255.0)


class _Reader:
    """Token reader for the PGM header (comments run from '#' to end of line)."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def token(self, what: str) -> bytes:
        data = self.data
        while self.pos < len(data):
            ch = data[self.pos:self.pos + 1]
            if ch == b"#":
                end = data.find(b"\n", self.pos)
                self.pos = len(data) if end < 0 else end + 1
            elif ch in _WHITESPACE:
                self.pos += 1
            else:
                break
        start = self.pos
        while self.pos < len(data) and data[self.pos:self.pos + 1] not in _WHITESPACE \
                and data[self.pos:self.pos + 1] != b"#":
            self.pos += 1
        if start == self.pos:
            raise FormatError(f"unexpected end of file while reading {what}", start)
        return data[start:self.pos]

    def integer(self, what: str) -> int:
        tok = self.token(what)
        if not tok.isdigit():
            raise FormatError(f"expected an integer for {what}, got {tok[:16]!r}", self.pos - len(tok))
        return int(tok)


def parse_pgm(data: bytes) -> GrayImage:
    reader = _Reader(data)
    magic = reader.token("magic number")
    if magic not in (b"P2", b"P5"):
        raise FormatError(f"unsupported magic number {magic[:8]!r}", 0)
    width = reader.integer("width")
    height = reader.integer("height")
    maxval = reader.integer("maxval")
    if width < 1 or height < 1:
        raise FormatError(f"invalid dimensions {width}x{height}", reader.pos)
    if not (1 <= maxval <= 65535):
        raise FormatError(f"maxval {maxval} outside 1..65535", reader.pos)
    count = width * height
    if magic == b"P5":
        if reader.pos >= len(data) or data[reader.pos:reader.pos + 1] not in _WHITESPACE:
            raise FormatError("missing whitespace after maxval", reader.pos)
        start = reader.pos + 1
        depth = 1 if maxval < 256 else 2
        needed = count * depth
        if len(data) - start < needed:
            raise FormatError(
                f"truncated raster: need {needed} bytes, found {len(data) - start}", len(data)
            )
        dtype = np.uint8 if depth == 1 else np.dtype(">u2")
        samples = np.frombuffer(data, dtype=dtype, count=count, offset=start).astype(np.int64)
    else:
        samples = np.empty(count, dtype=np.int64)
        for k in range(count):
            samples[k] = reader.integer(f"sample {k}")
    over = np.flatnonzero(samples > maxval)
    if over.size:
        raise FormatError(f"sample {samples[over[0]]} exceeds maxval {maxval}", reader.pos)
    return GrayImage(width, height, (samples / maxval).reshape(height, width))


def load_pgm(path: str | Path) -> GrayImage:
    return parse_pgm(Path(path).read_bytes())


def encode_pgm(image: GrayImage) -> bytes:
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + image.to_8bit().tobytes()


def save_pgm(image: GrayImage, path: str | Path) -> None:
    Path(path).write_bytes(encode_pgm(image))


def cubic_kernel(x, a: float = CATMULL_ROM):
    """Keys cubic convolution kernel; a = -0.5 is Catmull-Rom."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2 = x * x
    x3 = x2 * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def bicubic_weights(in_size: int, out_size: int, a: float = CATMULL_ROM) -> np.ndarray:
    """(out_size, in_size) matrix of 1-D resampling weights with border clamping.

    Output sample ``o`` reads the input at ``(o + 0.5) * in / out - 0.5`` from
    the four nearest input samples.
    """
    if in_size < 1 or out_size < 1:
        raise InvalidArgument("sizes must be positive")
    scale = in_size / out_size
    weights = np.zeros((out_size, in_size))
    for o in range(out_size):
        centre = (o + 0.5) * scale - 0.5
        base = math.floor(centre)
        for tap in range(base - 1, base + 3):
            idx = min(max(tap, 0), in_size - 1)
            weights[o, idx] += float(cubic_kernel(centre - tap, a))
    return weights


def downsample_bicubic(image: GrayImage, new_width: int, new_height: int,
                       a: float = CATMULL_ROM) -> GrayImage:
    """Resize with separable 4x4 cubic convolution, clamping the result to [0, 1]."""
    if new_width < 1 or new_height < 1:
        raise InvalidArgument(f"target size must be positive, got {new_width}x{new_height}")
    wy = bicubic_weights(image.height, new_height, a)
    wx = bicubic_weights(image.width, new_width, a)
    out = wy @ image.intensities @ wx.T
    return GrayImage(new_width, new_height, np.clip(out, 0.0, 1.0))


def to_distribution(image: GrayImage, spacing: float = 1.0, normalize: bool = False) -> MassDistribution:
    mass = image.intensities.reshape(-1)
    if normalize:
        total = math.fsum(mass.tolist())
        if total > 0:
            mass = mass / total
    return MassDistribution(Grid(image.width, image.height, spacing), mass)


def l2_distance(f0: MassDistribution, f1: MassDistribution) -> float:
    if f0.grid != f1.grid:
        raise InvalidArgument("l2_distance needs distributions on the same grid")
    diff = f0.mass - f1.mass
    return float(math.sqrt(math.fsum((diff * diff).tolist())))
