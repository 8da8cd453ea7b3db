"""8-bit raster images, channel extraction, resampling and file I/O.

Images are thin wrappers over ``uint8`` numpy arrays in row-major order
(``data[y, x]``).  Everything here is pure: functions return new images and
never mutate their inputs.
"""
from __future__ import annotations

import enum
import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FRAME_SUFFIXES = (".png", ".pgm", ".ppm")


class Channel(enum.IntEnum):
    RED = 0
    GREEN = 1
    BLUE = 2

    @classmethod
    def parse(cls, value: "str | Channel") -> "Channel":
        if isinstance(value, Channel):
            return value
        key = str(value).strip().upper()
        aliases = {"R": "RED", "G": "GREEN", "B": "BLUE"}
        try:
            return cls[aliases.get(key, key)]
        except KeyError:
            raise ValueError(f"unknown channel {value!r}; expected red, green or blue") from None


@dataclass(frozen=True, eq=False)
class GrayImage:
    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data)
        if arr.ndim != 2:
            raise ValueError(f"gray image must be 2-D, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            raise ValueError(f"gray image must be uint8, got {arr.dtype}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image dimensions must be positive")
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def __eq__(self, other):
        return isinstance(other, GrayImage) and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"GrayImage({self.width}x{self.height})"

    def to_rgb(self) -> "RgbImage":
        return RgbImage(np.repeat(self.data[:, :, None], 3, axis=2))


@dataclass(frozen=True, eq=False)
class RgbImage:
    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"RGB image must have shape (h, w, 3), got {arr.shape}")
        if arr.dtype != np.uint8:
            raise ValueError(f"RGB image must be uint8, got {arr.dtype}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image dimensions must be positive")
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def __eq__(self, other):
        return isinstance(other, RgbImage) and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"RgbImage({self.width}x{self.height})"


def extract_channel(img: RgbImage, ch: Channel) -> GrayImage:
    return GrayImage(img.data[:, :, Channel.parse(ch)].copy())


def _bilinear_axis(n_in: int, n_out: int):
    # half-pixel centres, clamp to edge; positions are exact multiples of 1 / (2 n_out)
    den = 2 * n_out
    pos = (2 * np.arange(n_out, dtype=np.int64) + 1) * n_in - n_out
    pos = np.clip(pos, 0, (n_in - 1) * den)
    i0 = pos // den
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = pos - i0 * den
    return i0, i1, frac, den


def resize_bilinear(img: GrayImage, new_w: int, new_h: int) -> GrayImage:
    """Resample to ``new_w`` x ``new_h`` with bilinear interpolation.

    Sample positions use half-pixel centre alignment and clamp-to-edge, and the
    result is rounded half-up to the nearest byte.  Weights are rational, so the
    sum is kept in integers and ties round exactly.
    """
    if new_w < 1 or new_h < 1:
        raise ValueError(f"target size must be positive, got {new_w}x{new_h}")
    src = img.data.astype(np.int64)
    x0, x1, fx, dx = _bilinear_axis(img.width, new_w)
    y0, y1, fy, dy = _bilinear_axis(img.height, new_h)
    rows = src[y0] * (dy - fy)[:, None] + src[y1] * fy[:, None]
    num = rows[:, x0] * (dx - fx)[None, :] + rows[:, x1] * fx[None, :]
    den = dx * dy
    return GrayImage(np.clip((2 * num + den) // (2 * den), 0, 255).astype(np.uint8))


def crop(img: GrayImage, x0: int, y0: int, w: int, h: int) -> GrayImage:
    if w < 1 or h < 1 or x0 < 0 or y0 < 0 or x0 + w > img.width or y0 + h > img.height:
        raise ValueError(
            f"crop rectangle ({x0}, {y0}, {w}, {h}) outside {img.width}x{img.height} image"
        )
    return GrayImage(img.data[y0:y0 + h, x0:x0 + w].copy())


def random_crop(img: GrayImage, w: int, h: int, rng: np.random.Generator) -> GrayImage:
    x0 = int(rng.integers(0, img.width - w + 1))
    y0 = int(rng.integers(0, img.height - h + 1))
    return crop(img, x0, y0, w, h)


# --- file formats ---------------------------------------------------------

_PNM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_pnm(raw: bytes) -> np.ndarray:
    magic = raw[:2]
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"unsupported PNM magic {magic!r}")
    pos = 2
    fields = []
    for _ in range(3):
        m = _PNM_TOKEN.match(raw, pos)
        if m is None:
            raise ValueError("truncated PNM header")
        fields.append(int(m.group(1)))
        pos = m.end()
    width, height, maxval = fields
    if maxval != 255:
        raise ValueError(f"only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace byte before the raster
    channels = 3 if magic == b"P6" else 1
    n = width * height * channels
    body = raw[pos:pos + n]
    if len(body) != n:
        raise ValueError("truncated PNM raster")
    arr = np.frombuffer(body, dtype=np.uint8)
    return arr.reshape(height, width, 3) if channels == 3 else arr.reshape(height, width)


def load_image(path: "str | os.PathLike") -> "GrayImage | RgbImage":
    """Load PGM/PPM (binary) or PNG.  Gray files give GrayImage, colour ones RgbImage."""
    path = Path(path)
    if path.suffix.lower() in (".pgm", ".ppm", ".pnm"):
        arr = _read_pnm(path.read_bytes())
    else:
        from PIL import Image

        with Image.open(path) as im:
            if im.mode in ("L", "I;16", "I", "1"):
                arr = np.asarray(im.convert("L"))
            else:
                arr = np.asarray(im.convert("RGB"))
    if arr.ndim == 2:
        return GrayImage(arr.copy())
    return RgbImage(arr.copy())


def load_rgb(path) -> RgbImage:
    img = load_image(path)
    return img.to_rgb() if isinstance(img, GrayImage) else img


def load_gray(path) -> GrayImage:
    img = load_image(path)
    if isinstance(img, RgbImage):
        raise ValueError(f"{path} is a colour image; extract a channel first")
    return img


def save_image(img: "GrayImage | RgbImage", path: "str | os.PathLike") -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".pgm", ".ppm"):
        magic = b"P6" if isinstance(img, RgbImage) else b"P5"
        header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
        path.write_bytes(header + img.data.tobytes())
    elif suffix == ".png":
        from PIL import Image

        Image.fromarray(img.data).save(path, format="PNG")
    else:
        raise ValueError(f"unsupported image format {suffix!r}")


def list_sequence(directory: "str | os.PathLike") -> list[Path]:
    """Frame files of a sequence directory in temporal (lexicographic) order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"sequence directory {directory} does not exist")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in FRAME_SUFFIXES)
