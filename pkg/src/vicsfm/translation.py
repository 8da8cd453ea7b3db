"""Style translators that turn no-dye channel images into virtual-dye images.

A translator is any object with ``apply(GrayImage) -> GrayImage`` that keeps
the image size and is deterministic.  Three are provided:

* ``IdentityTranslator`` - passes images through unchanged.
* ``SyntheticDye`` - a procedural texturiser standing in for a trained model.
* ``ExternalTranslator`` - runs an external program over a PGM exchange
  directory, which is how a separately trained generator is attached.
"""
from __future__ import annotations

import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .imaging import Channel, GrayImage, load_gray, save_image


class TranslationError(RuntimeError):
    """An external translator failed or produced unusable output."""


class Translator(Protocol):
    def apply(self, img: GrayImage) -> GrayImage: ...


@dataclass(frozen=True)
class ChannelConfig:
    """Which no-dye channel feeds the translator and which dyed channel it imitates."""

    input_channel: Channel = Channel.GREEN
    output_domain_channel: Channel = Channel.RED

    def __post_init__(self):
        object.__setattr__(self, "input_channel", Channel.parse(self.input_channel))
        object.__setattr__(self, "output_domain_channel", Channel.parse(self.output_domain_channel))

    @property
    def label(self) -> str:
        names = {Channel.RED: "r", Channel.GREEN: "g", Channel.BLUE: "b"}
        return f"{names[self.input_channel]}2{names[self.output_domain_channel]}"


@dataclass(frozen=True)
class IdentityTranslator:
    direction: str = "A2B"

    def apply(self, img: GrayImage) -> GrayImage:
        return img


def _hash2(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """Integer lattice hash to uniform [0, 1)."""
    h = (ix.astype(np.uint64) * np.uint64(0x8DA6B343) ^ iy.astype(np.uint64) * np.uint64(0xD8163841)
         ^ np.uint64(seed & 0xFFFFFFFF) * np.uint64(0xCB1AB31F)) & np.uint64(0xFFFFFFFF)
    h = h.astype(np.uint32)
    h ^= h >> np.uint32(16)
    h *= np.uint32(0x7FEB352D)
    h ^= h >> np.uint32(15)
    h *= np.uint32(0x846CA68B)
    h ^= h >> np.uint32(16)
    return h.astype(np.float64) / 4294967296.0


def value_noise(height: int, width: int, cell: float, seed: int) -> np.ndarray:
    """Bilinearly interpolated lattice noise in [0, 1) with lattice spacing ``cell`` pixels."""
    gx = np.arange(width) / cell
    gy = np.arange(height) / cell
    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    fx = gx - x0
    fy = gy - y0
    X0, Y0 = np.meshgrid(x0, y0)
    FX, FY = np.meshgrid(fx, fy)
    n00 = _hash2(X0, Y0, seed)
    n10 = _hash2(X0 + 1, Y0, seed)
    n01 = _hash2(X0, Y0 + 1, seed)
    n11 = _hash2(X0 + 1, Y0 + 1, seed)
    return (n00 * (1 - FX) * (1 - FY) + n10 * FX * (1 - FY) + n01 * (1 - FX) * FY + n11 * FX * FY)


@dataclass(frozen=True)
class SyntheticDye:
    """Procedural virtual-dye texturiser.

    ``out = clamp(in * (1 - amplitude) + noise * amplitude * in)`` where the
    noise is hash-based lattice noise of cell size ``cell_scale``.  Scaling the
    noise by the input intensity keeps dark regions dark.  Before blending, the
    fine structure of the input (its difference from a ``cell_scale`` blur) is
    amplified by ``pooling`` to imitate dye collecting in surface crevices.
    """

    seed: int = 0
    amplitude: float = 0.5
    cell_scale: float = 8.0
    pooling: float = 0.0
    direction: str = "A2B"

    def __post_init__(self):
        if not 0.0 <= self.amplitude <= 1.0:
            raise ValueError("amplitude must lie in [0, 1]")
        if self.cell_scale <= 0:
            raise ValueError("cell_scale must be positive")
        if self.pooling < 0:
            raise ValueError("pooling must be non-negative")

    def apply(self, img: GrayImage) -> GrayImage:
        x = img.data.astype(np.float64)
        if self.pooling > 0:
            x = x + self.pooling * (x - gaussian_filter(x, self.cell_scale, mode="nearest"))
            x = np.clip(x, 0.0, 255.0)
        noise = value_noise(img.height, img.width, self.cell_scale, self.seed)
        out = x * (1.0 - self.amplitude) + noise * self.amplitude * x
        return GrayImage(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))


@dataclass(frozen=True)
class ExternalTranslator:
    """Runs ``command in_dir out_dir`` over PGM files; see ``translate_external_batch``."""

    command: tuple[str, ...]
    exchange_dir: str | None = None
    direction: str = "A2B"

    def __post_init__(self):
        cmd = self.command
        if isinstance(cmd, str):
            cmd = tuple(shlex.split(cmd))
        if not cmd:
            raise ValueError("external translator needs a command")
        object.__setattr__(self, "command", tuple(cmd))

    def apply(self, img: GrayImage) -> GrayImage:
        return self.apply_batch([img], ["frame"])[0]

    def apply_batch(self, imgs: Sequence[GrayImage], names: Sequence[str]) -> list[GrayImage]:
        if self.exchange_dir is not None:
            base = Path(self.exchange_dir)
            return translate_external_batch(self.command, base / "in", base / "out", imgs, names)
        with tempfile.TemporaryDirectory(prefix="vicsfm-xchg-") as tmp:
            return translate_external_batch(self.command, Path(tmp) / "in", Path(tmp) / "out", imgs, names)


def translate(t: Translator, img: GrayImage) -> GrayImage:
    out = t.apply(img)
    if (out.width, out.height) != (img.width, img.height):
        raise TranslationError(
            f"translator changed image size from {img.width}x{img.height} to {out.width}x{out.height}"
        )
    return out


def translate_many(t: Translator, imgs: Sequence[GrayImage], names: Sequence[str] | None = None) -> list[GrayImage]:
    names = list(names) if names is not None else [f"frame_{i:06d}" for i in range(len(imgs))]
    if isinstance(t, ExternalTranslator):
        return t.apply_batch(imgs, names)
    return [translate(t, im) for im in imgs]


def cycle_error(t_ab: Translator, t_ba: Translator, img: GrayImage) -> float:
    """Mean absolute pixel difference between ``img`` and its round trip through both translators."""
    back = translate(t_ba, translate(t_ab, img))
    return float(np.mean(np.abs(img.data.astype(np.float64) - back.data.astype(np.float64))))


def translate_external_batch(cmd, in_dir, out_dir, imgs: Sequence[GrayImage],
                             names: Sequence[str]) -> list[GrayImage]:
    """Translate a batch through an external program with one process invocation.

    Each image is written to ``in_dir/<name>.pgm``; the program is called as
    ``cmd in_dir out_dir`` and must write ``out_dir/<name>.pgm`` for every
    input with unchanged dimensions.
    """
    if len(imgs) != len(names):
        raise ValueError("need exactly one name per image")
    if len(set(names)) != len(names):
        raise ValueError("image names must be unique")
    if not imgs:
        return []
    argv = list(shlex.split(cmd) if isinstance(cmd, str) else cmd)
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    in_dir.mkdir(parents=True, exist_ok=True)
    out_dir.mkdir(parents=True, exist_ok=True)
    for img, name in zip(imgs, names):
        stale = out_dir / f"{name}.pgm"
        if stale.exists():
            stale.unlink()
        save_image(img, in_dir / f"{name}.pgm")
    try:
        proc = subprocess.run(argv + [os.fspath(in_dir), os.fspath(out_dir)], capture_output=True, text=True)
    except OSError as exc:
        raise TranslationError(f"could not start external translator {argv[0]!r}: {exc}") from exc
    if proc.returncode != 0:
        raise TranslationError(
            f"external translator exited with status {proc.returncode} on batch starting at frame "
            f"{names[0]!r}: {proc.stderr.strip()[-500:]}"
        )
    results = []
    for img, name in zip(imgs, names):
        path = out_dir / f"{name}.pgm"
        if not path.exists():
            raise TranslationError(f"external translator produced no output for frame {name!r}")
        try:
            out = load_gray(path)
        except ValueError as exc:
            raise TranslationError(f"unreadable translator output for frame {name!r}: {exc}") from exc
        if (out.width, out.height) != (img.width, img.height):
            raise TranslationError(
                f"frame {name!r}: translator output is {out.width}x{out.height}, expected {img.width}x{img.height}"
            )
        results.append(out)
    return results


def parse_translator(spec: "str | dict | None") -> Translator:
    """Build a translator from a config table or a compact string.

    Strings: ``identity``, ``dye`` / ``dye:seed=1,amplitude=0.5``, ``external:<command>``.
    """
    if spec is None:
        return SyntheticDye()
    if isinstance(spec, str):
        kind, _, rest = spec.partition(":")
        kind = kind.strip().lower()
        if kind == "external":
            return ExternalTranslator(rest)
        table: dict = {"kind": kind}
        for item in filter(None, (s.strip() for s in rest.split(","))):
            key, _, value = item.partition("=")
            table[key.strip()] = value.strip()
        spec = table
    spec = dict(spec)
    kind = str(spec.pop("kind", "dye")).lower()
    if kind == "identity":
        return IdentityTranslator(direction=spec.get("direction", "A2B"))
    if kind in ("dye", "synthetic", "syntheticdye", "synthetic_dye"):
        return SyntheticDye(
            seed=int(spec.get("seed", 0)),
            amplitude=float(spec.get("amplitude", SyntheticDye.amplitude)),
            cell_scale=float(spec.get("cell_scale", SyntheticDye.cell_scale)),
            pooling=float(spec.get("pooling", SyntheticDye.pooling)),
            direction=spec.get("direction", "A2B"),
        )
    if kind == "external":
        return ExternalTranslator(spec["command"], spec.get("exchange_dir"), spec.get("direction", "A2B"))
    raise ValueError(f"unknown translator kind {kind!r}")


def translator_config(t: Translator) -> dict:
    """Serialisable description of a translator (used for cache keys and manifests)."""
    if isinstance(t, IdentityTranslator):
        return {"kind": "identity", "direction": t.direction}
    if isinstance(t, SyntheticDye):
        return {"kind": "dye", "seed": t.seed, "amplitude": t.amplitude, "cell_scale": t.cell_scale,
                "pooling": t.pooling, "direction": t.direction}
    if isinstance(t, ExternalTranslator):
        return {"kind": "external", "command": list(t.command), "direction": t.direction}
    return {"kind": type(t).__name__}
