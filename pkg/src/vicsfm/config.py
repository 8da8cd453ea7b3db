"""Pipeline configuration: per-stage TOML tables with dotted command-line overrides."""
from __future__ import annotations

import copy
import json
import math
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .cleanup import normalize_mode
from .evalharness import DEFAULT_WINDOW
from .features import SiftParams
from .imaging import Channel
from .sfm import BundleOptions, CameraIntrinsics, IncrementalOptions
from .translation import ChannelConfig, Translator, parse_translator


class ConfigError(ValueError):
    """Invalid configuration file, override or path."""


DEFAULTS: dict = {
    "input": {"dir": ""},
    "work": {"dir": ""},
    "channel": {"input": "green", "output": "red"},
    # the image-fixed noise of the dye adds no scene-attached texture; the detail gain does
    "translate": {"kind": "dye", "seed": 0, "amplitude": 0.1, "cell_scale": 8.0, "pooling": 12.0, "command": ""},
    "sift": SiftParams().to_dict(),
    "match": {"ratio": 0.8, "verify_threshold_px": 4.0, "min_verified": 15, "static_px": 2.0},
    "camera": {"focal": 0.0, "k1": 0.0},
    "sfm": {k: v for k, v in IncrementalOptions().to_dict().items() if k != "bundle"},
    "bundle": {k: v for k, v in asdict(BundleOptions()).items() if k != "refine_intrinsics"},
    "cleanup": {"mode": "beyond", "threshold_factor": 0.5, "plane_threshold_factor": 0.01},
    "mesh": {"voxel_size": 0.0, "voxel_fraction": 0.025, "iso": 0.3, "smoothing": 2, "snap": True},
    "eval": {"window": DEFAULT_WINDOW, "stride": 0, "samples": 0, "ratio": 0.8, "label": ""},
    "seeds": {"ransac": 0, "cleanup": 0},
}


def _merge(base: dict, extra: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        name = f"{where}{key}"
        if key not in out:
            raise ConfigError(f"unknown configuration key {name!r}")
        if isinstance(out[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{name!r} must be a table")
            out[key] = _merge(out[key], value, name + ".")
        else:
            out[key] = _coerce(out[key], value, name)
    return out


def _coerce(default, value, name: str):
    """Convert ``value`` to the type of ``default``."""
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                low = value.strip().lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                return low in ("true", "1", "yes")
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            v = float(value)
            if not math.isfinite(v):
                raise ValueError(value)
            return v
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name!r}: cannot interpret {value!r} as {type(default).__name__}") from None


def parse_overrides(pairs) -> dict:
    """``[("sfm.pnp_threshold_px", "3")]`` to a nested table of raw strings."""
    out: dict = {}
    for dotted, value in pairs:
        keys = dotted.split(".")
        if len(keys) != 2 or not all(keys):
            raise ConfigError(f"override {dotted!r} must have the form section.key")
        out.setdefault(keys[0], {})[keys[1]] = value
    return out


def load_toml(path: "str | os.PathLike") -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"configuration file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def dump_toml(table: dict) -> str:
    """TOML text for a two-level table of scalars (the only shape used here)."""
    lines = []
    for section in table:
        lines.append(f"[{section}]")
        for key, value in table[section].items():
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    return "\n".join(lines)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return json.dumps(str(v))


@dataclass(frozen=True)
class PipelineConfig:
    """Fully merged configuration.  ``base_dir`` resolves relative paths."""

    table: dict
    base_dir: Path = Path(".")

    @classmethod
    def build(cls, path: "str | os.PathLike | None" = None, overrides: dict | None = None) -> "PipelineConfig":
        table = DEFAULTS
        base = Path(".")
        if path is not None:
            table = _merge(table, load_toml(path))
            base = Path(path).resolve().parent
        if overrides:
            table = _merge(table, overrides)
        cfg = cls(table, base)
        cfg.check_values()
        return cfg

    def section(self, name: str) -> dict:
        return dict(self.table[name])

    def path(self, section: str) -> Path:
        raw = self.table[section]["dir"]
        if not raw:
            raise ConfigError(f"{section}.dir is not set")
        p = Path(raw)
        return p if p.is_absolute() else (self.base_dir / p)

    @property
    def input_dir(self) -> Path:
        return self.path("input")

    @property
    def work_dir(self) -> Path:
        return self.path("work")

    def check_values(self) -> None:
        """Value checks that do not touch the file system."""
        try:
            self.channels()
            self.translator()
            self.sift_params()
            self.incremental_options()
        except (ValueError, KeyError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None
        try:
            normalize_mode(self.table["cleanup"]["mode"])
        except ValueError as exc:
            raise ConfigError(f"cleanup.mode: {exc}") from None
        m = self.table["mesh"]
        if m["voxel_size"] < 0 or m["voxel_fraction"] <= 0 or not 0 < m["iso"] < 1 or m["smoothing"] < 0:
            raise ConfigError("mesh: voxel sizes must be positive, iso in (0, 1), smoothing >= 0")
        e = self.table["eval"]
        if e["window"] < 1 or e["stride"] < 0 or e["samples"] < 0 or not 0 < e["ratio"] < 1:
            raise ConfigError("eval: window >= 1, stride and samples >= 0 (0 = default), ratio in (0, 1)")
        mt = self.table["match"]
        if not 0 < mt["ratio"] < 1 or mt["verify_threshold_px"] <= 0 or mt["min_verified"] < 8:
            raise ConfigError("match: ratio in (0, 1), verify_threshold_px > 0, min_verified >= 8")
        if self.table["camera"]["focal"] < 0:
            raise ConfigError("camera.focal must be positive (or 0 for the automatic seed)")

    def validate_paths(self) -> None:
        inp = self.input_dir
        if not inp.is_dir():
            raise ConfigError(f"input directory {inp} does not exist")
        self.work_dir  # must be set

    def channels(self) -> ChannelConfig:
        c = self.table["channel"]
        return ChannelConfig(Channel.parse(c["input"]), Channel.parse(c["output"]))

    def translator(self) -> Translator:
        t = self.section("translate")
        if t["kind"] == "external":
            if not t["command"]:
                raise ConfigError("translate.command is required for the external translator")
            return parse_translator({"kind": "external", "command": t["command"]})
        t.pop("command")
        return parse_translator(t)

    def sift_params(self) -> SiftParams:
        return SiftParams(**self.table["sift"])

    def incremental_options(self) -> IncrementalOptions:
        b = dict(self.table["bundle"])
        return IncrementalOptions(**self.table["sfm"], bundle=BundleOptions(**b))

    def intrinsics(self, width: int, height: int) -> CameraIntrinsics:
        cam = self.table["camera"]
        seed = CameraIntrinsics.default_for(width, height)
        focal = cam["focal"] if cam["focal"] > 0 else seed.focal
        return CameraIntrinsics(focal, seed.cx, seed.cy, cam["k1"])

    def stage_params(self, *sections: str) -> dict:
        return {s: self.section(s) for s in sections}

    def to_toml(self) -> str:
        return dump_toml(self.table)
