"""Staged reconstruction pipeline with content-hash caching and an artifact manifest.

Stages run in order; each writes into ``<work>/<stage>/`` and records a stamp
holding its cache key (hash of its parameters and of every input file's
content) and the hashes of its outputs.  A stage is reported ``cached`` when
the key matches and all recorded outputs are present and unchanged.
"""
from __future__ import annotations

import contextlib
import fcntl
import hashlib
import itertools
import json
import logging
import os
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .cleanup import remove_outliers_plane, robust_diagonal
from .config import ConfigError, PipelineConfig
from .evalharness import anchor_match_curve, table_metrics, write_eval_outputs
from .features import FeatureSet, detect_sift, match_arrays, read_features, read_matches, write_features, write_matches
from .imaging import GrayImage, RgbImage, extract_channel, list_sequence, load_image, load_rgb, save_image
from .mesh import Mesh, localize_frame, mesh_from_points, texture_mesh
from .ply import read_ply
from .sfm import Reconstruction, reconstruct_incremental, reprojection_stats, verify_matches
from .translation import translate_many

log = logging.getLogger(__name__)

STAGES = ("extract", "translate", "features", "match", "reconstruct", "clean", "mesh", "texture", "metrics")
MANIFEST = "manifest.json"
STAMP = ".stamp.json"
LOCK = ".lock"


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


class PipelineLockedError(RuntimeError):
    """Another pipeline instance holds the work directory."""


def sha256_file(path: "str | os.PathLike") -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# --- stage bodies (path in, path out; usable on their own) ---

def frame_names(directory: "str | os.PathLike") -> list[str]:
    return [p.stem for p in list_sequence(directory)]


def run_extract(input_dir: Path, out_dir: Path, channel) -> list[Path]:
    """One PGM per input frame with the chosen channel (gray inputs pass through)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = list_sequence(input_dir)
    if not frames:
        raise FileNotFoundError(f"no frames in {input_dir}")
    if len({p.stem for p in frames}) != len(frames):
        raise ValueError(f"{input_dir}: frame names must be unique ignoring the extension")
    written = []
    for p in frames:
        img = load_image(p)
        gray = extract_channel(img, channel) if isinstance(img, RgbImage) else img
        dst = out_dir / f"{p.stem}.pgm"
        save_image(gray, dst)
        written.append(dst)
    return written


def _load_pgms(directory: Path) -> tuple[list[str], list[GrayImage]]:
    paths = sorted(directory.glob("*.pgm"))
    return [p.stem for p in paths], [load_image(p) for p in paths]


def run_translate(in_dir: Path, out_dir: Path, translator) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    names, imgs = _load_pgms(in_dir)
    outs = translate_many(translator, imgs, names)
    written = []
    for name, img in zip(names, outs):
        dst = out_dir / f"{name}.pgm"
        save_image(img, dst)
        written.append(dst)
    return written


def run_features(in_dir: Path, out_dir: Path, params) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    names, imgs = _load_pgms(in_dir)
    written = []
    for name, img in zip(names, imgs):
        fs = detect_sift(img, params)
        dst = out_dir / f"{name}.sift"
        write_features(dst, fs, params.to_dict(), (img.width, img.height))
        written += [dst, dst.with_suffix(".json")]
    return written


def load_feature_dir(directory: Path) -> tuple[list[str], list[FeatureSet], tuple[int, int]]:
    paths = sorted(directory.glob("*.sift"))
    if not paths:
        raise FileNotFoundError(f"no feature files in {directory}")
    sizes = {tuple(json.loads(p.with_suffix(".json").read_text())["image_size"]) for p in paths}
    if len(sizes) != 1:
        raise ValueError("all frames of a sequence must share one image size")
    return [p.stem for p in paths], [read_features(p) for p in paths], sizes.pop()


def run_match(features_dir: Path, out_file: Path, cfg: PipelineConfig) -> list[Path]:
    """Exhaustive matching of every frame pair followed by two-view verification."""
    out_file.parent.mkdir(parents=True, exist_ok=True)
    _, feats, (w, h) = load_feature_dir(features_dir)
    m = cfg.section("match")
    raw = {}
    for a, b in itertools.combinations(range(len(feats)), 2):
        idx, _ = match_arrays(feats[a].descriptors, feats[b].descriptors, m["ratio"])
        if len(idx):
            raw[(a, b)] = idx
    kp = {i: f.xy for i, f in enumerate(feats)}
    verified = verify_matches(kp, raw, cfg.intrinsics(w, h), m["verify_threshold_px"], m["min_verified"],
                              seed=cfg.table["seeds"]["ransac"], static_px=m["static_px"])
    write_matches(out_file, verified)
    return [out_file]


def _feature_colors(rgb_paths: list[Path], feats: list[FeatureSet]) -> dict[int, np.ndarray]:
    out = {}
    for i, (p, fs) in enumerate(zip(rgb_paths, feats)):
        img = load_rgb(p)
        xy = np.clip(np.floor(fs.xy + 0.5).astype(np.int64), 0, [img.width - 1, img.height - 1])
        out[i] = img.data[xy[:, 1], xy[:, 0]]
    return out


def run_reconstruct(features_dir: Path, matches_file: Path, out_dir: Path, cfg: PipelineConfig,
                    rgb_paths: list[Path] | None = None) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    _, feats, (w, h) = load_feature_dir(features_dir)
    matches = read_matches(matches_file)
    kp = {i: f.xy for i, f in enumerate(feats)}
    colors = _feature_colors(rgb_paths, feats) if rgb_paths else None
    recon = reconstruct_incremental(kp, matches, cfg.intrinsics(w, h), cfg.incremental_options(),
                                    seed=cfg.table["seeds"]["ransac"], colors=colors)
    stats = reprojection_stats(recon)
    recon.save_json(out_dir / "reconstruction.json")
    recon.save_ply(out_dir / "points.ply")
    summary = {"frames": len(recon.poses), "points": len(recon.points), "observations": recon.n_observations,
               "reprojection_mean_px": stats.mean, "reprojection_rmse_px": stats.rmse,
               "reprojection_max_px": stats.max, "intrinsics": recon.intrinsics.to_dict()}
    (out_dir / "stats.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return [out_dir / "reconstruction.json", out_dir / "points.ply", out_dir / "stats.json"]


def run_clean(recon_file: Path, out_dir: Path, cfg: PipelineConfig) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    c = cfg.section("cleanup")
    recon = Reconstruction.load_json(recon_file)
    cleaned = remove_outliers_plane(recon, c["mode"], c["threshold_factor"], c["plane_threshold_factor"],
                                    seed=cfg.table["seeds"]["cleanup"])
    cleaned.save_json(out_dir / "reconstruction.json")
    cleaned.save_ply(out_dir / "points.ply")
    return [out_dir / "reconstruction.json", out_dir / "points.ply"]


def mesh_voxel_size(points: np.ndarray, mesh_cfg: dict) -> float:
    if mesh_cfg["voxel_size"] > 0:
        return float(mesh_cfg["voxel_size"])
    return float(mesh_cfg["voxel_fraction"]) * robust_diagonal(points)


def run_mesh(recon_file: Path, out_file: Path, cfg: PipelineConfig) -> list[Path]:
    out_file.parent.mkdir(parents=True, exist_ok=True)
    m = cfg.section("mesh")
    _, P = Reconstruction.load_json(recon_file).point_array()
    mesh = mesh_from_points(P, mesh_voxel_size(P, m), m["iso"], m["smoothing"], m["snap"])
    mesh.save_ply(out_file)
    return [out_file]


def load_mesh(path: "str | os.PathLike") -> Mesh:
    d = read_ply(path)
    if "faces" not in d:
        raise ValueError(f"{path} holds no faces")
    return Mesh(d["vertices"], d["faces"], d["colors"])


def run_texture(mesh_file: Path, recon_file: Path, rgb_paths: list[Path], out_file: Path) -> list[Path]:
    out_file.parent.mkdir(parents=True, exist_ok=True)
    recon = Reconstruction.load_json(recon_file)
    images = {i: load_rgb(p) for i, p in enumerate(rgb_paths) if i in recon.poses}
    textured = texture_mesh(load_mesh(mesh_file), recon, images)
    textured.save_ply(out_file)
    return [out_file]


def run_metrics(features_dir: Path, recon_file: Path, out_dir: Path, cfg: PipelineConfig,
                label: str | None = None) -> list[Path]:
    e = cfg.section("eval")
    _, feats, _ = load_feature_dir(features_dir)
    recon = Reconstruction.load_json(recon_file)
    row = table_metrics(recon, len(feats), label or e["label"] or cfg.channels().label)
    curve = None
    if len(feats) >= e["window"] + 1:
        curve = anchor_match_curve(feats, e["window"], e["stride"] or None, e["ratio"], e["samples"] or None)
    else:
        log.warning("only %d frames; the anchor match curve needs %d and is skipped", len(feats), e["window"] + 1)
    return [Path(p) for p in write_eval_outputs(out_dir, [row], curve)]


def run_localize(recon_file: Path, mesh_file: Path, frame_id: int, image_path: Path, out_file: Path) -> list[Path]:
    out_file.parent.mkdir(parents=True, exist_ok=True)
    recon = Reconstruction.load_json(recon_file)
    localize_frame(recon, load_mesh(mesh_file), frame_id, load_rgb(image_path), out_file)
    return [out_file]


# --- orchestration ---

@dataclass
class StageResult:
    name: str
    status: str  # "ran" or "cached"
    key: str
    artifacts: list[dict]


@dataclass
class RunResult:
    stages: list[StageResult]
    manifest_path: Path

    @property
    def statuses(self) -> dict[str, str]:
        return {s.name: s.status for s in self.stages}


@contextlib.contextmanager
def work_dir_lock(work: Path):
    work.mkdir(parents=True, exist_ok=True)
    fh = open(work / LOCK, "w")
    try:
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise PipelineLockedError(f"work directory {work} is in use by another pipeline run") from None
        yield
    finally:
        fh.close()


class Pipeline:
    def __init__(self, cfg: PipelineConfig):
        cfg.validate_paths()
        self.cfg = cfg
        self.work = cfg.work_dir
        self.input = cfg.input_dir
        self.rgb_paths = list_sequence(self.input)
        if not self.rgb_paths:
            raise ConfigError(f"input directory {self.input} holds no frames")

    def stage_dir(self, name: str) -> Path:
        return self.work / name

    def _specs(self) -> list[tuple[str, dict, Callable[[], list[Path]], Callable[[], list[Path]]]]:
        """(name, params, input files, body) for every stage in order."""
        cfg, d = self.cfg, self.stage_dir
        t = cfg.table
        outputs = lambda name: lambda: self._recorded_outputs(name)  # noqa: E731
        return [
            ("extract", {"channel": t["channel"]}, lambda: self.rgb_paths,
             lambda: run_extract(self.input, d("extract"), cfg.channels().input_channel)),
            ("translate", {"translate": t["translate"]}, outputs("extract"),
             lambda: run_translate(d("extract"), d("translate"), cfg.translator())),
            ("features", {"sift": t["sift"]}, outputs("translate"),
             lambda: run_features(d("translate"), d("features"), cfg.sift_params())),
            ("match", {"match": t["match"], "camera": t["camera"], "seeds": t["seeds"]}, outputs("features"),
             lambda: run_match(d("features"), d("match") / "matches.bin", cfg)),
            ("reconstruct", {"sfm": t["sfm"], "bundle": t["bundle"], "camera": t["camera"], "seeds": t["seeds"]},
             lambda: self._recorded_outputs("features") + self._recorded_outputs("match") + self.rgb_paths,
             lambda: run_reconstruct(d("features"), d("match") / "matches.bin", d("reconstruct"), cfg,
                                     self.rgb_paths)),
            ("clean", {"cleanup": t["cleanup"], "seeds": t["seeds"]}, outputs("reconstruct"),
             lambda: run_clean(d("reconstruct") / "reconstruction.json", d("clean"), cfg)),
            ("mesh", {"mesh": t["mesh"]}, outputs("clean"),
             lambda: run_mesh(d("clean") / "reconstruction.json", d("mesh") / "mesh.ply", cfg)),
            ("texture", {}, lambda: self._recorded_outputs("mesh") + self._recorded_outputs("clean") + self.rgb_paths,
             lambda: run_texture(d("mesh") / "mesh.ply", d("clean") / "reconstruction.json", self.rgb_paths,
                                 d("texture") / "textured.ply")),
            ("metrics", {"eval": t["eval"], "channel": t["channel"]},
             lambda: self._recorded_outputs("features") + self._recorded_outputs("reconstruct"),
             lambda: run_metrics(d("features"), d("reconstruct") / "reconstruction.json", d("metrics"), cfg)),
        ]

    def _stamp_path(self, name: str) -> Path:
        return self.stage_dir(name) / STAMP

    def _read_stamp(self, name: str) -> dict | None:
        try:
            return json.loads(self._stamp_path(name).read_text())
        except (FileNotFoundError, json.JSONDecodeError):
            return None

    def _recorded_outputs(self, name: str) -> list[Path]:
        stamp = self._read_stamp(name)
        if stamp is None:
            raise RuntimeError(f"upstream stage '{name}' has no recorded outputs")
        return [self.work / a["path"] for a in stamp["artifacts"]]

    def _rel(self, p: Path) -> str:
        try:
            return p.resolve().relative_to(self.work.resolve()).as_posix()
        except ValueError:
            return p.resolve().relative_to(self.input.resolve()).as_posix()

    def _key(self, name: str, params: dict, inputs: list[Path]) -> str:
        payload = {"stage": name, "version": __version__, "params": params,
                   "inputs": sorted((self._rel(p), sha256_file(p)) for p in inputs)}
        return hashlib.sha256(_canonical(payload).encode()).hexdigest()

    def _valid_cache(self, name: str, key: str) -> dict | None:
        stamp = self._read_stamp(name)
        if stamp is None or stamp.get("key") != key:
            return None
        for a in stamp["artifacts"]:
            p = self.work / a["path"]
            if not p.is_file() or sha256_file(p) != a["sha256"]:
                return None
        return stamp

    def run(self, force: bool = False) -> RunResult:
        with work_dir_lock(self.work):
            results = []
            for name, params, inputs, body in self._specs():
                try:
                    key = self._key(name, params, inputs())
                    stamp = None if force else self._valid_cache(name, key)
                    if stamp is not None:
                        results.append(StageResult(name, "cached", key, stamp["artifacts"]))
                        log.info("%-11s cached", name)
                        continue
                    sdir = self.stage_dir(name)
                    if sdir.exists():
                        shutil.rmtree(sdir)
                    sdir.mkdir(parents=True)
                    written = body()
                    artifacts = [{"path": self._rel(p), "sha256": sha256_file(p), "bytes": p.stat().st_size}
                                 for p in sorted(written)]
                    self._stamp_path(name).write_text(
                        json.dumps({"key": key, "artifacts": artifacts}, indent=2, sort_keys=True) + "\n")
                    results.append(StageResult(name, "ran", key, artifacts))
                    log.info("%-11s ran (%d artifacts)", name, len(artifacts))
                except Exception as exc:
                    raise StageError(name, exc) from exc
            manifest = self.work / MANIFEST
            manifest.write_text(self.manifest_text(results))
            return RunResult(results, manifest)

    def manifest_text(self, results: list[StageResult]) -> str:
        """Stage keys and artifact hashes only: no timestamps or cache statuses, so reruns are identical."""
        doc = {
            "version": __version__,
            "stages": [{"name": r.name, "key": r.key, "artifacts": r.artifacts} for r in results],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def run_pipeline(cfg: PipelineConfig, force: bool = False) -> RunResult:
    return Pipeline(cfg).run(force)
