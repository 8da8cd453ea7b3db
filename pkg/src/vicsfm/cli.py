"""Command-line entry point: one subcommand per pipeline stage plus ``run`` and ``synth``.

Every configuration value can be given on the command line with its dotted
name, e.g. ``--sfm.pnp_threshold_px 3`` or ``--mesh.iso=0.4``.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .config import ConfigError, PipelineConfig, dump_toml, parse_overrides
from .evalharness import compare_rows, read_metrics_csv

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _split_overrides(extra: list[str]) -> list[tuple[str, str]]:
    pairs, i = [], 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or "." not in tok:
            raise ConfigError(f"unrecognised argument {tok!r}")
        name = tok[2:]
        if "=" in name:
            name, value = name.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"{tok} needs a value")
            value = extra[i + 1]
            i += 2
        pairs.append((name, value))
    return pairs


def _config(args, extra) -> PipelineConfig:
    return PipelineConfig.build(args.config, parse_overrides(_split_overrides(extra)))


def _report(paths) -> None:
    for p in paths:
        print(p)


def cmd_extract(args, cfg):
    _report(pl.run_extract(Path(args.input), Path(args.output), cfg.channels().input_channel))


def cmd_translate(args, cfg):
    _report(pl.run_translate(Path(args.input), Path(args.output), cfg.translator()))


def cmd_features(args, cfg):
    _report(pl.run_features(Path(args.input), Path(args.output), cfg.sift_params()))


def cmd_match(args, cfg):
    _report(pl.run_match(Path(args.features), Path(args.output), cfg))


def cmd_reconstruct(args, cfg):
    rgb = pl.list_sequence(args.images) if args.images else None
    _report(pl.run_reconstruct(Path(args.features), Path(args.matches), Path(args.output), cfg, rgb))


def cmd_clean(args, cfg):
    _report(pl.run_clean(Path(args.recon), Path(args.output), cfg))


def cmd_mesh(args, cfg):
    _report(pl.run_mesh(Path(args.recon), Path(args.output), cfg))


def cmd_localize(args, cfg):
    work = cfg.work_dir if cfg.table["work"]["dir"] else None
    recon = args.recon or (work and work / "clean" / "reconstruction.json")
    mesh = args.mesh or (work and work / "texture" / "textured.ply")
    out = args.output or (work / "localize" / "localized.ply" if work else Path("localized.ply"))
    image = args.image
    if image is None and cfg.table["input"]["dir"]:
        frames = pl.list_sequence(cfg.input_dir)
        if not 0 <= args.frame < len(frames):
            raise ConfigError(f"frame {args.frame} is outside the input sequence of {len(frames)} frames")
        image = frames[args.frame]
    if recon is None or mesh is None or image is None:
        raise ConfigError("localize needs --recon, --mesh and --image (or a config with input and work dirs)")
    _report(pl.run_localize(Path(recon), Path(mesh), args.frame, Path(image), Path(out)))


def cmd_eval(args, cfg):
    out = Path(args.output)
    if args.compare:
        rows = [row for path in args.compare for row in read_metrics_csv(Path(path).read_text())]
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.csv").write_text(compare_rows(rows).to_csv())
        _report([out / "comparison.csv"])
        return
    if not (args.features and args.recon):
        raise ConfigError("eval needs --features and --recon (or --compare)")
    _report(pl.run_metrics(Path(args.features), Path(args.recon), out, cfg, args.label))


def cmd_synth(args, cfg):
    from .imaging import RgbImage, save_image
    from .synthlab import SurfaceTexture, make_scene, render_views

    out = Path(args.output)
    frames_dir = out / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    scene = make_scene(args.points, args.frames, noise_px=0.0, seed=args.seed, width=args.width,
                       height=args.height, orbit_fraction=args.orbit_fraction, sweep_deg=args.sweep_deg)
    texture = SurfaceTexture(seed=scene.texture_seed, amplitude=args.texture_amplitude)
    for i, img in enumerate(render_views(scene, texture)):
        save_image(RgbImage(np.repeat(img.data[:, :, None], 3, axis=2)), frames_dir / f"frame_{i:06d}.png")
    scene.save_json(out / "scene.json")
    table = {"input": {"dir": "frames"}, "work": {"dir": "work"},
             "camera": {"focal": float(scene.intrinsics.focal)}}
    (out / "config.toml").write_text(dump_toml(table))
    print(out / "config.toml")


def cmd_run(args, cfg):
    result = pl.run_pipeline(cfg, force=args.force)
    for s in result.stages:
        print(f"{s.name:<12}{s.status}")
    print(result.manifest_path)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="vicsfm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("extract-channel", parents=[common], help="write one channel of each frame as PGM")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("translate", parents=[common], help="apply the configured style translator")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_translate)

    s = sub.add_parser("features", parents=[common], help="detect SIFT features")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("match", parents=[common], help="exhaustive matching with two-view verification")
    s.add_argument("--features", required=True)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_match)

    s = sub.add_parser("reconstruct", parents=[common], help="incremental structure from motion")
    s.add_argument("--features", required=True)
    s.add_argument("--matches", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--images", help="RGB frames used to color the points")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("clean", parents=[common], help="plane-referenced outlier removal")
    s.add_argument("--recon", required=True)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_clean)

    s = sub.add_parser("mesh", parents=[common], help="mesh the point cloud")
    s.add_argument("--recon", required=True)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_mesh)

    s = sub.add_parser("localize", parents=[common], help="project one frame onto the mesh")
    s.add_argument("--frame", type=int, required=True)
    s.add_argument("--recon")
    s.add_argument("--mesh")
    s.add_argument("--image")
    s.add_argument("--output")
    s.set_defaults(func=cmd_localize)

    s = sub.add_parser("eval", parents=[common], help="metrics table and anchor match curve")
    s.add_argument("--features")
    s.add_argument("--recon")
    s.add_argument("--output", required=True)
    s.add_argument("--label")
    s.add_argument("--compare", nargs="+", metavar="METRICS_CSV", help="compare rows of existing metrics files")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", parents=[common], help="render a synthetic sequence with ground truth")
    s.add_argument("--output", required=True)
    s.add_argument("--frames", type=int, default=40)
    s.add_argument("--points", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--width", type=int, default=320)
    s.add_argument("--height", type=int, default=240)
    s.add_argument("--texture-amplitude", type=float, default=1.0)
    s.add_argument("--sweep-deg", type=float, default=360.0, help="arc of the camera orbit")
    s.add_argument("--orbit-fraction", type=float, default=0.5, help="orbit radius relative to the semi-axes")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("run", parents=[common], help="run the full pipeline with caching")
    s.add_argument("--force", action="store_true", help="ignore cached stage outputs")
    s.set_defaults(func=cmd_run)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args, extra)
        if args.command == "run":
            cfg.validate_paths()
        args.func(args, cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except pl.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (pl.PipelineLockedError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
