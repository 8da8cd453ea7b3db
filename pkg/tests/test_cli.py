import subprocess
import sys

import pytest

from vicsfm.cli import EXIT_CONFIG, EXIT_OK, EXIT_STAGE, main
from vicsfm.evalharness import MetricsRow, read_metrics_csv, write_metrics_csv
from vicsfm.pipeline import work_dir_lock


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_help_lists_subcommands():
    out = subprocess.run([sys.executable, "-m", "vicsfm.cli", "--help"], capture_output=True, text=True).stdout
    for cmd in ("extract-channel", "translate", "features", "match", "reconstruct", "clean", "mesh", "localize",
                "eval", "synth", "run"):
        assert cmd in out


def test_run_and_rerun(sequence, capsys):
    code, out, _ = run(["run", "--config", sequence / "config.toml"], capsys)
    assert code == EXIT_OK
    statuses = [line.split()[-1] for line in out.splitlines()[:-1]]
    assert statuses == ["ran"] * 9 and out.strip().endswith("manifest.json")
    code, out, _ = run(["run", "--config", sequence / "config.toml"], capsys)
    assert code == EXIT_OK and [line.split()[-1] for line in out.splitlines()[:-1]] == ["cached"] * 9


def test_missing_input_dir_is_config_error(sequence, capsys):
    code, _, err = run(["run", "--config", sequence / "config.toml", "--input.dir", sequence / "nope"], capsys)
    assert code == EXIT_CONFIG and "does not exist" in err
    assert not (sequence / "work").exists()


@pytest.mark.parametrize("extra", [["--sfm.bogus", "1"], ["--mesh.iso=2"], ["--sfm.pnp_threshold_px"], ["stray"]])
def test_bad_overrides(sequence, capsys, extra):
    code, _, err = run(["run", "--config", sequence / "config.toml"] + extra, capsys)
    assert code == EXIT_CONFIG and "configuration error" in err


def test_missing_config_file(tmp_path, capsys):
    assert run(["run", "--config", tmp_path / "none.toml"], capsys)[0] == EXIT_CONFIG


def test_stage_failure_exit_code(sequence, capsys):
    code, _, err = run(["run", "--config", sequence / "config.toml", "--translate.kind", "external",
                        "--translate.command", "definitely-not-a-command-xyz"], capsys)
    assert code == EXIT_STAGE and "translate" in err


def test_locked_work_dir(sequence, capsys):
    with work_dir_lock(sequence / "work"):
        code, _, err = run(["run", "--config", sequence / "config.toml"], capsys)
    assert code == EXIT_STAGE and "in use" in err


def test_individual_stages(sequence, capsys, tmp_path):
    w = tmp_path / "w"
    cfg = ["--config", sequence / "config.toml"]
    steps = [
        ["extract-channel", "--input", sequence / "frames", "--output", w / "g"],
        ["translate", "--input", w / "g", "--output", w / "t"],
        ["features", "--input", w / "t", "--output", w / "f"],
        ["match", "--features", w / "f", "--output", w / "m.bin"],
        ["reconstruct", "--features", w / "f", "--matches", w / "m.bin", "--output", w / "r",
         "--images", sequence / "frames"],
        ["clean", "--recon", w / "r" / "reconstruction.json", "--output", w / "c"],
        ["mesh", "--recon", w / "c" / "reconstruction.json", "--output", w / "mesh.ply"],
        ["localize", "--frame", "2", "--recon", w / "c" / "reconstruction.json", "--mesh", w / "mesh.ply",
         "--image", sorted((sequence / "frames").iterdir())[2], "--output", w / "loc.ply"],
        ["eval", "--features", w / "f", "--recon", w / "r" / "reconstruction.json", "--output", w / "e",
         "--label", "plain"],
    ]
    for argv in steps:
        code, out, err = run(argv + cfg, capsys)
        assert code == EXIT_OK, (argv[0], err)
        assert out.strip(), argv[0]
    assert len(list((w / "g").glob("*.pgm"))) == 12
    assert (w / "loc.ply").stat().st_size > 0
    rows = read_metrics_csv((w / "e" / "metrics.csv").read_text())
    assert rows[0].label == "plain" and rows[0].input_images == 12
    assert (w / "e" / "curve.csv").exists() and (w / "e" / "curve.svg").exists()


def test_localize_from_config(sequence, capsys):
    assert run(["run", "--config", sequence / "config.toml"], capsys)[0] == EXIT_OK
    code, out, _ = run(["localize", "--config", sequence / "config.toml", "--frame", "1"], capsys)
    assert code == EXIT_OK and (sequence / "work" / "localize" / "localized.ply").exists()
    code, _, err = run(["localize", "--config", sequence / "config.toml", "--frame", "99"], capsys)
    assert code == EXIT_CONFIG


def test_localize_unregistered_frame(sequence, capsys, tmp_path):
    assert run(["run", "--config", sequence / "config.toml"], capsys)[0] == EXIT_OK
    work = sequence / "work"
    code, _, err = run(["localize", "--frame", "40", "--recon", work / "clean" / "reconstruction.json",
                        "--mesh", work / "texture" / "textured.ply", "--image",
                        sorted((sequence / "frames").iterdir())[0], "--output", tmp_path / "x.ply"], capsys)
    assert code == EXIT_STAGE and "not registered" in err


def test_eval_compare(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_text(write_metrics_csv([MetricsRow("raw", 439, 217, 10, 5.0)]))
    b.write_text(write_metrics_csv([MetricsRow("vic", 439, 438, 10, 5.0)]))
    code, _, _ = run(["eval", "--compare", a, b, "--output", tmp_path / "cmp"], capsys)
    assert code == EXIT_OK
    lines = (tmp_path / "cmp" / "comparison.csv").read_text().splitlines()
    header = lines[0].split(",")
    col = header.index("best_reconstructed_pct")
    assert lines[1].split(",")[col] == "0" and lines[2].split(",")[col] == "1"


def test_eval_needs_inputs(tmp_path, capsys):
    assert run(["eval", "--output", tmp_path], capsys)[0] == EXIT_CONFIG


def test_synth_writes_consumable_sequence(tmp_path, capsys):
    code, out, _ = run(["synth", "--output", tmp_path / "s", "--frames", "3", "--points", "100", "--width", "64",
                        "--height", "48"], capsys)
    assert code == EXIT_OK
    assert len(list((tmp_path / "s" / "frames").glob("*.png"))) == 3
    assert (tmp_path / "s" / "scene.json").exists()
    assert out.strip().endswith("config.toml")
