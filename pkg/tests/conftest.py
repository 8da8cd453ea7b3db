import json
import shutil
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def frozen() -> dict:
    return json.loads((DATA / "frozen.json").read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


SMALL_SEQUENCE = ["--frames", "12", "--width", "160", "--height", "120", "--sweep-deg", "90", "--points", "2000",
                  "--seed", "0"]


@pytest.fixture(scope="session")
def synth_template(tmp_path_factory) -> Path:
    """A small rendered sequence with its config.toml, generated once per session."""
    from vicsfm.cli import main

    out = tmp_path_factory.mktemp("synth") / "seq"
    assert main(["synth", "--output", str(out)] + SMALL_SEQUENCE) == 0
    return out


@pytest.fixture
def sequence(synth_template, tmp_path) -> Path:
    """Private copy of the small sequence (frames, scene.json, config.toml, no work dir)."""
    dst = tmp_path / "seq"
    shutil.copytree(synth_template, dst, ignore=shutil.ignore_patterns("work"))
    return dst
