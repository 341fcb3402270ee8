import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fairscope.cli import main as cli_main
from fairscope.data import GenConfig

# one PASS/FAIL line per acceptance criterion, filled by test_acceptance
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


def small_gen(**overrides) -> GenConfig:
    """A 16x16 configuration that keeps pipeline tests fast."""
    base = GenConfig(
        height=16,
        width=16,
        n_train=48,
        n_val=8,
        n_test=32,
        frames=4,
        artifact_band=(7, 8),
        artifact_amplitude=0.05,
    )
    return replace(base, **overrides)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_config_file(tmp_path_factory):
    """JSON pipeline config over the small generator, with a short schedule."""
    import json

    root = tmp_path_factory.mktemp("small")
    cfg = {
        "data_dir": str(root / "data"),
        "out_dir": str(root / "run"),
        "concept_images": 40,
        "k": 2,
        "pca_dim": 4,
        "gen": small_gen().to_dict(),
        "train": {"epochs": 3, "batch_size": 32},
    }
    path = root / "config.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def small_data(small_config_file):
    """Small dataset plus concept bank written once per session through the CLI."""
    import json

    cfg = json.loads(small_config_file.read_text())
    assert cli_main(["generate", "--config", str(small_config_file), "--out", cfg["data_dir"]]) == 0
    return Path(cfg["data_dir"])
