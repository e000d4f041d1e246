"""
Pytest configuration: isolated environment plus tiny synthetic datasets and models.
"""

import os
import sys

import pytest

# Add the src directory to the path to ensure proper importing
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "../src")))

from pava.model import ClassifierConfig, ModelSettings, build_model  # noqa: E402
from pava.synth import SynthConfig, synth_dataset  # noqa: E402

PAVA_ENV_KEYS = ["PAVA_LOG_LEVEL", "PAVA_WORKERS", "PAVA_DEVICE", "PAVA_SEED", "PAVA_MASKRCNN_WEIGHTS"]


# Disable coverage warnings about modules already imported
def pytest_configure(config):
    import warnings

    try:
        from coverage.exceptions import CoverageWarning
    except ImportError:
        return
    warnings.filterwarnings("ignore", category=CoverageWarning, message="Module .* was previously imported")


@pytest.fixture(autouse=True)
def isolated_env(tmp_path, monkeypatch):
    """Keep user and project .pava.env files and PAVA_* variables out of every test."""
    home = tmp_path / "home"
    home.mkdir()
    monkeypatch.setenv("HOME", str(home))
    monkeypatch.chdir(tmp_path)
    for key in PAVA_ENV_KEYS:
        # setenv first so monkeypatch restores the key even if load_dotenv sets it later
        monkeypatch.setenv(key, "")
        monkeypatch.delenv(key)
    yield home


@pytest.fixture
def synth_config():
    """Four classes, four clips each, eight 32×32 frames."""
    return SynthConfig(classes=4, clips_per_class=4, frames=8, resolution=(32, 32), seed=7)


@pytest.fixture
def synth_dir(tmp_path, synth_config):
    out = tmp_path / "synth"
    synth_dataset(synth_config, out, workers=1)
    return out


@pytest.fixture
def synth_manifest(synth_dir):
    from pava.dataset import read_manifest

    return read_manifest(synth_dir / "manifest.jsonl")


@pytest.fixture
def tiny_settings():
    return ModelSettings(
        backbone="tiny_test_backbone",
        pretrained=False,
        classifier=ClassifierConfig(feature_dim=8, lstm_hidden=8, num_classes=4, n_frames=4),
    )


@pytest.fixture
def tiny_model(tiny_settings):
    return build_model(tiny_settings, seed=0)
