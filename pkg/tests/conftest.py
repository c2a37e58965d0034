import os

import numpy as np
import pytest

from daan_zsl.config.logging import configure_logging
from daan_zsl.config.settings import ExperimentConfig, build_config, get_settings, parse_key_values
from daan_zsl.models.data import Dataset
from daan_zsl.services.synthetic import generate_synthetic

# Small enough for per-parameter finite differences and multi-epoch runs in seconds.
TINY_CONFIG_TEXT = """
# tiny model
dims.input = 16
dims.hidden = 16
dims.output = 8
qdma.tokens = 2
qdma.groups = 2
qdma.attn_dim = 4
tcn.x_hid = 4
tcn.n = 2
tcn.k = 2
tcn.kernel = 2
train.epochs = 2
train.batch_size = 8
data.synthetic.num_seen_classes = 4
data.synthetic.num_unseen_classes = 2
data.synthetic.samples_per_class = 6
data.synthetic.test_samples_per_class = 3
data.synthetic.input_dim = 16
data.synthetic.text_dim = 8
"""


@pytest.fixture(autouse=True)
def setup_logging():
    """Ensure logging is configured before each test."""

    configure_logging()


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    """Keep DAAN_* variables from the calling shell out of the tests."""

    for key in [k for k in os.environ if k.startswith("DAAN_")]:
        monkeypatch.delenv(key)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config() -> ExperimentConfig:
    return build_config(parse_key_values(TINY_CONFIG_TEXT))


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CONFIG_TEXT)
    return path


@pytest.fixture
def tiny_dataset(tiny_config) -> Dataset:
    return generate_synthetic(tiny_config.data.synthetic)
