import pytest

from embedhar.model import load_layout
from embedhar.textgen import load_summary_config

from helpers import DATA_DIR, fixture_corpus


@pytest.fixture(scope="session")
def layout():
    return load_layout(DATA_DIR / "fixture_layout.yaml")


@pytest.fixture(scope="session")
def summary_cfg():
    return load_summary_config(DATA_DIR / "fixture_summary.yaml")


@pytest.fixture(scope="session")
def corpus(layout):
    return fixture_corpus(layout)
