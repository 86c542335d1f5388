import sys
from pathlib import Path

import pytest

# make tests/synthnets.py importable regardless of invocation directory
sys.path.insert(0, str(Path(__file__).parent))

from ctxrobust import load_dataset, load_model
from ctxrobust.demo import build_demo_suite


@pytest.fixture(scope="session")
def demo_suite(tmp_path_factory):
    """The bundled toy suite, materialized once per test session."""
    out = tmp_path_factory.mktemp("suite")
    return build_demo_suite(out, seed=7)


@pytest.fixture(scope="session")
def demo_models(demo_suite):
    return [load_model(p) for p in demo_suite["model_manifests"]]


@pytest.fixture(scope="session")
def demo_dataset(demo_suite):
    return load_dataset(demo_suite["data_manifest"])
