from __future__ import annotations

import shutil
from importlib import resources
from pathlib import Path

import pytest

from irb_forge.llm import Gateway, MockProvider
from irb_forge.llm.mock import FixtureEntry


def demo_source() -> Path:
    return Path(str(resources.files("irb_forge.fixtures").joinpath("demo")))


@pytest.fixture
def demo_dir(tmp_path: Path) -> Path:
    """A private copy of the bundled demo project."""
    dest = tmp_path / "demo"
    shutil.copytree(demo_source(), dest, ignore=shutil.ignore_patterns("work", "__pycache__"))
    return dest


def mock_gateway(fixtures: list[dict] | None = None, model_id: str = "mock-model", **kwargs) -> Gateway:
    entries = [FixtureEntry(**f) for f in fixtures or []]
    return Gateway(MockProvider(entries), model_id, sleep=lambda s: None, **kwargs)


@pytest.fixture
def gateway_factory():
    return mock_gateway
