import os

import numpy as np
import pytest
from hypothesis import settings

from atara_lab.kinematics import default_chain
from atara_lab.renderer import SceneConfig, default_cameras

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def chains():
    return default_chain("left"), default_chain("right")


@pytest.fixture(scope="session")
def cameras():
    return default_cameras(128)


@pytest.fixture(scope="session")
def small_cameras():
    return default_cameras(64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def scene():
    return SceneConfig()


@pytest.fixture(autouse=True)
def _isolated_cache(tmp_path_factory, monkeypatch):
    # keep prepared-input caches out of the user's home directory
    if "ATARA_LAB_CACHE" not in os.environ:
        monkeypatch.setenv("ATARA_LAB_CACHE", str(tmp_path_factory.getbasetemp() / "cache"))


def tiny_model_config(head="dad", decoupled=True, input_size=28):
    from atara_lab.idm.config import DadConfig, EncoderConfig, MlpRegressorConfig, ModelConfig

    enc = EncoderConfig(patch_size=14, embed_dim=16, depth=1, heads=2, register_tokens=2,
                        input_size=input_size, stem_channels=(4, 8))
    return ModelConfig(head=head, decoupled=decoupled, encoder=enc,
                       dad=DadConfig(branch_channels=4, deform_channels=4, hidden=16),
                       mlp=MlpRegressorConfig(hidden=16))


@pytest.fixture
def tiny_cfg():
    return tiny_model_config


ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
