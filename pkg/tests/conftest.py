import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from semanticac.config import AudioTowerConfig, CSCMConfig, MelConfig, TextTowerConfig, TrainConfig

settings.register_profile("default", max_examples=40, deadline=None)
settings.register_profile("ci", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("dev", max_examples=10, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def make_tiny_config(**changes) -> TrainConfig:
    """64-bit config small enough to train in seconds: 24x24 mel, 6x6 patch
    grid, two stages ending in a 16x3x3 map, C = 12."""
    cfg = TrainConfig(
        dtype="float64",
        embed_dim=12,
        lr0=0.1,
        batch_size=4,
        epochs=2,
        synth_duration=0.1,
        synth_clips=4,
        mel=MelConfig(n_fft=256, hop=64, n_mels=24, fmin=50.0, fmax=8000.0, frames=24),
        text=TextTowerConfig(width=16, layers=1, heads=2),
        audio=AudioTowerConfig(patch=(4, 4), window=3, depths=(1, 1), widths=(8, 16), heads=(2, 2)),
        cscm=CSCMConfig(reduction=4, spatial_kernel=3),
    )
    return cfg.replace(**changes) if changes else cfg.validate()


@pytest.fixture
def tiny_cfg():
    return make_tiny_config()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def fixtures_dir():
    return FIXTURES


# acceptance criteria report: one PASS/FAIL line each, echoed at the end of the run
ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion(capsys):
    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title}" + (f" [{detail}]" if detail else "")
        ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
