import os, sys
PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

import pytest

from umm.synth import SynthConfig


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: statistical acceptance runs (deselect with -m 'not slow')")


@pytest.fixture
def sequential_config():
    """Six symbols, one per event, 15 repetitions; white noise, identity mixing"""
    return SynthConfig(
        n_symbols=6,
        code="sequential",
        repetitions=15,
        channels=4,
        samples=20,
        spatial_mixing="identity",
        ar_coefficient=0.0,
        snr=1.0,
        n_trials=10,
        seed=3,
    )


@pytest.fixture
def grid_config():
    """3 x 4 row-column grid with correlated noise"""
    return SynthConfig(
        n_symbols=12,
        code="row_column",
        rows=3,
        cols=4,
        repetitions=2,
        channels=8,
        samples=10,
        ar_coefficient=0.5,
        snr=0.5,
        n_trials=10,
        seed=11,
    )
