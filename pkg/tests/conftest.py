from __future__ import annotations

import pytest

from beamtrack.presets import resolve_config


@pytest.fixture(scope="session")
def cfg16():
    # N_t = 16 OP-validation scenario
    return resolve_config("fig3")


@pytest.fixture(scope="session")
def cfg64():
    # N_t = 64 OP-map scenario
    return resolve_config("fig4")


@pytest.fixture(scope="session")
def cfg_conv():
    # single-slot scenario used for solver comparisons
    return resolve_config("fig5a")


@pytest.fixture(scope="session")
def cfg_pmd():
    # closed-loop trajectory scenario with strong measurement noise
    return resolve_config("fig6-pmd")
