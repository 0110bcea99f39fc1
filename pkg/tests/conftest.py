import numpy as np
import pytest

from pavescan.dataio import generate_synthetic, preset


@pytest.fixture(scope="session")
def flat_pair():
    """Two noisy 640x480 frames of plain asphalt with 60% overlap."""
    spec = preset("flat", frame_count=2)
    manifest, frames = generate_synthetic(spec)
    return spec, manifest, frames


@pytest.fixture(scope="session")
def clean_run():
    """Eight zero-noise frames with known whole-pixel shifts."""
    spec = preset("flat", noise_sigma0=0.0, noise_k=0.0)
    manifest, frames = generate_synthetic(spec)
    return spec, manifest, frames


@pytest.fixture(scope="session")
def rut_run():
    spec = preset("rut")
    manifest, frames = generate_synthetic(spec)
    return spec, manifest, frames


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
