import numpy as np
import pytest

from threeclass_sasv.core import index_manifest
from threeclass_sasv.synthgen import SynthConfig, generate_population


@pytest.fixture(scope="session")
def small_population():
    """8 speakers x 6 utterances in 8 dimensions."""
    cfg = SynthConfig(n_speakers=8, utts_per_speaker=6, dim=8, n_attacks=2, seed=3)
    manifest, store = generate_population(cfg)
    return cfg, manifest, store, index_manifest(manifest)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[n])
