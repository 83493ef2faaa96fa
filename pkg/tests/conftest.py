import numpy as np
import pytest

from aftite.aft import fit
from aftite.design import preset_spec
from aftite.ingest import load_prostate


@pytest.fixture(scope="session")
def prostate():
    return load_prostate()


@pytest.fixture(scope="session")
def fits(prostate):
    """Weibull fits of the three presets on the bundled trial."""
    return {tag: fit(prostate, preset_spec(tag), "weibull") for tag in ("model1", "model2a", "model2b")}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
