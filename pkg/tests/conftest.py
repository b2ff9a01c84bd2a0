import warnings

import numpy as np
import pytest
from scipy.integrate import IntegrationWarning

warnings.filterwarnings("ignore", category=IntegrationWarning)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
