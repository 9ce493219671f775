import math
import os

import numpy as np
import pytest

from hops_engine import bath

# Ensemble scale of the end-to-end acceptance checks.  "smoke" keeps the
# suite tractable on a small box; "reduced" matches the desk-scale targets.
SCALE = os.environ.get("HOPS_ENGINE_SCALE", "smoke")


def scale_value(smoke, reduced):
    return reduced if SCALE == "reduced" else smoke


@pytest.fixture(scope="session")
def unit_ohmic_fit_60():
    """Five-term fit of the unit-prefactor Ohmic BCF on [0, 60]."""
    return bath.fit_ohmic_bcf(bath.OhmicSpectralDensity(1.0, 1.0), 5, 60.0)


@pytest.fixture(scope="session")
def unit_ohmic_fit_180():
    return bath.fit_ohmic_bcf(bath.OhmicSpectralDensity(1.0, 1.0), 5, 180.0)
