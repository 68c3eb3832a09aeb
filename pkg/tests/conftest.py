import math

import pytest

from dlrplan.thermal import ConductorParams, LineRatingSpec, WeatherSample, ampacity

# "Drake" 26/7 ACSR, the classic worked-example conductor.
DRAKE = ConductorParams(
    diameter=0.02814,
    resistance_at_t_low=7.283e-5,
    t_low=25.0,
    resistance_at_t_high=8.688e-5,
    t_high=75.0,
    emissivity=0.8,
    absorptivity=0.8,
    max_temperature=100.0,
    elevation=0.0,
)


@pytest.fixture
def drake() -> ConductorParams:
    return DRAKE


@pytest.fixture
def drake_spec() -> LineRatingSpec:
    """Drake on a 230 kV line, nominal rating consistent with default NLR weather."""
    base = ampacity(WeatherSample(0.5, 22.5, 30.0, 900.0), DRAKE)
    nominal = math.sqrt(3.0) * 230.0 * base / 1000.0
    return LineRatingSpec(conductor=DRAKE, voltage_kv=230.0, nominal_rating_mw=nominal)
