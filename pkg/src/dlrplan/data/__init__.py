"""Bundled case-study data: the RTS-96 two-area grid and rating forecasts.

The grid is the published two-area RTS-96 system (48 buses, 79
branches including three inter-area ties) at its peak-load snapshot,
with dynamic ratings enabled on lines 214-216 and 216-219 at a nominal
1 p.u. = 250 MW.  Generator cost curves are the published RTS-96
values; reserve offer caps and reserve/activation prices are additions
documented in the README.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

_PKG = "dlrplan.data"


def _path(name: str) -> Path:
    return Path(str(resources.files(_PKG).joinpath(name)))


def rts96_grid_path() -> Path:
    """Two-area RTS-96 grid document."""
    return _path("rts96_two_area.json")


def forecast_path(lead_time: str = "24h") -> Path:
    """Bundled rating forecast; lead_time is '3h' or '24h'."""
    if lead_time not in ("3h", "24h"):
        raise ValueError(f"no bundled forecast for lead time {lead_time!r}")
    return _path(f"forecast_{lead_time}.json")


def dlr_rating_spec_path() -> Path:
    """Rating spec of the DLR lines (calibrated conductor at 230 kV)."""
    return _path("dlr_rating_spec.json")


def weather_samples_path() -> Path:
    """Small weather table exercising the rating CLI."""
    return _path("weather_samples.csv")
