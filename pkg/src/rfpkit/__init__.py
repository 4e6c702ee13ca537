"""Reasonably foreseeable scenario ranges and preventable-collision estimates from scenario data."""

from __future__ import annotations

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("rfpkit")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from ._backend import BACKEND
from .density import KdeModel, fit_kde, pdf, cdf, rect_probability, sample
from .driver_sim import DriverConfig, Family, ScenarioSpec, simulate
from .evt import GpdFit, build_excess_set, fit_gpd
from .foreseeable import ForeseeableQuery, solve_range_evt, solve_range_kde
from .preventable import (RiskEstimate, SequentialResult, BoundaryCurve, build_importance_density,
                          crude_mc, grid_boundary, importance_mc, sequential_probability)
from .scenario_store import ScenarioCategory, builtin_category, exposure, load_records, mine_scenarios

__all__ = [
    "BACKEND", "BoundaryCurve", "DriverConfig", "Family", "ForeseeableQuery", "GpdFit", "KdeModel",
    "RiskEstimate", "ScenarioCategory", "ScenarioSpec", "SequentialResult", "build_excess_set",
    "build_importance_density", "builtin_category", "cdf", "crude_mc", "exposure", "fit_gpd", "fit_kde",
    "grid_boundary", "importance_mc", "load_records", "mine_scenarios", "pdf", "rect_probability",
    "sample", "sequential_probability", "simulate", "solve_range_evt", "solve_range_kde",
]
