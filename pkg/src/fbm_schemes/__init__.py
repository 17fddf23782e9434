"""Taylor-type schemes for SDEs driven by fractional Brownian motion and their asymptotic errors."""

from __future__ import annotations

from .calculus import SdeModel, SmoothFunction, make_fixture, parse_fixture
from .grid_fbm import DyadicGrid, FbmPath, HurstParameter, SeedSpec, restrict_path, sample_fbm
from .limits import predicted_normalized_error
from .reference import SolutionPath, reference_solution
from .schemes import SchemeSpec, classify_regime, parse_scheme, run_scheme
from .variations import c_10star_constant, c_l_constant

__all__ = [
    "SdeModel",
    "SmoothFunction",
    "make_fixture",
    "parse_fixture",
    "DyadicGrid",
    "FbmPath",
    "HurstParameter",
    "SeedSpec",
    "restrict_path",
    "sample_fbm",
    "predicted_normalized_error",
    "SolutionPath",
    "reference_solution",
    "SchemeSpec",
    "classify_regime",
    "parse_scheme",
    "run_scheme",
    "c_10star_constant",
    "c_l_constant",
]
