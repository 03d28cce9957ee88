"""Scenario files, experiment presets and the ``satchain`` command line."""
from .main import build_parser, main
from .pipelines import RunReport, dp_report, optimize_cache, simulate, train_maql
from .presets import PRESETS
from .scenario import Diagnostic, Scenario, ScenarioError, build_scenario, load_scenario, validate

__all__ = ["build_parser", "main", "RunReport", "dp_report", "optimize_cache", "simulate", "train_maql",
           "PRESETS", "Diagnostic", "Scenario", "ScenarioError", "build_scenario", "load_scenario", "validate"]
