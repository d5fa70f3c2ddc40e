"""Scenario files, metrics and the reproduction suites."""

from .metrics import SummaryMetrics, jain_index, normalize_tput_delay, summarize_run, tput_gain
from .scenario import Bottleneck, FlowSpec, Scenario, load_scenario, parse_scenario
from .suites import SUITES, build_suite, run_suite

__all__ = [
    "Bottleneck",
    "FlowSpec",
    "SUITES",
    "Scenario",
    "SummaryMetrics",
    "build_suite",
    "jain_index",
    "load_scenario",
    "normalize_tput_delay",
    "parse_scenario",
    "run_suite",
    "summarize_run",
    "tput_gain",
]
