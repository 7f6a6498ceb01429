"""Distributed MMSE precoding and beamforming for multi-gateway multibeam satellites."""

from .errors import ConfigError, ConvergenceError, NumericalError, PrecodingError, RankDeficientError
from .scenario import (ChannelRealization, ExpectedGramians, Scenario, ScenarioConfig, build_scenario,
                       cluster_block, estimate_expected_gramians, sample_channel, select_feeds)

__version__ = "0.1.0"

__all__ = [
    "ChannelRealization", "ConfigError", "ConvergenceError", "ExpectedGramians", "NumericalError", "PrecodingError",
    "RankDeficientError", "Scenario", "ScenarioConfig", "build_scenario", "cluster_block",
    "estimate_expected_gramians", "sample_channel", "select_feeds",
]
