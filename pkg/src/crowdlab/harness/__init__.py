"""Run configuration, scenario presets, output writers, and the CLI."""

from .config import ConfigError, RunConfig, parse_config, parse_config_text, serialize_config
from .metrics_io import evacuation_time, lane_count, read_metrics, write_metrics
from .scenarios import SCENARIO_NAMES, build_preset
from .runner import RunResult, run_scenario
