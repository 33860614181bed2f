"""Config-driven scenario harness."""

from .config import ConfigError, ScenarioConfig, load_config, parse_config
from .report import RunReport, emit_report, load_report
from .runner import run_scenario
