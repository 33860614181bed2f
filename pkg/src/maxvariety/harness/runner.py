"""Run a scenario end to end and persist its outputs under a per-config directory."""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor

from .config import ScenarioConfig, _jsonable
from .report import FORMATS, RunReport, check, emit_report, write_timing
from .scenarios import RUNNERS

OUTPUT_ROOT_ENV = "MAXVARIETY_OUTPUT_ROOT"
FAILURE_MARKER = "FAILED"


def run_directory(config: ScenarioConfig, output_root=None):
    if config.output_dir:
        return str(config.output_dir)
    root = output_root or os.environ.get(OUTPUT_ROOT_ENV, "runs")
    return os.path.join(root, f"{config.scenario}-{config.hash[:12]}")


def run_scenario(config: ScenarioConfig, output_root=None, parallel=1, write=True):
    """Dispatch to the scenario runner, then write JSON, CSV and markdown outputs.

    Module errors do not propagate: they become the report's failure message,
    a failing ``completed`` flag and a FAILED marker file next to the
    partial outputs.
    """
    start = time.perf_counter()
    runner = RUNNERS[config.scenario]
    try:
        if parallel > 1:
            with ProcessPoolExecutor(max_workers=parallel) as pool:
                report = runner(config, map_fn=pool.map)
        else:
            report = runner(config)
    except Exception as exc:  # surfaced through the report, not swallowed
        report = RunReport(config.scenario, config.hash)
        report.failure = f"{config.scenario}: {type(exc).__name__}: {exc}"
        report.flags.append(check("completed", False, True, False, type(exc).__name__))
    report.timing = {"wall_seconds": time.perf_counter() - start, "parallel": parallel}
    if write:
        out = run_directory(config, output_root)
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "config.json"), "w") as fh:
            json.dump(_jsonable(config.canonical()), fh, indent=2, sort_keys=True)
            fh.write("\n")
        for fmt in FORMATS:
            emit_report(report, fmt, out)
        write_timing(report, out)
        marker = os.path.join(out, FAILURE_MARKER)
        if report.failure:
            with open(marker, "w") as fh:
                fh.write(report.failure + "\n")
        elif os.path.exists(marker):
            os.remove(marker)
        report.timing["directory"] = out
    return report
