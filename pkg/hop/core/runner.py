"""Runs manifests and suites and writes their artifacts."""
import csv
import io
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from hop.core.baseline import run_ps_bsp
from hop.core.config import RunKind, RunManifest, SuiteSpec
from hop.core.constants import (
    COMPARISON_COLUMNS,
    COMPARISON_FILE_NAME,
    DEFAULT_OUTPUT_DIR,
    DEFAULT_SUITE_WORKERS,
    METRICS_FILE_NAME,
    QUEUE_TRACE_FILE_NAME,
    SUMMARY_FILE_NAME,
)
from hop.core.errors import DeadlockError, SuiteFailedError
from hop.core.metrics import MetricsLog, iteration_speed, speedup_ratio, time_to_target
from hop.core.simnet import Simulation
from hop.core.utils import atomic_write_text, format_float, get_setting

logger = logging.getLogger(__name__)


@dataclass
class RunResult:
    manifest: RunManifest
    log: MetricsLog
    output_dir: str
    artifacts: list[str] = field(default_factory=list)


@dataclass
class SuiteResult:
    suite: SuiteSpec
    results: dict[str, RunResult]
    rows: list[list[str]]
    comparison_path: str


def default_output_dir(name: str) -> str:
    return os.path.join(get_setting("HOP_OUTPUT_DIR", DEFAULT_OUTPUT_DIR), name)


def _write(path: str, content: str, artifacts: list[str]) -> None:
    atomic_write_text(path, content)
    artifacts.append(path)
    logger.info("Wrote %s", path)


def run_manifest(
    manifest: RunManifest,
    *,
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
    runtime_asserts: Optional[bool] = None,
    strict_reorder: Optional[bool] = None,
) -> RunResult:
    """
    Runs one manifest and writes ``metrics.csv`` and ``summary.json`` (plus ``queue_trace.csv`` when queue tracing is
    enabled) into ``out_dir``. A deadlocked run still writes its partial ``metrics.csv`` before the error propagates.
    """
    out_dir = out_dir or default_output_dir(manifest.name)
    artifacts: list[str] = []
    if manifest.baseline is RunKind.PS_BSP:
        log = run_ps_bsp(manifest, seed=seed)
        tracer = None
    else:
        simulation = Simulation(manifest, seed=seed, runtime_asserts=runtime_asserts, strict_reorder=strict_reorder)
        tracer = simulation.tracer
        try:
            log = simulation.run()
        except DeadlockError as e:
            if e.log is not None:
                _write(os.path.join(out_dir, METRICS_FILE_NAME), e.log.to_csv(), artifacts)
            raise
    _write(os.path.join(out_dir, METRICS_FILE_NAME), log.to_csv(), artifacts)
    _write(os.path.join(out_dir, SUMMARY_FILE_NAME), log.summary_json(), artifacts)
    if tracer is not None:
        _write(os.path.join(out_dir, QUEUE_TRACE_FILE_NAME), tracer.to_csv(), artifacts)
    return RunResult(manifest=manifest, log=log, output_dir=out_dir, artifacts=artifacts)


def _optional(value: Optional[float]) -> str:
    return "" if value is None else format_float(value)


def comparison_rows(suite: SuiteSpec, results: dict[str, RunResult]) -> list[list[str]]:
    rows = []
    for run in suite.runs:
        result = results.get(run.name)
        if result is None:
            continue
        log = result.log
        target = None if suite.loss_target is None else time_to_target(log, suite.loss_target)
        rows.append(["run", run.name, format_float(iteration_speed(log).global_speed), _optional(target), _optional(log.final_loss), str(log.max_gap), _optional(log.spectral_gap), ""])
    for comparison in suite.comparisons:
        numerator, denominator = results.get(comparison.numerator), results.get(comparison.denominator)
        if numerator is None or denominator is None:
            continue
        ratio = speedup_ratio(numerator.log, denominator.log, comparison.window, comparison.workers)
        rows.append(["comparison", comparison.name, "", "", "", "", "", format_float(ratio)])
    return rows


def run_suite(
    suite: SuiteSpec,
    *,
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
    runtime_asserts: Optional[bool] = None,
    strict_reorder: Optional[bool] = None,
    max_workers: Optional[int] = None,
) -> SuiteResult:
    """
    Runs every member of ``suite`` on a thread pool, then writes ``comparison.csv``.

    :raises SuiteFailedError: after all runs completed, when at least one of them failed.
    """
    base_dir = out_dir or suite.output_dir or default_output_dir(suite.name)
    max_workers = max_workers or get_setting("HOP_SUITE_WORKERS", DEFAULT_SUITE_WORKERS)
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {
            run.name: pool.submit(
                run_manifest,
                run,
                seed=seed,
                out_dir=os.path.join(base_dir, run.name),
                runtime_asserts=runtime_asserts,
                strict_reorder=strict_reorder,
            )
            for run in suite.runs
        }
    results: dict[str, RunResult] = {}
    failures: dict[str, Exception] = {}
    for name, future in futures.items():
        try:
            results[name] = future.result()
        except Exception as e:
            logger.error("Run %s of suite %s failed: %s", name, suite.name, e)
            failures[name] = e
    rows = comparison_rows(suite, results)
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(COMPARISON_COLUMNS)
    writer.writerows(rows)
    path = os.path.join(base_dir, COMPARISON_FILE_NAME)
    atomic_write_text(path, out.getvalue())
    logger.info("Wrote %s", path)
    if failures:
        raise SuiteFailedError(failures)
    return SuiteResult(suite=suite, results=results, rows=rows, comparison_path=path)
