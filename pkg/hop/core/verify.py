"""
Offline audit of a ``metrics.csv`` trace against the theoretical iteration-gap bounds.

The checker only reads the CSV and the manifest: it replays the ADVANCE and JUMP rows and never touches engine
state, so it can audit traces from any runtime that writes the same format.
"""
import csv
import io
import json
import re
from typing import Iterator, Optional

import numpy as np
from pydantic.dataclasses import dataclass as pydantic_dataclass

from hop.core import PYDANTIC_CONFIG
from hop.core.config import RunManifest
from hop.core.constants import METRICS_COLUMNS, METRICS_FORMAT_VERSION
from hop.core.errors import TraceParseError
from hop.core.metrics import ADVANCE
from hop.core.topology import build_topology

HEADER_PATTERN = re.compile(r"^# hop-sim \S+ metrics format (\d+)$")
JUMP_PATTERN = re.compile(r"^JUMP\((\d+),(\d+)\)$")


@pydantic_dataclass(config=PYDANTIC_CONFIG)
class PairBound:
    i: int
    j: int
    max_gap: int
    bound: Optional[int]


@pydantic_dataclass(config=PYDANTIC_CONFIG)
class Violation:
    time: float
    i: int
    j: int
    gap: int
    bound: int


@pydantic_dataclass(config=PYDANTIC_CONFIG)
class BoundReport:
    """Largest observed ``Iter(i) - Iter(j)`` per ordered pair next to its bound (``None`` when unbounded)."""

    rows_replayed: int
    pairs: list[PairBound]
    violations: list[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations

    def pair(self, i: int, j: int) -> PairBound:
        return next(p for p in self.pairs if p.i == i and p.j == j)

    def describe(self) -> str:
        if self.ok:
            return f"All iteration gaps within their bounds ({self.rows_replayed} iteration records replayed)."
        first = self.violations[0]
        return (
            f"{len(self.violations)} bound violation(s); first at t={first.time:g}: "
            f"Iter({first.i}) - Iter({first.j}) = {first.gap} exceeds the bound {first.bound} for pair ({first.i}, {first.j})."
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "ok": self.ok,
                "rows_replayed": self.rows_replayed,
                "pairs": [{"i": p.i, "j": p.j, "max_gap": p.max_gap, "bound": p.bound} for p in self.pairs],
                "violations": [{"time": v.time, "i": v.i, "j": v.j, "gap": v.gap, "bound": v.bound} for v in self.violations],
            },
            sort_keys=True,
            indent=2,
        ) + "\n"


def _parse_int(value: str, line: int, column: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise TraceParseError(f"Line {line}: '{column}' must be an integer, got {value!r}.") from None


def _iteration_records(text: str) -> Iterator[tuple[int, float, int, int]]:
    lines = text.splitlines()
    if not lines:
        raise TraceParseError("Empty trace.")
    match = HEADER_PATTERN.match(lines[0])
    if match is None:
        raise TraceParseError(f"Missing metrics header line, got {lines[0]!r}.")
    if int(match.group(1)) != METRICS_FORMAT_VERSION:
        raise TraceParseError(f"Unsupported metrics format {match.group(1)}, expected {METRICS_FORMAT_VERSION}.")
    reader = csv.reader(io.StringIO("\n".join(lines[1:])))
    if tuple(next(reader, ())) != METRICS_COLUMNS:
        raise TraceParseError(f"Line 2 must list the columns {','.join(METRICS_COLUMNS)}.")
    for line, fields in enumerate(reader, start=3):
        if len(fields) != len(METRICS_COLUMNS):
            raise TraceParseError(f"Line {line}: expected {len(METRICS_COLUMNS)} fields, got {len(fields)}.")
        time_text, worker_text, event, iter_text, _, _ = fields
        jump = JUMP_PATTERN.match(event)
        if event != ADVANCE and jump is None:
            if event.startswith("JUMP"):
                raise TraceParseError(f"Line {line}: malformed jump event {event!r}.")
            continue
        try:
            time = float(time_text)
        except ValueError:
            raise TraceParseError(f"Line {line}: 'time' must be a number, got {time_text!r}.") from None
        iteration = _parse_int(iter_text, line, "iter")
        if jump is not None and int(jump.group(2)) != iteration:
            raise TraceParseError(f"Line {line}: jump target {jump.group(2)} differs from iter {iteration}.")
        yield line, time, _parse_int(worker_text, line, "worker"), iteration


def verify_trace(text: str, manifest: RunManifest) -> BoundReport:
    """
    Replays the iteration records of a trace and compares every pairwise gap with the bound of the manifest's
    synchronization setting.

    :raises TraceParseError: when the trace is malformed or names an unknown worker.
    """
    graph = build_topology(manifest.topology)
    bounds = manifest.policy.bound_matrix(graph)
    iters = np.zeros(graph.n, dtype=np.int64)
    observed = np.zeros((graph.n, graph.n), dtype=np.int64)
    violations = []
    replayed = 0
    for line, time, worker, iteration in _iteration_records(text):
        if not 0 <= worker < graph.n:
            raise TraceParseError(f"Line {line}: worker {worker} is outside 0..{graph.n - 1}.")
        iters[worker] = iteration
        replayed += 1
        gaps = iters[:, None] - iters[None, :]
        np.maximum(observed, gaps, out=observed)
        for i, j in np.argwhere(gaps > bounds):
            violations.append(Violation(time=time, i=int(i), j=int(j), gap=int(gaps[i, j]), bound=int(bounds[i, j])))
    pairs = [
        PairBound(i=i, j=j, max_gap=int(observed[i, j]), bound=int(bounds[i, j]) if np.isfinite(bounds[i, j]) else None)
        for i in range(graph.n)
        for j in range(graph.n)
        if i != j
    ]
    return BoundReport(rows_replayed=replayed, pairs=pairs, violations=violations)


def verify_bounds(metrics_path: str, manifest: RunManifest) -> BoundReport:
    try:
        with open(metrics_path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise TraceParseError(f"Cannot read {metrics_path}: {e}") from e
    return verify_trace(text, manifest)
