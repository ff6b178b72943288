"""The event log of a simulation, its CSV and JSON artifacts, and the speed and convergence measures read from it."""
import csv
import io
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

import numpy as np

from hop import __version__
from hop.core.constants import AVERAGED_WORKER, METRICS_COLUMNS, METRICS_FORMAT_VERSION
from hop.core.errors import MetricsError
from hop.core.utils import format_float

ADVANCE = "ADVANCE"
SEND = "SEND"
RECV_READY = "RECV_READY"
REDUCE = "REDUCE"
APPLY = "APPLY"
ACK = "ACK"
LOSS = "LOSS"


def blocked_event(kind: str) -> str:
    return f"BLOCKED({kind})"


def jump_event(origin: int, target: int) -> str:
    return f"JUMP({origin},{target})"


def is_iteration_event(event: str) -> bool:
    return event == ADVANCE or event.startswith("JUMP(")


def metrics_header() -> str:
    return f"# hop-sim {__version__} metrics format {METRICS_FORMAT_VERSION}"


@dataclass
class MetricRow:
    time: float
    worker: int
    event: str
    iter: Optional[int] = None
    loss: Optional[float] = None
    gap: Optional[int] = None


@dataclass
class MetricsLog:
    """
    Everything a run records. ``rows`` is the event stream written to ``metrics.csv``; the other fields feed
    ``summary.json`` and the tests.
    """

    n_workers: int
    rows: list[MetricRow] = field(default_factory=list)
    end_time: float = 0.0
    final_iters: list[int] = field(default_factory=list)
    final_params: Optional[np.ndarray] = None
    final_loss: Optional[float] = None
    max_gap: int = 0
    gap_bound: Optional[int | str] = None
    jumps: int = 0
    dropped_updates: int = 0
    suppressed_sends: int = 0
    block_time: dict[str, float] = field(default_factory=dict)
    queue_high_water: dict[int, int] = field(default_factory=dict)
    param_hashes: list[tuple[int, int, str, str]] = field(default_factory=list)
    stall: Optional[dict[str, Any]] = None
    spectral_gap: Optional[float] = None

    def record(self, time: float, worker: int, event: str, iteration: Optional[int] = None, loss: Optional[float] = None, gap: Optional[int] = None) -> None:
        self.rows.append(MetricRow(time, worker, event, iteration, loss, gap))
        if gap is not None and gap > self.max_gap:
            self.max_gap = gap

    def tail(self, length: int) -> list[MetricRow]:
        return self.rows[-length:]

    def events(self, *names: str) -> list[MetricRow]:
        return [row for row in self.rows if row.event in names]

    def iteration_rows(self, worker: Optional[int] = None) -> list[MetricRow]:
        return [row for row in self.rows if is_iteration_event(row.event) and (worker is None or row.worker == worker)]

    def loss_rows(self) -> list[MetricRow]:
        return [row for row in self.rows if row.event == LOSS]

    def add_block_time(self, kind: str, duration: float) -> None:
        self.block_time[kind] = self.block_time.get(kind, 0.0) + duration

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(metrics_header() + "\n")
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for row in self.rows:
            writer.writerow(
                [
                    format_float(row.time),
                    row.worker,
                    row.event,
                    "" if row.iter is None else row.iter,
                    "" if row.loss is None else format_float(row.loss),
                    "" if row.gap is None else row.gap,
                ]
            )
        return out.getvalue()

    def summary(self) -> dict[str, Any]:
        speed = iteration_speed(self) if self.end_time > 0 else None
        return {
            "version": __version__,
            "format": METRICS_FORMAT_VERSION,
            "end_time": self.end_time,
            "final_loss": self.final_loss,
            "final_iters": list(self.final_iters),
            "iters_per_sec": None if speed is None else {"global": speed.global_speed, "per_worker": speed.per_worker},
            "max_gap": self.max_gap,
            "bound": self.gap_bound,
            "jumps": self.jumps,
            "block_time": dict(sorted(self.block_time.items())),
            "dropped_updates": self.dropped_updates,
            "suppressed_sends": self.suppressed_sends,
            "queue_high_water": {str(owner): count for owner, count in sorted(self.queue_high_water.items())},
            "stall": self.stall,
            "spectral_gap": self.spectral_gap,
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=2) + "\n"


@dataclass(frozen=True)
class SpeedReport:
    global_speed: float
    per_worker: list[float]
    window: tuple[float, float]


def _iteration_at(rows: list[MetricRow], time: float) -> int:
    reached = 0
    for row in rows:
        if row.time > time:
            break
        if row.iter is not None:
            reached = row.iter
    return reached


def iteration_speed(log: MetricsLog, window: Optional[tuple[float, float]] = None, workers: Optional[Iterable[int]] = None) -> SpeedReport:
    """
    Iterations completed per virtual second inside ``window``, for every worker and averaged over ``workers``
    (all workers by default).

    :param log: A simulation log.
    :param window: ``(start, end)`` in virtual seconds; defaults to the whole run.
    :param workers: The workers to average over.
    :raises MetricsError: when the window is empty or the log has no iteration record.
    """
    start, end = window if window is not None else (0.0, log.end_time)
    if end <= start:
        raise MetricsError(f"Empty measurement window [{start}, {end}].")
    per_worker = []
    for worker in range(log.n_workers):
        rows = log.iteration_rows(worker)
        if not rows:
            raise MetricsError(f"Worker {worker} has no iteration record.")
        per_worker.append((_iteration_at(rows, end) - _iteration_at(rows, start)) / (end - start))
    selected = list(workers) if workers is not None else list(range(log.n_workers))
    if not selected:
        raise MetricsError("No worker selected.")
    return SpeedReport(float(np.mean([per_worker[w] for w in selected])), per_worker, (start, end))


def speedup_ratio(faster: MetricsLog, slower: MetricsLog, window: Optional[tuple[float, float]] = None, workers: Optional[Iterable[int]] = None) -> float:
    chosen = list(workers) if workers is not None else None
    return iteration_speed(faster, window, chosen).global_speed / iteration_speed(slower, window, chosen).global_speed


def _first_loss_below(log: MetricsLog, target: float) -> Optional[MetricRow]:
    for row in log.loss_rows():
        if row.worker == AVERAGED_WORKER and row.loss is not None and row.loss <= target:
            return row
    return None


def time_to_target(log: MetricsLog, target: float) -> Optional[float]:
    """Virtual time of the first loss sample at or below ``target``, ``None`` if never reached."""
    row = _first_loss_below(log, target)
    return None if row is None else row.time


def iterations_to_target(log: MetricsLog, target: float) -> Optional[int]:
    row = _first_loss_below(log, target)
    return None if row is None else row.iter
