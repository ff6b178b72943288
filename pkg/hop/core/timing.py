"""Virtual-time cost model: compute times with jitter and slowdowns, and network latencies."""
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, NonNegativeFloat, NonNegativeInt, PositiveFloat, model_validator

from hop.core.constants import DEFAULT_APPLY_TIME, DEFAULT_BASE_COMPUTE, DEFAULT_NET_LATENCY


class JitterKind(str, Enum):
    NONE = "none"
    UNIFORM = "uniform"
    LOGNORMAL = "lognormal"


class JitterSpec(BaseModel):
    """
    Multiplicative noise with mean 1. ``uniform`` draws from ``[1 - spread, 1 + spread]``; ``lognormal`` uses
    ``spread`` as the standard deviation of the underlying normal.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: JitterKind = JitterKind.NONE
    spread: NonNegativeFloat = 0.0

    @model_validator(mode="after")
    def _check_spread(self) -> "JitterSpec":
        if self.kind is JitterKind.UNIFORM and self.spread >= 1.0:
            raise ValueError("A uniform jitter spread must be below 1 to keep times positive.")
        return self

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind is JitterKind.UNIFORM:
            return float(rng.uniform(1.0 - self.spread, 1.0 + self.spread))
        if self.kind is JitterKind.LOGNORMAL:
            return float(rng.lognormal(-0.5 * self.spread**2, self.spread))
        return 1.0


class SlowdownKind(str, Enum):
    RANDOM = "random"
    DETERMINISTIC = "deterministic"


class SlowdownSpec(BaseModel):
    """
    ``random``: every iteration of every worker is slowed by ``factor`` with probability ``prob`` (``1/n`` when not
    given). ``deterministic``: every iteration of ``worker`` is slowed by ``factor``.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: SlowdownKind
    factor: float = Field(gt=1.0)
    prob: Optional[float] = Field(default=None, gt=0.0, le=1.0)
    worker: Optional[NonNegativeInt] = None

    @model_validator(mode="after")
    def _check_kind(self) -> "SlowdownSpec":
        if self.kind is SlowdownKind.DETERMINISTIC and self.worker is None:
            raise ValueError("A deterministic slowdown needs 'worker'.")
        if self.kind is SlowdownKind.RANDOM and self.worker is not None:
            raise ValueError("A random slowdown applies to every worker; drop 'worker'.")
        return self


class TimingModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    base_compute: PositiveFloat | list[PositiveFloat] = DEFAULT_BASE_COMPUTE
    compute_jitter: JitterSpec = JitterSpec()
    net_latency: PositiveFloat = DEFAULT_NET_LATENCY
    latency_jitter: float = Field(default=0.0, ge=0.0, lt=1.0)
    slowdowns: list[SlowdownSpec] = []
    frozen: list[NonNegativeInt] = []
    check_latency: bool = False
    apply_time: PositiveFloat = DEFAULT_APPLY_TIME
    ps_latency: Optional[PositiveFloat] = None

    def base_for(self, worker: int) -> float:
        if isinstance(self.base_compute, list):
            return self.base_compute[worker]
        return self.base_compute

    def check_workers(self, n: int) -> None:
        if isinstance(self.base_compute, list) and len(self.base_compute) != n:
            raise ValueError(f"'base_compute' lists {len(self.base_compute)} values for {n} workers.")
        ids = list(self.frozen) + [spec.worker for spec in self.slowdowns if spec.worker is not None]
        for worker in ids:
            if worker >= n:
                raise ValueError(f"Timing references worker {worker}, but only {n} workers exist.")

    def max_base_compute(self) -> float:
        if isinstance(self.base_compute, list):
            return max(self.base_compute)
        return self.base_compute


def sample_iteration_time(worker: int, iteration: int, timing: TimingModel, rng: np.random.Generator, n_workers: int) -> float:
    """
    Compute time of one iteration: base time, times jitter, times every slowdown that applies.

    The draws only use ``rng``, the stream of ``worker``; each random slowdown consumes one uniform draw whether it
    fires or not.
    """
    duration = timing.base_for(worker) * timing.compute_jitter.sample(rng)
    for spec in timing.slowdowns:
        if spec.kind is SlowdownKind.RANDOM:
            prob = spec.prob if spec.prob is not None else 1.0 / n_workers
            if rng.random() < prob:
                duration *= spec.factor
        elif spec.worker == worker:
            duration *= spec.factor
    return duration


def sample_latency(timing: TimingModel, rng: np.random.Generator) -> float:
    if timing.latency_jitter == 0.0:
        return timing.net_latency
    return timing.net_latency * float(rng.uniform(1.0 - timing.latency_jitter, 1.0 + timing.latency_jitter))
