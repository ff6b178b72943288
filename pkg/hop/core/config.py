"""Run manifests and experiment suites: the JSON documents accepted by the ``hop`` management command."""
import json
import os
from enum import Enum
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, ValidationError, model_validator

from hop.core.constants import DEFAULT_LOSS_INTERVAL, DEFAULT_SEED
from hop.core.errors import ConfigurationError
from hop.core.learners import LearnerSpec
from hop.core.timing import TimingModel
from hop.core.topology import TopologySpec
from hop.core.worker import SyncPolicy


class RunKind(str, Enum):
    DECENTRALIZED = "decentralized"
    PS_BSP = "ps_bsp"


class StopSpec(BaseModel):
    """A run stops once every worker reached ``max_iter`` or the virtual clock passed ``max_time``."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    max_iter: Optional[PositiveInt] = None
    max_time: Optional[PositiveFloat] = None

    @model_validator(mode="after")
    def _check_any(self) -> "StopSpec":
        if self.max_iter is None and self.max_time is None:
            raise ValueError("A stop condition needs 'max_iter', 'max_time' or both.")
        return self


class RunManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "run"
    seed: int = DEFAULT_SEED
    topology: TopologySpec
    policy: SyncPolicy = SyncPolicy()
    timing: TimingModel = TimingModel()
    learner: LearnerSpec = LearnerSpec()
    stop: StopSpec
    loss_interval: Optional[PositiveFloat] = DEFAULT_LOSS_INTERVAL
    runtime_asserts: Optional[bool] = None
    trace_queues: bool = False
    baseline: RunKind = RunKind.DECENTRALIZED

    @model_validator(mode="after")
    def _check_workers(self) -> "RunManifest":
        self.timing.check_workers(self.topology.worker_count)
        return self


class ComparisonSpec(BaseModel):
    """Speedup of run ``numerator`` over run ``denominator``, measured in iterations per virtual second."""

    model_config = ConfigDict(extra="forbid")

    name: str
    numerator: str
    denominator: str
    window: Optional[tuple[float, float]] = None
    workers: Optional[list[int]] = None


class SuiteSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    runs: list[RunManifest] = Field(min_length=1)
    comparisons: list[ComparisonSpec] = []
    loss_target: Optional[float] = None
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def _check_references(self) -> "SuiteSpec":
        names = [run.name for run in self.runs]
        duplicates = sorted({name for name in names if names.count(name) > 1})
        if duplicates:
            raise ValueError(f"Run names must be unique within a suite, repeated: {duplicates}.")
        for comparison in self.comparisons:
            for ref in (comparison.numerator, comparison.denominator):
                if ref not in names:
                    raise ValueError(f"Comparison '{comparison.name}' references the unknown run '{ref}'.")
        return self

    def run_named(self, name: str) -> RunManifest:
        return next(run for run in self.runs if run.name == name)


def _read_json(path: str) -> Any:
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except OSError as e:
        raise ConfigurationError(f"Cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path} is not valid JSON: {e}") from e


def _validated(model: type[BaseModel], data: Any, source: str) -> Any:
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid {model.__name__} in {source}:\n{e}") from e


def load_manifest(path: str) -> RunManifest:
    return _validated(RunManifest, _read_json(path), path)


def load_suite(path: str) -> SuiteSpec:
    """
    Loads a suite. A run given as a string is a manifest path, relative to the suite file.

    :raises ConfigurationError: when a file is unreadable or a document does not validate.
    """
    data = _read_json(path)
    if isinstance(data, dict) and isinstance(data.get("runs"), list):
        base = os.path.dirname(os.path.abspath(path))
        data["runs"] = [_read_json(os.path.join(base, run)) if isinstance(run, str) else run for run in data["runs"]]
    return _validated(SuiteSpec, data, path)


def manifest_schema() -> dict[str, Any]:
    return {"manifest": RunManifest.model_json_schema(), "suite": SuiteSpec.model_json_schema()}
