import os
from typing import Any, Optional

import numpy as np

from hop.core.config import RunManifest
from hop.core.queues import UpdateMsg
from hop.tests import DEFAULT_FUZZ_SEEDS, DEFAULT_SPEEDUP_SEEDS, SMALL_LEARNER


def get_examples_path() -> str:
    return os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "examples")


def example_manifest_paths() -> list[str]:
    directory = get_examples_path()
    return sorted(os.path.join(directory, name) for name in os.listdir(directory) if name.endswith(".json"))


def speedup_seeds() -> range:
    return range(int(os.environ.get("HOP_SPEEDUP_SEEDS", DEFAULT_SPEEDUP_SEEDS)))


def fuzz_seeds() -> range:
    return range(int(os.environ.get("HOP_FUZZ_SEEDS", DEFAULT_FUZZ_SEEDS)))


def make_manifest(topology: dict[str, Any], policy: Optional[dict] = None, timing: Optional[dict] = None, stop: Optional[dict] = None, **extra: Any) -> RunManifest:
    data: dict[str, Any] = {
        "topology": topology,
        "policy": policy or {},
        "timing": timing or {},
        "learner": extra.pop("learner", SMALL_LEARNER),
        "stop": stop or {"max_iter": 20},
        "loss_interval": extra.pop("loss_interval", None),
    }
    data.update(extra)
    return RunManifest.model_validate(data)


def random_timing(seed: int) -> dict[str, Any]:
    """A jittered timing model with random slowdowns, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    return {
        "compute_jitter": {"kind": "uniform", "spread": float(rng.uniform(0.0, 0.9))},
        "net_latency": float(rng.uniform(0.001, 0.5)),
        "latency_jitter": float(rng.uniform(0.0, 0.9)),
        "slowdowns": [{"kind": "random", "factor": float(rng.uniform(2.0, 8.0))}],
    }


def msg(sender: int, iteration: int, value: float = 0.0, dim: int = 2) -> UpdateMsg:
    return UpdateMsg(sender=sender, iter=iteration, payload=np.full(dim, value))
