"""Synthetic convex workloads: datasets, loss and gradient kernels, momentum SGD and a full-batch reference optimum."""
import io
import logging
from enum import Enum
from typing import Annotated, Optional

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field, NonNegativeFloat, PositiveFloat, PositiveInt, validate_call
from pydantic.dataclasses import dataclass as pydantic_dataclass
from scipy.special import expit

from hop.core import PYDANTIC_CONFIG
from hop.core.constants import (
    CSV_FLOAT_FORMAT,
    DEFAULT_BATCH_SIZE,
    DEFAULT_DIM,
    DEFAULT_LABEL_NOISE,
    DEFAULT_LEARNING_RATE,
    DEFAULT_MARGIN,
    DEFAULT_MOMENTUM,
    DEFAULT_N_SAMPLES,
    DEFAULT_WEIGHT_DECAY,
    ORACLE_GRAD_TOLERANCE,
    ORACLE_MAX_ITERATIONS,
)
from hop.core.errors import ConfigurationError, DivergenceError, OracleError, PreconditionError

logger = logging.getLogger(__name__)


class LossModel(str, Enum):
    LOGISTIC = "logistic"
    LINEAR_MSE = "linear_mse"


class SgdConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lr: PositiveFloat = DEFAULT_LEARNING_RATE
    momentum: float = Field(default=DEFAULT_MOMENTUM, ge=0.0, lt=1.0)
    weight_decay: NonNegativeFloat = DEFAULT_WEIGHT_DECAY
    batch_size: PositiveInt = DEFAULT_BATCH_SIZE


class LearnerSpec(BaseModel):
    """The learner section of a run manifest."""

    model_config = ConfigDict(extra="forbid")

    model: LossModel = LossModel.LOGISTIC
    n_samples: PositiveInt = DEFAULT_N_SAMPLES
    dim: PositiveInt = DEFAULT_DIM
    noise: float = Field(default=DEFAULT_LABEL_NOISE, ge=0.0, lt=0.5)
    margin: NonNegativeFloat = DEFAULT_MARGIN
    data_seed: Optional[int] = None
    # 0 evaluates the loss on the training set.
    holdout: int = Field(default=0, ge=0)
    sgd: SgdConfig = SgdConfig()


@pydantic_dataclass(config=PYDANTIC_CONFIG)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    seed: Optional[int] = None
    clean_labels: Optional[np.ndarray] = None
    hyperplane: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def subset(self, start: int, stop: Optional[int] = None) -> "Dataset":
        return Dataset(features=self.features[start:stop], labels=self.labels[start:stop], seed=self.seed)


@validate_call
def gen_synthetic(
    n: PositiveInt,
    d: PositiveInt,
    noise: Annotated[float, Field(ge=0.0, lt=0.5)] = DEFAULT_LABEL_NOISE,
    seed: int = 0,
    margin: NonNegativeFloat = DEFAULT_MARGIN,
) -> Dataset:
    """
    Draws a random hyperplane and ``n`` standard normal points, pushes each point ``margin`` away from the hyperplane
    on its side, then flips every label with probability ``noise``.

    :param int n: Number of samples.
    :param int d: Feature dimension.
    :param float noise: Label flip probability in ``[0, 0.5)``.
    :param int seed: Seed of the generator.
    :param float margin: Minimal distance between a point and the hyperplane before the label flips.
    :rtype: Dataset
    """
    rng = np.random.default_rng(seed)
    normal = rng.standard_normal(d)
    normal /= np.linalg.norm(normal)
    offset = rng.normal(scale=0.5)
    features = rng.standard_normal((n, d))
    clean = np.where(features @ normal + offset >= 0.0, 1.0, -1.0)
    features += margin * clean[:, None] * normal
    flips = rng.random(n) < noise
    labels = np.where(flips, -clean, clean)
    return Dataset(features=features, labels=labels, seed=seed, clean_labels=clean, hyperplane=np.append(normal, offset))


def export_dataset_csv(dataset: Dataset) -> str:
    """Serializes a dataset as ``y, x_1..x_d`` rows."""
    out = io.StringIO()
    header = ",".join(["y"] + [f"x_{k + 1}" for k in range(dataset.dim)])
    np.savetxt(out, np.column_stack([dataset.labels, dataset.features]), fmt=f"%{CSV_FLOAT_FORMAT}", delimiter=",", header=header, comments="")
    return out.getvalue()


def load_dataset_csv(path: str) -> Dataset:
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if table.shape[1] < 2:
        raise ConfigurationError(f"{path} must hold a label column and at least one feature column.")
    return Dataset(features=table[:, 1:], labels=table[:, 0])


def _split(params: np.ndarray) -> tuple[np.ndarray, float]:
    return params[:-1], params[-1]


def loss_grad(model: LossModel, params: np.ndarray, features: np.ndarray, labels: np.ndarray, weight_decay: float) -> tuple[float, np.ndarray]:
    """
    Mean loss over the batch plus ``weight_decay / 2 * ||w||^2``, and its exact gradient.

    ``params`` holds the weights followed by the bias; the bias is not regularized.
    """
    if labels.shape[0] == 0:
        raise PreconditionError("loss_grad needs a non-empty batch.")
    w, b = _split(params)
    z = features @ w + b
    size = labels.shape[0]
    if model is LossModel.LOGISTIC:
        margins = labels * z
        loss = float(np.mean(np.logaddexp(0.0, -margins)))
        coeff = -labels * expit(-margins) / size
    else:
        residual = z - labels
        loss = float(np.mean(residual**2))
        coeff = 2.0 * residual / size
    grad = np.empty_like(params)
    grad[:-1] = features.T @ coeff + weight_decay * w
    grad[-1] = coeff.sum()
    return loss + 0.5 * weight_decay * float(w @ w), grad


def loss_hessian(model: LossModel, params: np.ndarray, features: np.ndarray, labels: np.ndarray, weight_decay: float) -> np.ndarray:
    augmented = np.column_stack([features, np.ones(labels.shape[0])])
    if model is LossModel.LOGISTIC:
        z = augmented @ params
        curvature = expit(z) * expit(-z)
    else:
        curvature = np.full(labels.shape[0], 2.0)
    hessian = augmented.T @ (curvature[:, None] * augmented) / labels.shape[0]
    hessian[np.arange(params.shape[0] - 1), np.arange(params.shape[0] - 1)] += weight_decay
    return hessian


def sgd_update(params: np.ndarray, momentum_buf: np.ndarray, grad: np.ndarray, cfg: SgdConfig) -> tuple[np.ndarray, np.ndarray]:
    """Heavy-ball step: ``buf' = momentum * buf + grad`` then ``params' = params - lr * buf'``."""
    if params.shape != grad.shape or momentum_buf.shape != grad.shape:
        raise PreconditionError(f"Shape mismatch: params {params.shape}, buffer {momentum_buf.shape}, gradient {grad.shape}.")
    buf = cfg.momentum * momentum_buf + grad
    updated = params - cfg.lr * buf
    if not np.all(np.isfinite(updated)):
        raise DivergenceError("SGD produced non-finite parameters; lower the learning rate.")
    return updated, buf


@validate_call(config=PYDANTIC_CONFIG)
def centralized_oracle(
    dataset: Dataset,
    model: LossModel,
    weight_decay: NonNegativeFloat,
    tol: PositiveFloat = ORACLE_GRAD_TOLERANCE,
    max_iter: PositiveInt = ORACLE_MAX_ITERATIONS,
) -> tuple[np.ndarray, float]:
    """
    Full-batch damped Newton iterations with a backtracking line search, run until the gradient norm falls below
    ``tol``.

    :raises OracleError: when ``max_iter`` iterations are not enough.
    """
    features, labels = dataset.features, dataset.labels
    params = np.zeros(dataset.dim + 1)
    for iteration in range(max_iter):
        loss, grad = loss_grad(model, params, features, labels, weight_decay)
        if np.linalg.norm(grad) < tol:
            logger.debug("Oracle converged after %d iterations, loss %.12g.", iteration, loss)
            return params, loss
        hessian = loss_hessian(model, params, features, labels, weight_decay)
        try:
            direction = scipy.linalg.solve(hessian, -grad, assume_a="sym")
        except (scipy.linalg.LinAlgError, ValueError):
            direction = -grad
        slope = float(grad @ direction)
        if slope >= 0.0:
            direction, slope = -grad, -float(grad @ grad)
        step = 1.0
        while step > 1e-10:
            candidate = params + step * direction
            if loss_grad(model, candidate, features, labels, weight_decay)[0] <= loss + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            candidate = params + direction
            if np.linalg.norm(loss_grad(model, candidate, features, labels, weight_decay)[1]) >= np.linalg.norm(grad):
                raise OracleError(f"Line search failed with gradient norm {np.linalg.norm(grad):.3e}.")
        params = candidate
    raise OracleError(f"No convergence to gradient norm < {tol} within {max_iter} iterations.")


def evaluate_loss(model: LossModel, params: np.ndarray, dataset: Dataset, weight_decay: float) -> float:
    return loss_grad(model, params, dataset.features, dataset.labels, weight_decay)[0]


def accuracy(params: np.ndarray, dataset: Dataset) -> float:
    w, b = _split(params)
    return float(np.mean(np.where(dataset.features @ w + b >= 0.0, 1.0, -1.0) == dataset.labels))


class BatchSampler:
    """
    Splits the samples into disjoint shards from a seeded permutation and draws the batches of every worker, with
    replacement, from its own shard and random stream.
    """

    def __init__(self, n_samples: int, n_workers: int, seed: int) -> None:
        if n_workers > n_samples:
            raise ConfigurationError(f"{n_samples} samples cannot be sharded over {n_workers} workers.")
        permutation = np.random.default_rng(seed).permutation(n_samples)
        self._shards = np.array_split(permutation, n_workers)
        self._rngs = [np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(n_workers)]

    def shard(self, worker: int) -> np.ndarray:
        return self._shards[worker]

    def next_batch(self, worker: int, batch_size: int) -> np.ndarray:
        shard = self._shards[worker]
        return shard[self._rngs[worker].integers(0, shard.shape[0], size=batch_size)]


def sequential_sgd(dataset: Dataset, model: LossModel, cfg: SgdConfig, iterations: int, seed: int) -> np.ndarray:
    """Plain single-worker momentum SGD using the batch schedule of worker 0."""
    sampler = BatchSampler(len(dataset), 1, seed)
    params = np.zeros(dataset.dim + 1)
    buf = np.zeros_like(params)
    for _ in range(iterations):
        batch = sampler.next_batch(0, cfg.batch_size)
        _, grad = loss_grad(model, params, dataset.features[batch], dataset.labels[batch], cfg.weight_decay)
        params, buf = sgd_update(params, buf, grad, cfg)
    return params


def build_datasets(spec: LearnerSpec, seed: int) -> tuple[Dataset, Dataset]:
    """
    The training set of a run and the set its loss is evaluated on: the last ``spec.holdout`` generated samples when
    a holdout is requested, the training set otherwise.
    """
    data_seed = seed if spec.data_seed is None else spec.data_seed
    full = gen_synthetic(spec.n_samples + spec.holdout, spec.dim, spec.noise, data_seed, spec.margin)
    if not spec.holdout:
        return full, full
    return full.subset(0, spec.n_samples), full.subset(spec.n_samples)
