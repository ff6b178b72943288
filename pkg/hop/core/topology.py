"""Communication graphs, influence weights, spectral gaps and the theoretical iteration-gap bounds."""
import io
import json
import logging
from enum import Enum
from functools import cached_property
from typing import Final, Iterable, Optional

import networkx as nx
import numpy as np
import scipy.linalg
import scipy.sparse.linalg
from pydantic import BaseModel, ConfigDict, NonNegativeInt, PositiveInt, model_validator, validate_call
from pydantic.dataclasses import dataclass as pydantic_dataclass

from hop.core import PYDANTIC_CONFIG
from hop.core.constants import CSV_FLOAT_FORMAT, DENSE_EIGEN_MAX_N, DOUBLY_STOCHASTIC_TOLERANCE, EIGEN_TOLERANCE
from hop.core.errors import InvalidTopologyError, NoPathError, PreconditionError

logger = logging.getLogger(__name__)


class TopologyKind(str, Enum):
    RING = "ring"
    RING_BASED = "ring_based"
    DOUBLE_RING = "double_ring"
    CLUSTERED = "clustered"
    COMPLETE = "complete"
    CUSTOM = "custom"


class Unbounded(Enum):
    UNBOUNDED = "unbounded"

    def __str__(self) -> str:
        return self.value


UNBOUNDED: Final = Unbounded.UNBOUNDED


class CommGraph:
    """
    A directed communication graph. An edge ``(i, j)`` means that worker ``i`` sends its updates to worker ``j``.
    Every worker has a self-loop.
    """

    @validate_call
    def __init__(self, n: PositiveInt, edges: Iterable[tuple[NonNegativeInt, NonNegativeInt]], kind: TopologyKind = TopologyKind.CUSTOM) -> None:
        """
        :param int n: Number of workers.
        :param edges: Ordered pairs ``(sender, receiver)``. Self-loops are added when missing.
        :param kind: The builder that produced the graph.
        """
        edge_set = set()
        for i, j in edges:
            if i >= n or j >= n:
                raise InvalidTopologyError(f"Edge ({i}, {j}) references a worker outside 0..{n - 1}.")
            edge_set.add((i, j))
        edge_set.update((i, i) for i in range(n))
        self._n = n
        self._kind = kind
        self._edges = frozenset(edge_set)
        self._in = tuple(tuple(sorted(i for i, j in self._edges if j == node)) for node in range(n))
        self._out = tuple(tuple(sorted(j for i, j in self._edges if i == node)) for node in range(n))

    @property
    def n(self) -> int:
        return self._n

    @property
    def kind(self) -> TopologyKind:
        return self._kind

    @property
    def edges(self) -> frozenset:
        return self._edges

    def in_neighbors(self, i: int) -> tuple[int, ...]:
        """Workers sending to ``i``, including ``i`` itself."""
        return self._in[i]

    def out_neighbors(self, i: int) -> tuple[int, ...]:
        """Workers receiving from ``i``, including ``i`` itself."""
        return self._out[i]

    def in_degree(self, i: int) -> int:
        return len(self._in[i])

    def reverse(self) -> "CommGraph":
        return CommGraph(self._n, [(j, i) for i, j in self._edges], kind=TopologyKind.CUSTOM)

    def to_networkx(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(range(self._n))
        graph.add_edges_from(sorted(self._edges))
        return graph

    def is_strongly_connected(self) -> bool:
        return nx.is_strongly_connected(self.to_networkx())

    @cached_property
    def path_lengths(self) -> np.ndarray:
        """All-pairs BFS distances; ``-1`` marks an unreachable pair."""
        lengths = np.full((self._n, self._n), -1, dtype=np.int64)
        for source, targets in nx.all_pairs_shortest_path_length(self.to_networkx()):
            for target, length in targets.items():
                lengths[source, target] = length
        return lengths

    def diameter(self) -> int:
        if np.any(self.path_lengths < 0):
            raise NoPathError("The graph is not strongly connected.")
        return int(self.path_lengths.max())

    def adjacency_json(self) -> str:
        return json.dumps(
            {"kind": self._kind.value, "n": self._n, "adjacency": {str(i): list(self._out[i]) for i in range(self._n)}},
            sort_keys=True,
        )

    def __repr__(self) -> str:
        return f"CommGraph(kind={self._kind.value}, n={self._n}, edges={len(self._edges)})"


class TopologySpec(BaseModel):
    """The topology section of a run manifest."""

    model_config = ConfigDict(extra="forbid")

    kind: TopologyKind
    n: Optional[PositiveInt] = None
    cluster_sizes: Optional[list[PositiveInt]] = None
    edges: Optional[list[tuple[NonNegativeInt, NonNegativeInt]]] = None

    @model_validator(mode="after")
    def _check_sizes(self) -> "TopologySpec":
        if self.kind is TopologyKind.CLUSTERED:
            if not self.cluster_sizes:
                raise ValueError("A clustered topology needs 'cluster_sizes'.")
            if self.n is not None and self.n != sum(self.cluster_sizes):
                raise ValueError(f"'n' ({self.n}) does not match the sum of 'cluster_sizes' ({sum(self.cluster_sizes)}).")
        elif self.n is None:
            raise ValueError(f"A {self.kind.value} topology needs 'n'.")
        if self.kind is TopologyKind.CUSTOM and self.edges is None:
            raise ValueError("A custom topology needs 'edges'.")
        return self

    @property
    def worker_count(self) -> int:
        if self.kind is TopologyKind.CLUSTERED:
            return sum(self.cluster_sizes or [])
        return self.n or 0


def _bidirectional(pairs: Iterable[tuple[int, int]]) -> set[tuple[int, int]]:
    edges = set()
    for i, j in pairs:
        edges.add((i, j))
        edges.add((j, i))
    return edges


def _ring_based_pairs(n: int, offset: int = 0) -> list[tuple[int, int]]:
    pairs = [(offset + i, offset + (i + 1) % n) for i in range(n)]
    pairs += [(offset + i, offset + (i + n // 2) % n) for i in range(n)]
    return pairs


@validate_call
def build_ring(n: int) -> CommGraph:
    """Each worker exchanges updates with its two ring neighbors."""
    if n < 3:
        raise InvalidTopologyError(f"A ring needs at least 3 workers, got {n}.")
    return CommGraph(n, _bidirectional((i, (i + 1) % n) for i in range(n)), kind=TopologyKind.RING)


@validate_call
def build_ring_based(n: int) -> CommGraph:
    """A ring where every worker is also connected to the most distant worker."""
    if n < 4 or n % 2:
        raise InvalidTopologyError(f"A ring-based graph needs an even number of workers >= 4, got {n}.")
    return CommGraph(n, _bidirectional(_ring_based_pairs(n)), kind=TopologyKind.RING_BASED)


@validate_call
def build_double_ring(n: int) -> CommGraph:
    """Two ring-based halves connected node to node."""
    if n % 4 or n < 8:
        raise InvalidTopologyError(f"A double ring needs a multiple of 4 workers, with halves of at least 4, got {n}.")
    half = n // 2
    pairs = _ring_based_pairs(half) + _ring_based_pairs(half, offset=half)
    pairs += [(i, i + half) for i in range(half)]
    return CommGraph(n, _bidirectional(pairs), kind=TopologyKind.DOUBLE_RING)


@validate_call
def build_clustered(cluster_sizes: list[PositiveInt]) -> CommGraph:
    """
    All-to-all connections inside each cluster, plus a ring joining the cluster gateways.

    The gateway of a cluster is its lowest-numbered worker. With two clusters the gateway ring collapses to a
    single bidirectional pair.
    """
    if len(cluster_sizes) < 2:
        raise InvalidTopologyError(f"A clustered topology needs at least 2 clusters, got {len(cluster_sizes)}.")
    pairs = []
    gateways = []
    offset = 0
    for size in cluster_sizes:
        members = range(offset, offset + size)
        pairs += [(i, j) for i in members for j in members if i < j]
        gateways.append(offset)
        offset += size
    if len(gateways) == 2:
        pairs.append((gateways[0], gateways[1]))
    else:
        pairs += [(gateways[k], gateways[(k + 1) % len(gateways)]) for k in range(len(gateways))]
    return CommGraph(offset, _bidirectional(pairs), kind=TopologyKind.CLUSTERED)


@validate_call
def build_complete(n: PositiveInt) -> CommGraph:
    return CommGraph(n, [(i, j) for i in range(n) for j in range(n)], kind=TopologyKind.COMPLETE)


def build_topology(spec: TopologySpec) -> CommGraph:
    if spec.kind is TopologyKind.RING:
        return build_ring(spec.worker_count)
    if spec.kind is TopologyKind.RING_BASED:
        return build_ring_based(spec.worker_count)
    if spec.kind is TopologyKind.DOUBLE_RING:
        return build_double_ring(spec.worker_count)
    if spec.kind is TopologyKind.CLUSTERED:
        return build_clustered(spec.cluster_sizes or [])
    if spec.kind is TopologyKind.COMPLETE:
        return build_complete(spec.worker_count)
    return CommGraph(spec.worker_count, spec.edges or [], kind=TopologyKind.CUSTOM)


@pydantic_dataclass(config=PYDANTIC_CONFIG)
class WeightMatrix:
    """``w[i][j]`` is the influence of worker ``i`` on the reduce of worker ``j``."""

    w: np.ndarray
    doubly_stochastic: bool

    def to_csv(self) -> str:
        out = io.StringIO()
        for row in self.w:
            out.write(",".join(format(float(value), CSV_FLOAT_FORMAT) for value in row))
            out.write("\n")
        return out.getvalue()


def is_doubly_stochastic(w: np.ndarray, tol: float = DOUBLY_STOCHASTIC_TOLERANCE) -> bool:
    return bool(np.all(np.abs(w.sum(axis=0) - 1.0) <= tol) and np.all(np.abs(w.sum(axis=1) - 1.0) <= tol))


def uniform_weights(g: CommGraph) -> WeightMatrix:
    """Every update reaching worker ``j`` gets the weight ``1/|N_in(j)|``."""
    w = np.zeros((g.n, g.n))
    for j in range(g.n):
        senders = list(g.in_neighbors(j))
        w[senders, j] = 1.0 / len(senders)
    doubly_stochastic = is_doubly_stochastic(w)
    if not doubly_stochastic:
        logger.warning("Uniform weights on %r are not doubly stochastic (unequal in-degrees).", g)
    return WeightMatrix(w=w, doubly_stochastic=doubly_stochastic)


def shortest_path_len(g: CommGraph, source: int, target: int) -> int:
    """Number of edges on the shortest directed path from ``source`` to ``target``."""
    if not (0 <= source < g.n and 0 <= target < g.n):
        raise InvalidTopologyError(f"Worker ids must be in 0..{g.n - 1}, got {source} and {target}.")
    length = int(g.path_lengths[source, target])
    if length < 0:
        raise NoPathError(f"No path from worker {source} to worker {target}.")
    return length


def spectral_gap(w: WeightMatrix) -> float:
    """
    Difference between the moduli of the two largest eigenvalues of a doubly stochastic weight matrix.

    Small matrices are decomposed densely; larger ones use ARPACK with a fixed starting vector so that the result
    is reproducible.
    """
    if not w.doubly_stochastic:
        raise PreconditionError("The spectral gap is only defined here for doubly stochastic weight matrices.")
    n = w.w.shape[0]
    if n == 1:
        return 1.0
    if n <= DENSE_EIGEN_MAX_N:
        eigenvalues = scipy.linalg.eigvals(w.w)
    else:
        eigenvalues = scipy.sparse.linalg.eigs(w.w, k=2, which="LM", tol=EIGEN_TOLERANCE, v0=np.linspace(1.0, 2.0, n), return_eigenvectors=False)
    norms = np.sort(np.abs(eigenvalues))[::-1]
    return float(np.clip(norms[0] - norms[1], 0.0, 1.0))


def uniform_spectral_gap(g: CommGraph) -> Optional[float]:
    """Spectral gap of the uniform weights of ``g``, or ``None`` when those weights are not doubly stochastic."""
    weights = uniform_weights(g)
    if not weights.doubly_stochastic:
        return None
    return spectral_gap(weights)


class BoundSetting(str, Enum):
    STANDARD = "standard"
    STALENESS = "staleness"
    BACKUP = "backup"
    HYBRID = "hybrid"
    NOTIFY_ACK = "notify_ack"
    TOKEN = "token"


class GapBoundQuery(BaseModel):
    """Asks for the upper bound of ``Iter(i) - Iter(j)`` under a synchronization setting."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    setting: BoundSetting
    i: NonNegativeInt
    j: NonNegativeInt
    staleness: Optional[PositiveInt] = None
    max_ig: Optional[PositiveInt] = None
    base: Optional[BoundSetting] = None

    @model_validator(mode="after")
    def _check_parameters(self) -> "GapBoundQuery":
        if self.setting is BoundSetting.TOKEN:
            if self.max_ig is None:
                raise ValueError("A token bound needs 'max_ig'.")
            if self.base is BoundSetting.TOKEN:
                raise ValueError("The base setting of a token bound cannot itself be a token setting.")
        effective = self.base if self.setting is BoundSetting.TOKEN else self.setting
        if effective is BoundSetting.STALENESS and self.staleness is None:
            raise ValueError("A staleness bound needs 'staleness'.")
        return self


def _base_bound(setting: BoundSetting, staleness: Optional[int], to_i: int, to_j: int) -> int | Unbounded:
    if setting is BoundSetting.STANDARD:
        return to_i
    if setting is BoundSetting.STALENESS:
        if staleness is None:
            raise PreconditionError("A staleness bound needs the staleness parameter.")
        return (staleness + 1) * to_i
    if setting is BoundSetting.NOTIFY_ACK:
        return min(to_i, 2 * to_j)
    return UNBOUNDED


def gap_bound(q: GapBoundQuery, g: CommGraph) -> int | Unbounded:
    """
    Upper bound of ``Iter(i) - Iter(j)``.

    ``to_i`` is the length of the path from ``j`` to ``i`` and ``to_j`` the length of the path from ``i`` to ``j``.
    Token queues add ``max_ig * to_j`` on top of whatever the base setting guarantees.
    """
    if q.i == q.j:
        return 0
    to_i = shortest_path_len(g, q.j, q.i)
    to_j = shortest_path_len(g, q.i, q.j)
    if q.setting is not BoundSetting.TOKEN:
        return _base_bound(q.setting, q.staleness, to_i, to_j)
    if q.max_ig is None:
        raise PreconditionError("A token bound needs max_ig.")
    token_bound = q.max_ig * to_j
    base = _base_bound(q.base or BoundSetting.STANDARD, q.staleness, to_i, to_j)
    if base is UNBOUNDED:
        return token_bound
    return min(base, token_bound)
