"""Per-worker protocol state machine: synchronization policies, readiness, reduce rules, tokens and skipping."""
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, NonNegativeInt, PositiveInt, model_validator

from hop.core.constants import DEFAULT_TRIGGER_LAG
from hop.core.errors import ConfigurationError, ProtocolViolationError
from hop.core.queues import Ready, TokenQueue, UpdateMsg, UpdateQueueSet
from hop.core.topology import UNBOUNDED, BoundSetting, CommGraph, GapBoundQuery, gap_bound


class SyncMode(str, Enum):
    STANDARD = "standard"
    NOTIFY_ACK = "notify_ack"
    BACKUP = "backup"
    STALENESS = "staleness"
    HYBRID = "hybrid"


class ComputeOrder(str, Enum):
    SERIAL = "serial"
    PARALLEL = "parallel"


class SkipConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    max_jump_per_skip: PositiveInt
    trigger_lag: NonNegativeInt = DEFAULT_TRIGGER_LAG


class SyncPolicy(BaseModel):
    """
    The synchronization variant run by every worker.

    ``allow_unbounded`` lets BACKUP and HYBRID run without token queues. Only tests use it, to show that the gap
    then grows without limit.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    mode: SyncMode = SyncMode.STANDARD
    n_buw: NonNegativeInt = 0
    staleness: Optional[PositiveInt] = None
    token_gap: Optional[PositiveInt] = None
    skip: Optional[SkipConfig] = None
    order: ComputeOrder = ComputeOrder.PARALLEL
    suppress_stale_sends: bool = True
    allow_unbounded: bool = False

    @model_validator(mode="after")
    def _check_mode(self) -> "SyncPolicy":
        if self.mode in (SyncMode.BACKUP, SyncMode.HYBRID):
            if self.token_gap is None and not self.allow_unbounded:
                raise ValueError(f"{self.mode.value} mode requires 'token_gap': token queues must bound the iteration gap when updates can be skipped.")
        elif self.n_buw:
            raise ValueError(f"'n_buw' only applies to backup and hybrid modes, not {self.mode.value}.")
        if self.mode in (SyncMode.STALENESS, SyncMode.HYBRID):
            if self.staleness is None:
                raise ValueError(f"{self.mode.value} mode requires a staleness bound 's' >= 1.")
        elif self.staleness is not None:
            raise ValueError(f"'staleness' only applies to staleness and hybrid modes, not {self.mode.value}.")
        if self.skip is not None:
            if self.token_gap is None:
                raise ValueError("Skipping iterations requires 'token_gap'.")
            if self.mode not in (SyncMode.BACKUP, SyncMode.STALENESS, SyncMode.HYBRID):
                raise ValueError(f"Skipping iterations is not allowed in {self.mode.value} mode: receivers need every iteration's update.")
        return self

    @property
    def uses_staleness(self) -> bool:
        return self.mode in (SyncMode.STALENESS, SyncMode.HYBRID)

    @property
    def staleness_bound(self) -> int:
        if self.staleness is None:
            raise ConfigurationError(f"{self.mode.value} mode has no staleness bound.")
        return self.staleness

    @property
    def retained_staleness(self) -> int:
        return self.staleness if self.uses_staleness and self.staleness else 0

    def min_useful_iter(self, iteration: int) -> int:
        """Oldest update iteration a worker at ``iteration`` can still use."""
        return iteration - self.retained_staleness

    def bound_setting(self) -> BoundSetting:
        return BoundSetting(self.mode.value)

    def bound_query(self, i: int, j: int) -> GapBoundQuery:
        if self.token_gap is None:
            return GapBoundQuery(setting=self.bound_setting(), i=i, j=j, staleness=self.staleness)
        return GapBoundQuery(setting=BoundSetting.TOKEN, i=i, j=j, staleness=self.staleness, max_ig=self.token_gap, base=self.bound_setting())

    def bound_matrix(self, g: CommGraph) -> np.ndarray:
        """``bounds[i, j]`` bounds ``Iter(i) - Iter(j)``; ``inf`` stands for an unbounded gap."""
        bounds = np.zeros((g.n, g.n))
        for i in range(g.n):
            for j in range(g.n):
                bound = gap_bound(self.bound_query(i, j), g)
                bounds[i, j] = np.inf if bound is UNBOUNDED else bound
        return bounds

    def queue_layout(self, g: CommGraph, owner: int) -> tuple[Optional[int], int, Optional[int]]:
        """
        ``(max_ig, n_slots, capacity)`` of the update queue of ``owner``.

        With token queues the slots rotate over ``max_ig + 1`` iterations. Without them the window is sized from the
        bound on how far each in-coming neighbor can run ahead; unbounded settings get a single unbounded slot.
        """
        in_degree = g.in_degree(owner)
        kept_behind = self.retained_staleness
        if self.token_gap is not None:
            capacity = (1 + self.token_gap + kept_behind) * in_degree
            return self.token_gap, self.token_gap + 1, capacity
        widths = []
        for sender in g.in_neighbors(owner):
            if sender == owner:
                continue
            ahead = gap_bound(self.bound_query(sender, owner), g)
            if ahead is UNBOUNDED:
                return None, 1, None
            widths.append(ahead + 1)
        if not widths:
            return None, 1, 0
        return None, max(widths), sum(width + kept_behind for width in widths)


class Phase(str, Enum):
    SENDING = "SENDING"
    COMPUTING = "COMPUTING"
    AWAIT_UPDATES = "AWAIT_UPDATES"
    AWAIT_TOKENS = "AWAIT_TOKENS"
    AWAIT_ACKS = "AWAIT_ACKS"
    DONE = "DONE"


class BlockKind(str, Enum):
    INSUFFICIENT_UPDATES = "INSUFFICIENT_UPDATES"
    STALENESS_VIOLATED = "STALENESS_VIOLATED"
    AWAITING_ACK = "AWAITING_ACK"
    AWAIT_TOKENS = "AWAIT_TOKENS"


@dataclass(frozen=True)
class Blocked:
    """A worker cannot proceed; ``peers`` are the workers it waits for."""

    kind: BlockKind
    peers: tuple[int, ...] = ()

    def __str__(self) -> str:
        return f"BLOCKED({self.kind.value})"


@dataclass(frozen=True)
class ReduceInput:
    iteration: int
    messages: list[UpdateMsg]
    consume: bool = False


@dataclass
class WorkerState:
    id: int
    params: np.ndarray
    momentum_buf: np.ndarray
    iter: int = 0
    phase: Phase = Phase.SENDING
    acks_received: dict[int, set[int]] = field(default_factory=dict)
    newest_recv: dict[int, int] = field(default_factory=dict)
    tokens_credited_through: int = 0
    gradient: Optional[np.ndarray] = None
    jump_target: Optional[int] = None
    jump_origin: Optional[int] = None
    skip_checked_at: Optional[int] = None
    blocked: Optional[Blocked] = None
    blocked_since: float = 0.0


@dataclass(frozen=True)
class BeginOutcome:
    messages: list[tuple[int, UpdateMsg]]
    blocked: Optional[Blocked] = None


def credit_iteration_tokens(w: WorkerState, local_tokens: list[TokenQueue]) -> int:
    """Puts one token per iteration entered since the last credit into every local token queue."""
    owed = w.iter - w.tokens_credited_through
    if owed > 0:
        for queue in local_tokens:
            queue.insert(owed)
        w.tokens_credited_through = w.iter
    return owed


def outbound_updates(w: WorkerState, receivers: tuple[int, ...], send_filter: Optional[Callable[[int, int], bool]] = None, now: float = 0.0) -> list[tuple[int, UpdateMsg]]:
    payload = w.params.copy()
    payload.flags.writeable = False
    return [
        (receiver, UpdateMsg(sender=w.id, iter=w.iter, payload=payload, send_time=now))
        for receiver in receivers
        if receiver != w.id and (send_filter is None or send_filter(receiver, w.iter))
    ]


def begin_iteration(
    w: WorkerState,
    policy: SyncPolicy,
    local_tokens: list[TokenQueue],
    receivers: tuple[int, ...],
    send_filter: Optional[Callable[[int, int], bool]] = None,
    now: float = 0.0,
) -> BeginOutcome:
    """
    Enters iteration ``w.iter``: credits the local token queues, checks the NOTIFY-ACK gate and, in parallel order,
    returns the updates to send. In serial order the send happens after the apply, see :func:`outbound_updates`.
    """
    credit_iteration_tokens(w, local_tokens)
    if policy.mode is SyncMode.NOTIFY_ACK and w.iter > 0:
        acked = w.acks_received.get(w.iter - 1, set())
        missing = tuple(j for j in receivers if j != w.id and j not in acked)
        if missing:
            return BeginOutcome(messages=[], blocked=Blocked(BlockKind.AWAITING_ACK, missing))
        w.acks_received.pop(w.iter - 1, None)
    if policy.order is ComputeOrder.SERIAL:
        return BeginOutcome(messages=[])
    return BeginOutcome(messages=outbound_updates(w, receivers, send_filter, now))


def readiness(w: WorkerState, q: UpdateQueueSet, policy: SyncPolicy, senders: tuple[int, ...], iteration: Optional[int] = None) -> ReduceInput | Blocked:
    """
    Checks whether the updates needed to reduce ``iteration`` (the current one by default) are available.

    Standard, NOTIFY-ACK and backup modes dequeue the matching updates on success; staleness and hybrid modes return
    the newest update of each sender and leave them in the queue until the caller consumes them.
    """
    k = w.iter if iteration is None else iteration
    if policy.uses_staleness:
        min_iter = k - policy.staleness_bound
        kept, unsatisfied = q.newest_per_sender(min_iter, senders)
        lagging = tuple(sorted(j for j in unsatisfied if w.newest_recv.get(j, -1) < min_iter))
        allowed = policy.n_buw if policy.mode is SyncMode.HYBRID else 0
        if len(lagging) > allowed:
            return Blocked(BlockKind.STALENESS_VIOLATED, lagging)
        return ReduceInput(k, [kept[j] for j in sorted(kept)], consume=True)
    required = len(senders) - (policy.n_buw if policy.mode is SyncMode.BACKUP else 0)
    if required <= 0:
        return ReduceInput(k, q.drain_extras(k))
    result = q.poll(k, required)
    if not isinstance(result, Ready):
        present = q.senders_at(k)
        return Blocked(BlockKind.INSUFFICIENT_UPDATES, tuple(j for j in senders if j not in present))
    messages = list(result.messages)
    if policy.mode is SyncMode.BACKUP:
        messages += q.drain_extras(k)
    return ReduceInput(k, messages)


def reduce_standard(own: np.ndarray, received: list[np.ndarray]) -> np.ndarray:
    """Arithmetic mean of ``own`` and the received parameters."""
    if not received:
        return own.copy()
    for params in received:
        if params.shape != own.shape:
            raise ProtocolViolationError(f"Cannot reduce parameters of shape {params.shape} into {own.shape}.")
    return np.mean(np.vstack([own, *received]), axis=0)


def reduce_staleness(own: np.ndarray, received: list[tuple[np.ndarray, int]], k: int, s: int) -> np.ndarray:
    """
    Weighted average where an update of iteration ``t`` weighs ``t - (k - s) + 1``. ``own`` counts as an update of
    iteration ``k``.
    """
    if not received:
        return own.copy()
    weights = [float(s + 1)]
    for params, iteration in received:
        if iteration < k - s:
            raise ProtocolViolationError(f"Update of iteration {iteration} is older than the staleness window [{k - s}, ...].")
        if params.shape != own.shape:
            raise ProtocolViolationError(f"Cannot reduce parameters of shape {params.shape} into {own.shape}.")
        weights.append(float(iteration - (k - s) + 1))
    stacked = np.vstack([own] + [params for params, _ in received])
    weight_vector = np.asarray(weights)
    return weight_vector @ stacked / weight_vector.sum()


def reduce_for(policy: SyncPolicy, own: np.ndarray, ready: ReduceInput) -> np.ndarray:
    if policy.uses_staleness:
        return reduce_staleness(own, [(msg.payload, msg.iter) for msg in ready.messages], ready.iteration, policy.staleness_bound)
    return reduce_standard(own, [msg.payload for msg in ready.messages])


def end_iteration(w: WorkerState, out_tokens: list[TokenQueue]) -> bool:
    """Takes one token from every out-going neighbor, all or nothing, and advances to the next iteration."""
    if any(queue.count < 1 for queue in out_tokens):
        return False
    for queue in out_tokens:
        queue.try_remove(1)
    w.iter += 1
    return True


def token_shortage(out_tokens: list[TokenQueue], k: int = 1) -> tuple[int, ...]:
    return tuple(queue.holder for queue in out_tokens if queue.count < k)


@dataclass(frozen=True)
class Jump:
    origin: int
    target: int


NO_JUMP = None


def maybe_skip(w: WorkerState, out_tokens: list[TokenQueue], cfg: SkipConfig, max_ig: int, max_iter: Optional[int] = None) -> Optional[Jump]:
    """
    Decides whether a lagging worker should jump ahead. The smallest token count among the out-going neighbors,
    minus ``max_ig``, is how far the slowest of them is ahead.
    """
    if not out_tokens:
        return NO_JUMP
    max_jump = min(queue.count for queue in out_tokens)
    lag = max_jump - max_ig
    amount = min(lag, cfg.max_jump_per_skip)
    if max_iter is not None:
        amount = min(amount, max_iter - w.iter)
    if lag < cfg.trigger_lag or amount < 1:
        return NO_JUMP
    return Jump(origin=w.iter, target=w.iter + amount)


def execute_jump(w: WorkerState, target: int, reduced: np.ndarray, out_tokens: list[TokenQueue], local_tokens: list[TokenQueue]) -> int:
    """
    Moves ``w`` to iteration ``target`` with the freshly reduced parameters, taking ``target - w.iter`` tokens from
    every out-going neighbor and crediting as many to every local token queue.
    """
    amount = target - w.iter
    if amount < 1:
        raise ProtocolViolationError(f"Worker {w.id} cannot jump from iteration {w.iter} to {target}.")
    short = token_shortage(out_tokens, amount)
    if short:
        raise ProtocolViolationError(f"Worker {w.id} lacks {amount} tokens from workers {list(short)} to jump to iteration {target}.")
    for queue in out_tokens:
        queue.try_remove(amount)
    for queue in local_tokens:
        queue.insert(amount)
    w.params = reduced
    w.iter = target
    w.tokens_credited_through = target
    return amount
