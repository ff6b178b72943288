"""
Deterministic discrete-event simulation of a decentralized training cluster.

Events are ordered by ``(virtual time, sequence number)``; the sequence number is assigned when the event is
scheduled, so equal-time events fire in scheduling order and a run is fully determined by its manifest and seed.
"""
import heapq
import logging
from collections import defaultdict
from dataclasses import asdict
from enum import IntEnum
from typing import Any, Iterable, Optional

import networkx as nx
import numpy as np
from pydantic.dataclasses import dataclass as pydantic_dataclass

from hop.core import PYDANTIC_CONFIG
from hop.core.config import RunManifest
from hop.core.constants import AVERAGED_WORKER, DEFAULT_RUNTIME_ASSERTS, DEFAULT_STRICT_REORDER, TRACE_TAIL_LENGTH
from hop.core.errors import ConfigurationError, DeadlockError, InvalidTopologyError, ProtocolViolationError
from hop.core.learners import BatchSampler, build_datasets, evaluate_loss, loss_grad, sgd_update
from hop.core.metrics import ACK, ADVANCE, APPLY, LOSS, RECV_READY, REDUCE, SEND, MetricsLog, blocked_event, jump_event
from hop.core.queues import QueueTracer, TokenQueue, UpdateMsg, UpdateQueueSet
from hop.core.timing import sample_iteration_time, sample_latency
from hop.core.topology import CommGraph, build_topology, uniform_spectral_gap
from hop.core.utils import get_setting, params_digest
from hop.core.worker import (
    Blocked,
    BlockKind,
    ComputeOrder,
    Phase,
    SyncMode,
    WorkerState,
    begin_iteration,
    credit_iteration_tokens,
    end_iteration,
    execute_jump,
    maybe_skip,
    outbound_updates,
    readiness,
    reduce_for,
    token_shortage,
)

logger = logging.getLogger(__name__)


class EventKind(IntEnum):
    COMPUTE_DONE = 0
    DELIVER_UPDATE = 1
    DELIVER_ACK = 2
    ITERATION_CHECK = 3
    WAKE = 4
    LOSS_SAMPLE = 5


@pydantic_dataclass(config=PYDANTIC_CONFIG)
class DeadlockReport:
    """
    The blocked-on graph at the moment the event queue ran dry.

    ``waiting`` holds ``(waiter, peer, reason, iteration)`` tuples: ``waiter`` cannot leave ``iteration`` before
    ``peer`` sends an update, a token or an ACK.
    """

    time: float
    iterations: list[int]
    waiting: list[tuple[int, int, str, int]]
    cycle: list[int]
    frozen: list[int]

    def describe(self) -> str:
        lines = [f"Deadlock at t={self.time:g} with worker iterations {self.iterations}."]
        if self.cycle:
            lines.append("Cycle: " + " -> ".join(str(w) for w in self.cycle + self.cycle[:1]) + ".")
        for waiter, peer, reason, iteration in self.waiting:
            if reason == BlockKind.AWAIT_TOKENS.value:
                lines.append(f"  worker {waiter} at iteration {iteration} waits for a token from worker {peer}")
            elif reason == BlockKind.AWAITING_ACK.value:
                lines.append(f"  worker {waiter} at iteration {iteration} waits for ACK({iteration - 1}) from worker {peer}")
            else:
                lines.append(f"  worker {waiter} waits for the update of iteration {iteration} on edge {peer}->{waiter} ({reason})")
        return "\n".join(lines)


class Simulation:
    """
    One decentralized training run.

    :param RunManifest manifest: The validated run description.
    :param seed: Overrides ``manifest.seed``.
    :param runtime_asserts: Checks the gap, token and capacity invariants after every iteration change.
        Defaults to the manifest value, then to the ``HOP_RUNTIME_ASSERTS`` setting.
    :param strict_reorder: Delays every other message on an edge so that later updates overtake earlier ones.
    :param suppressed_edges: ``(sender, receiver)`` pairs whose updates are never sent.
    """

    def __init__(
        self,
        manifest: RunManifest,
        *,
        seed: Optional[int] = None,
        runtime_asserts: Optional[bool] = None,
        strict_reorder: Optional[bool] = None,
        suppressed_edges: Iterable[tuple[int, int]] = (),
    ) -> None:
        self.manifest = manifest
        self.seed = manifest.seed if seed is None else seed
        if runtime_asserts is None:
            runtime_asserts = manifest.runtime_asserts
        if runtime_asserts is None:
            runtime_asserts = get_setting("HOP_RUNTIME_ASSERTS", DEFAULT_RUNTIME_ASSERTS)
        self.runtime_asserts = bool(runtime_asserts)
        if strict_reorder is None:
            strict_reorder = get_setting("HOP_STRICT_REORDER", DEFAULT_STRICT_REORDER)
        self.strict_reorder = bool(strict_reorder)
        self.suppressed_edges = frozenset(suppressed_edges)
        self.policy = manifest.policy
        self.timing = manifest.timing
        self.graph = build_topology(manifest.topology)
        self._check_graph(self.graph)
        n = self.graph.n
        self.n = n

        learner = manifest.learner
        self.train_set, self.eval_set = build_datasets(learner, self.seed)
        self.sampler = BatchSampler(learner.n_samples, n, self.seed)
        self._timing_rngs = [np.random.default_rng(s) for s in np.random.SeedSequence([self.seed, 1]).spawn(n)]
        self._latency_rngs = [np.random.default_rng(s) for s in np.random.SeedSequence([self.seed, 2]).spawn(n)]

        self.tracer = QueueTracer() if manifest.trace_queues else None
        self.log = MetricsLog(n_workers=n)
        self.log.spectral_gap = uniform_spectral_gap(self.graph)
        self.workers = [WorkerState(id=i, params=np.zeros(learner.dim + 1), momentum_buf=np.zeros(learner.dim + 1)) for i in range(n)]
        self.senders = [tuple(j for j in self.graph.in_neighbors(i) if j != i) for i in range(n)]
        self.receivers = [tuple(j for j in self.graph.out_neighbors(i) if j != i) for i in range(n)]
        self.queues = []
        for i in range(n):
            max_ig, n_slots, capacity = self.policy.queue_layout(self.graph, i)
            if capacity is None:
                logger.warning("Update queue of worker %d is unbounded: no token queues bound the iteration gap.", i)
            self.queues.append(UpdateQueueSet(i, self.graph.in_degree(i), max_ig=max_ig, n_slots=n_slots, capacity=capacity, tracer=self.tracer))
        self.tokens: dict[tuple[int, int], TokenQueue] = {}
        if self.policy.token_gap is not None:
            max_ig = self.policy.token_gap
            for holder in range(n):
                for beneficiary in self.senders[holder]:
                    hops = int(self.graph.path_lengths[holder, beneficiary])
                    queue = TokenQueue(holder, beneficiary, capacity=max_ig * (hops + 1), tracer=self.tracer)
                    queue.init(max_ig)
                    self.tokens[(holder, beneficiary)] = queue
        self.local_tokens = [[self.tokens[(h, b)] for b in self.senders[h]] if self.tokens else [] for h in range(n)]
        self.out_tokens = [[self.tokens[(h, b)] for h in self.receivers[b]] if self.tokens else [] for b in range(n)]

        self.bounds = self.policy.bound_matrix(self.graph)
        self.log.gap_bound = int(self.bounds.max()) if np.all(np.isfinite(self.bounds)) else "unbounded"
        self._iters = np.zeros(n, dtype=np.int64)
        self._heap: list[tuple[float, int, int, Any]] = []
        self._seq = 0
        self._pending_wakes: set[int] = set()
        self._edge_sends: dict[tuple[int, int], int] = defaultdict(int)
        self._grad_hash: dict[int, str] = {}
        self.now = 0.0
        self.frozen = frozenset(self.timing.frozen)

    def _check_graph(self, g: CommGraph) -> None:
        if not g.is_strongly_connected():
            raise InvalidTopologyError(f"{g!r} is not strongly connected.")
        for i in range(g.n):
            if self.policy.n_buw and self.policy.n_buw >= g.in_degree(i):
                raise ConfigurationError(f"n_buw={self.policy.n_buw} must be below |N_in({i})| = {g.in_degree(i)}.")
        try:
            self.timing.check_workers(g.n)
        except ValueError as e:
            raise ConfigurationError(str(e)) from e

    # Event plumbing.

    def _schedule(self, time: float, kind: EventKind, payload: Any = None) -> None:
        heapq.heappush(self._heap, (time, self._seq, int(kind), payload))
        self._seq += 1

    def _record(self, worker: int, event: str, iteration: Optional[int] = None, loss: Optional[float] = None, gap: Optional[int] = None) -> None:
        self.log.record(self.now, worker, event, iteration, loss, gap)

    def _gap(self) -> int:
        return int(self._iters.max() - self._iters.min())

    def _sync_iter(self, w: WorkerState) -> None:
        self._iters[w.id] = w.iter

    def _latency(self, sender: int) -> float:
        return sample_latency(self.timing, self._latency_rngs[sender])

    def _wake(self, worker: int) -> None:
        if worker not in self._pending_wakes:
            self._pending_wakes.add(worker)
            self._schedule(self.now, EventKind.WAKE, worker)

    def _wake_token_waiters(self, w: WorkerState) -> None:
        for beneficiary in self.senders[w.id]:
            if self.workers[beneficiary].phase is Phase.AWAIT_TOKENS:
                self._wake(beneficiary)

    # Blocking bookkeeping.

    def _block(self, w: WorkerState, blocked: Blocked) -> None:
        if w.blocked is None or w.blocked.kind is not blocked.kind:
            self._unblock(w)
            self._record(w.id, blocked_event(blocked.kind.value), w.iter)
            w.blocked_since = self.now
            logger.debug("t=%g worker %d %s waiting for %s", self.now, w.id, blocked, blocked.peers)
        w.blocked = blocked

    def _unblock(self, w: WorkerState) -> None:
        if w.blocked is not None:
            self.log.add_block_time(w.blocked.kind.value, self.now - w.blocked_since)
            w.blocked = None

    # Sending.

    def _min_useful(self, w: WorkerState) -> int:
        return self.policy.min_useful_iter(w.iter)

    def _is_useless_for(self, receiver: int, iteration: int) -> bool:
        dest = self.workers[receiver]
        return dest.phase is Phase.DONE or iteration < self._min_useful(dest)

    def _send_filter(self, sender: int):
        def accept(receiver: int, iteration: int) -> bool:
            if (sender, receiver) in self.suppressed_edges:
                self.log.suppressed_sends += 1
                return False
            if self.policy.suppress_stale_sends and not self.timing.check_latency and self._is_useless_for(receiver, iteration):
                self.log.suppressed_sends += 1
                return False
            return True

        return accept

    def _send_updates(self, w: WorkerState, messages: list[tuple[int, UpdateMsg]]) -> None:
        for receiver, msg in messages:
            delay = self._latency(w.id)
            if self.strict_reorder:
                self._edge_sends[(w.id, receiver)] += 1
                if self._edge_sends[(w.id, receiver)] % 2:
                    delay += 2.0 * self.timing.max_base_compute()
            if self.timing.check_latency and self.policy.suppress_stale_sends:
                self._schedule(self.now + 2.0 * self._latency(w.id), EventKind.ITERATION_CHECK, (receiver, msg, delay))
            else:
                self._schedule(self.now + delay, EventKind.DELIVER_UPDATE, (receiver, msg))
        if messages:
            self._record(w.id, SEND, w.iter)

    def _send_acks(self, w: WorkerState, iteration: int) -> None:
        for sender in self.senders[w.id]:
            self._schedule(self.now + self._latency(w.id), EventKind.DELIVER_ACK, (sender, w.id, iteration))
        self._record(w.id, ACK, iteration)

    # Worker transitions.

    def _enter_iteration(self, w: WorkerState) -> None:
        credit_iteration_tokens(w, self.local_tokens[w.id])
        max_iter = self.manifest.stop.max_iter
        if max_iter is not None and w.iter >= max_iter:
            self._unblock(w)
            w.phase = Phase.DONE
            return
        skip, token_gap = self.policy.skip, self.policy.token_gap
        if skip is not None and token_gap is not None and w.skip_checked_at != w.iter:
            w.skip_checked_at = w.iter
            jump = maybe_skip(w, self.out_tokens[w.id], skip, token_gap, max_iter)
            if jump is not None:
                w.jump_origin, w.jump_target = jump.origin, jump.target
                w.phase = Phase.AWAIT_UPDATES
                self._try_reduce(w)
                return
        self._begin(w)

    def _begin(self, w: WorkerState) -> None:
        outcome = begin_iteration(w, self.policy, self.local_tokens[w.id], self.receivers[w.id], self._send_filter(w.id), self.now)
        if outcome.blocked is not None:
            w.phase = Phase.AWAIT_ACKS
            self._block(w, outcome.blocked)
            return
        self._unblock(w)
        self._send_updates(w, outcome.messages)
        w.phase = Phase.COMPUTING
        if w.id in self.frozen:
            return
        duration = sample_iteration_time(w.id, w.iter, self.timing, self._timing_rngs[w.id], self.n)
        self._schedule(self.now + duration, EventKind.COMPUTE_DONE, w.id)

    def _on_compute_done(self, w: WorkerState) -> None:
        sgd = self.manifest.learner.sgd
        batch = self.sampler.next_batch(w.id, sgd.batch_size)
        _, grad = loss_grad(self.manifest.learner.model, w.params, self.train_set.features[batch], self.train_set.labels[batch], sgd.weight_decay)
        base_hash = params_digest(w.params)
        if self.policy.order is ComputeOrder.SERIAL:
            w.params, w.momentum_buf = sgd_update(w.params, w.momentum_buf, grad, sgd)
            self.log.param_hashes.append((w.id, w.iter, base_hash, base_hash))
            self._record(w.id, APPLY, w.iter)
            self._send_updates(w, outbound_updates(w, self.receivers[w.id], self._send_filter(w.id), self.now))
        else:
            w.gradient = grad
            self._grad_hash[w.id] = base_hash
        w.phase = Phase.AWAIT_UPDATES
        self._try_reduce(w)

    def _try_reduce(self, w: WorkerState) -> None:
        iteration = w.iter if w.jump_target is None else w.jump_target - 1
        ready = readiness(w, self.queues[w.id], self.policy, self.senders[w.id], iteration)
        if isinstance(ready, Blocked):
            self._block(w, ready)
            return
        if ready.consume:
            self.queues[w.id].take(ready.messages)
            for msg in ready.messages:
                w.newest_recv[msg.sender] = max(w.newest_recv.get(msg.sender, -1), msg.iter)
        self._unblock(w)
        self._record(w.id, RECV_READY, iteration)
        reduced = reduce_for(self.policy, w.params, ready)
        self._record(w.id, REDUCE, iteration)
        if self.policy.mode is SyncMode.NOTIFY_ACK:
            self._send_acks(w, iteration)
        if w.jump_target is not None:
            self._finish_jump(w, w.jump_target, reduced)
            return
        if self.policy.order is ComputeOrder.PARALLEL:
            if w.gradient is None:
                raise ProtocolViolationError(f"Worker {w.id} reduces iteration {w.iter} before computing its gradient.", trace=self.log.tail(TRACE_TAIL_LENGTH))
            self.log.param_hashes.append((w.id, w.iter, self._grad_hash.pop(w.id), params_digest(reduced)))
            w.params, w.momentum_buf = sgd_update(reduced, w.momentum_buf, w.gradient, self.manifest.learner.sgd)
            w.gradient = None
            self._record(w.id, APPLY, w.iter)
        else:
            w.params = reduced
        w.phase = Phase.AWAIT_TOKENS
        self._try_advance(w)

    def _try_advance(self, w: WorkerState) -> None:
        if not end_iteration(w, self.out_tokens[w.id]):
            self._block(w, Blocked(BlockKind.AWAIT_TOKENS, token_shortage(self.out_tokens[w.id])))
            return
        self._unblock(w)
        self._after_progress(w, ADVANCE)

    def _finish_jump(self, w: WorkerState, target: int, reduced: np.ndarray) -> None:
        origin = w.iter
        execute_jump(w, target, reduced, self.out_tokens[w.id], self.local_tokens[w.id])
        w.jump_target = w.jump_origin = None
        w.skip_checked_at = target
        self.log.jumps += 1
        logger.debug("t=%g worker %d jumps from iteration %d to %d", self.now, w.id, origin, target)
        self._after_progress(w, jump_event(origin, target))

    def _after_progress(self, w: WorkerState, event: str) -> None:
        self._sync_iter(w)
        self._record(w.id, event, w.iter, gap=self._gap())
        self.queues[w.id].clear_stale(self._min_useful(w))
        self._enter_iteration(w)
        self._wake_token_waiters(w)
        if self.runtime_asserts:
            self.check_invariants()

    # Event handlers.

    def _on_deliver(self, receiver: int, msg: UpdateMsg) -> None:
        r = self.workers[receiver]
        stale = self._is_useless_for(receiver, msg.iter)
        if not stale and self.policy.uses_staleness:
            stale = msg.iter <= r.newest_recv.get(msg.sender, -1)
        if stale:
            self.log.dropped_updates += 1
            logger.debug("t=%g worker %d drops update %d from worker %d", self.now, receiver, msg.iter, msg.sender)
            return
        queue = self.queues[receiver]
        queue.enqueue(msg)
        if len(queue) > self.log.queue_high_water.get(receiver, 0):
            self.log.queue_high_water[receiver] = len(queue)
        if r.phase is Phase.AWAIT_UPDATES:
            self._try_reduce(r)

    def _on_iteration_check(self, receiver: int, msg: UpdateMsg, delay: float) -> None:
        if self._is_useless_for(receiver, msg.iter):
            self.log.suppressed_sends += 1
            return
        self._schedule(self.now + delay, EventKind.DELIVER_UPDATE, (receiver, msg))

    def _on_ack(self, receiver: int, acker: int, iteration: int) -> None:
        r = self.workers[receiver]
        r.acks_received.setdefault(iteration, set()).add(acker)
        if r.phase is Phase.AWAIT_ACKS:
            self._begin(r)

    def _on_wake(self, worker: int) -> None:
        self._pending_wakes.discard(worker)
        w = self.workers[worker]
        if w.phase is Phase.AWAIT_TOKENS:
            self._try_advance(w)

    def _sample_loss(self) -> float:
        averaged = np.mean(np.vstack([w.params for w in self.workers]), axis=0)
        learner = self.manifest.learner
        loss = evaluate_loss(learner.model, averaged, self.eval_set, learner.sgd.weight_decay)
        self._record(AVERAGED_WORKER, LOSS, int(self._iters.min()), loss=loss)
        return loss

    # Invariants.

    def check_invariants(self) -> None:
        """
        :raises ProtocolViolationError: when a pairwise gap exceeds its bound, or a token count differs from
            ``Iter(holder) - Iter(beneficiary) + max_ig`` or exceeds its capacity.
        """
        gaps = self._iters[:, None] - self._iters[None, :]
        violations = np.argwhere(gaps > self.bounds)
        if violations.size:
            i, j = (int(v) for v in violations[0])
            raise ProtocolViolationError(
                f"Iteration gap Iter({i}) - Iter({j}) = {gaps[i, j]} exceeds its bound {self.bounds[i, j]:g} at t={self.now:g}.",
                trace=self.log.tail(TRACE_TAIL_LENGTH),
            )
        max_ig = self.policy.token_gap
        if max_ig is None:
            return
        for (holder, beneficiary), queue in self.tokens.items():
            expected = int(self._iters[holder] - self._iters[beneficiary]) + max_ig
            if queue.count != expected or (queue.capacity is not None and queue.count > queue.capacity):
                raise ProtocolViolationError(
                    f"{queue!r} should hold {expected} tokens (capacity {queue.capacity}) at t={self.now:g}.",
                    trace=self.log.tail(TRACE_TAIL_LENGTH),
                )

    # Deadlock detection.

    def detect_deadlock(self) -> Optional[DeadlockReport]:
        """
        Builds the waits-for graph of the workers that are not done. Returns ``None`` when every waiting chain ends
        at a frozen worker (a stall, recorded in the log) and the report of a deadlock otherwise.
        """
        waiting = []
        for w in self.workers:
            if w.blocked is not None and w.phase is not Phase.DONE:
                iteration = w.iter if w.jump_target is None else w.jump_target - 1
                waiting += [(w.id, peer, w.blocked.kind.value, iteration) for peer in w.blocked.peers]
        report_frozen = sorted(w.id for w in self.workers if w.id in self.frozen and w.phase is Phase.COMPUTING)
        graph = nx.DiGraph()
        graph.add_nodes_from(w.id for w in self.workers if w.phase is not Phase.DONE)
        graph.add_edges_from((waiter, peer) for waiter, peer, _, _ in waiting)
        try:
            cycle = [edge[0] for edge in nx.find_cycle(graph)]
        except nx.NetworkXNoCycle:
            cycle = []
        report = DeadlockReport(time=self.now, iterations=[w.iter for w in self.workers], waiting=waiting, cycle=cycle, frozen=report_frozen)
        waiters = {waiter for waiter, _, _, _ in waiting}
        stalled = bool(report_frozen) and not cycle and all(nx.descendants(graph, waiter) & set(report_frozen) for waiter in waiters)
        if stalled:
            self.log.stall = asdict(report)
            logger.info("Run stalled at t=%g behind frozen workers %s.", self.now, report.frozen)
            return None
        return report

    # Main loop.

    def run(self) -> MetricsLog:
        """
        Executes the event loop until every worker is done or ``max_time`` passes.

        :raises DeadlockError: when the event queue runs dry before the stop condition, outside a stall.
        :raises ProtocolViolationError: when a runtime invariant check fails.
        :raises DivergenceError: when SGD produces non-finite parameters.
        """
        stop = self.manifest.stop
        logger.info("Starting %s: %r, %s mode, seed %d.", self.manifest.name, self.graph, self.policy.mode.value, self.seed)
        if self.manifest.loss_interval is not None:
            self._schedule(0.0, EventKind.LOSS_SAMPLE)
        for w in self.workers:
            self._record(w.id, ADVANCE, 0, gap=0)
        for w in self.workers:
            self._enter_iteration(w)
        timed_out = False
        while self._heap and not self._all_done():
            time, _, kind, payload = heapq.heappop(self._heap)
            if stop.max_time is not None and time > stop.max_time:
                timed_out = True
                self.now = stop.max_time
                break
            self.now = time
            if self.tracer is not None:
                self.tracer.now = time
            self._dispatch(EventKind(kind), payload)
        if not timed_out and not self._all_done():
            report = self.detect_deadlock()
            if report is not None:
                self.log.end_time = self.now
                raise DeadlockError(report, self.log)
        self._finish()
        return self.log

    def _dispatch(self, kind: EventKind, payload: Any) -> None:
        if kind is EventKind.COMPUTE_DONE:
            self._on_compute_done(self.workers[payload])
        elif kind is EventKind.DELIVER_UPDATE:
            self._on_deliver(*payload)
        elif kind is EventKind.DELIVER_ACK:
            self._on_ack(*payload)
        elif kind is EventKind.ITERATION_CHECK:
            self._on_iteration_check(*payload)
        elif kind is EventKind.WAKE:
            self._on_wake(payload)
        else:
            self._sample_loss()
            interval = self.manifest.loss_interval
            if self._heap and interval is not None:
                self._schedule(self.now + interval, EventKind.LOSS_SAMPLE)

    def _all_done(self) -> bool:
        return all(w.phase is Phase.DONE for w in self.workers)

    def _finish(self) -> None:
        for w in self.workers:
            self._unblock(w)
        self.log.end_time = self.now
        self.log.final_iters = [w.iter for w in self.workers]
        self.log.final_params = np.mean(np.vstack([w.params for w in self.workers]), axis=0)
        self.log.final_loss = self._sample_loss()
        logger.info("Finished %s at t=%g, iterations %s, loss %.6g.", self.manifest.name, self.now, self.log.final_iters, self.log.final_loss)


def run_simulation(
    manifest: RunManifest,
    *,
    seed: Optional[int] = None,
    runtime_asserts: Optional[bool] = None,
    strict_reorder: Optional[bool] = None,
    suppressed_edges: Iterable[tuple[int, int]] = (),
) -> MetricsLog:
    """Builds a :class:`Simulation` and runs it to completion."""
    return Simulation(manifest, seed=seed, runtime_asserts=runtime_asserts, strict_reorder=strict_reorder, suppressed_edges=suppressed_edges).run()
