"""Rotating update queues and per-edge token queues."""
import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from hop.core.constants import QUEUE_TRACE_COLUMNS
from hop.core.errors import ConfigurationError, PreconditionError, ProtocolViolationError
from hop.core.utils import format_float


@dataclass(frozen=True)
class UpdateMsg:
    """The parameters ``payload`` sent by ``sender`` at iteration ``iter``."""

    sender: int
    iter: int
    payload: np.ndarray = field(repr=False)
    send_time: float = 0.0

    def __post_init__(self) -> None:
        if self.iter < 0:
            raise PreconditionError(f"Update iteration must be >= 0, got {self.iter}.")


class QueueTracer:
    """Collects one row per queue operation. The engine keeps ``now`` up to date."""

    def __init__(self) -> None:
        self.now = 0.0
        self.rows: list[tuple] = []

    def record(self, op: str, owner: int, peer: int, iteration: int, slot: int, count_after: int) -> None:
        self.rows.append((self.now, op, owner, peer, iteration, slot, count_after))

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(QUEUE_TRACE_COLUMNS)
        for time, op, owner, peer, iteration, slot, count_after in self.rows:
            writer.writerow([format_float(time), op, owner, peer, iteration, slot, count_after])
        return out.getvalue()


@dataclass(frozen=True)
class Ready:
    messages: list[UpdateMsg]


PENDING = None


class UpdateQueueSet:
    """
    The receive side of a worker: ``n_slots`` FIFO sequences, a message tagged ``k`` living in slot
    ``k mod n_slots``.
    """

    def __init__(
        self,
        owner: int,
        in_degree: int,
        max_ig: Optional[int] = None,
        n_slots: Optional[int] = None,
        capacity: Optional[int] = None,
        tracer: Optional[QueueTracer] = None,
    ) -> None:
        """
        :param int owner: The worker holding the queues.
        :param int in_degree: ``|N_in(owner)|``, self included.
        :param max_ig: Token gap. When given, the queue has ``max_ig + 1`` slots and, unless ``capacity`` is
            given, holds at most ``(1 + max_ig) * in_degree`` messages.
        :param n_slots: Slot count used when no token gap is configured.
        :param capacity: Total number of stored messages allowed; ``None`` disables the check.
        :param tracer: Optional collector of queue operations.
        """
        if max_ig is not None:
            if max_ig < 1:
                raise ConfigurationError(f"max_ig must be a positive integer, got {max_ig}.")
            n_slots = max_ig + 1
            if capacity is None:
                capacity = (1 + max_ig) * in_degree
        if n_slots is None or n_slots < 1:
            raise ConfigurationError("An update queue needs at least one slot.")
        self.owner = owner
        self.in_degree = in_degree
        self.max_ig = max_ig
        self.n_slots = n_slots
        self.capacity = capacity
        self._slots: list[list[UpdateMsg]] = [[] for _ in range(n_slots)]
        self._size = 0
        self._tracer = tracer

    def slot_of(self, iteration: int) -> int:
        return iteration % self.n_slots

    def __len__(self) -> int:
        return self._size

    def size(self, iteration: Optional[int] = None, sender: Optional[int] = None) -> int:
        return sum(
            1
            for slot in self._slots
            for msg in slot
            if (iteration is None or msg.iter == iteration) and (sender is None or msg.sender == sender)
        )

    def senders_at(self, iteration: int) -> set[int]:
        return {msg.sender for msg in self._slots[self.slot_of(iteration)] if msg.iter == iteration}

    def slot_contents(self, slot: int) -> list[UpdateMsg]:
        return list(self._slots[slot])

    def _trace(self, op: str, peer: int, iteration: int) -> None:
        if self._tracer is not None:
            self._tracer.record(op, self.owner, peer, iteration, self.slot_of(iteration), self._size)

    def _remove(self, slot: list[UpdateMsg], doomed: list[UpdateMsg], op: str) -> None:
        if not doomed:
            return
        ids = {id(msg) for msg in doomed}
        slot[:] = [msg for msg in slot if id(msg) not in ids]
        self._size -= len(doomed)
        for msg in doomed:
            self._trace(op, msg.sender, msg.iter)

    def enqueue(self, msg: UpdateMsg) -> None:
        if self.capacity is not None and self._size + 1 > self.capacity:
            raise ProtocolViolationError(
                f"Update queue of worker {self.owner} exceeds its capacity of {self.capacity} messages "
                f"(incoming update {msg.iter} from worker {msg.sender})."
            )
        self._slots[self.slot_of(msg.iter)].append(msg)
        self._size += 1
        self._trace("enqueue", msg.sender, msg.iter)

    def poll(self, iteration: int, required: int) -> Optional[Ready]:
        """
        Non-blocking dequeue of ``required`` messages tagged ``iteration``.

        Stale messages sharing the slot are discarded. Returns :class:`Ready` with the first ``required`` matching
        messages in arrival order, or ``PENDING`` with no matching message removed.
        """
        if required < 1:
            raise PreconditionError(f"required must be positive, got {required}.")
        if required > self.in_degree:
            raise ConfigurationError(f"Worker {self.owner} cannot wait for {required} updates with an in-degree of {self.in_degree}.")
        slot = self._slots[self.slot_of(iteration)]
        self._remove(slot, [msg for msg in slot if msg.iter < iteration], "discard")
        matching = [msg for msg in slot if msg.iter == iteration]
        if len(matching) < required:
            return PENDING
        taken = matching[:required]
        self._remove(slot, taken, "dequeue")
        return Ready(taken)

    def drain_extras(self, iteration: int) -> list[UpdateMsg]:
        slot = self._slots[self.slot_of(iteration)]
        self._remove(slot, [msg for msg in slot if msg.iter < iteration], "discard")
        extras = [msg for msg in slot if msg.iter == iteration]
        self._remove(slot, extras, "dequeue")
        return extras

    def newest_per_sender(self, min_iter: int, senders: Optional[Iterable[int]] = None) -> tuple[dict[int, UpdateMsg], set[int]]:
        """
        Keeps only the newest message of every sender and drops everything older than ``min_iter``.

        :param int min_iter: Oldest acceptable iteration.
        :param senders: Senders the caller waits for; defaults to the senders present in the queue.
        :return: The newest acceptable message per sender, and the senders without any acceptable message.
        """
        newest: dict[int, UpdateMsg] = {}
        for slot in self._slots:
            for msg in slot:
                current = newest.get(msg.sender)
                if current is None or msg.iter > current.iter:
                    newest[msg.sender] = msg
        for slot in self._slots:
            doomed = [msg for msg in slot if msg.iter < min_iter or msg is not newest[msg.sender]]
            self._remove(slot, doomed, "discard")
        kept = {sender: msg for sender, msg in newest.items() if msg.iter >= min_iter}
        wanted = set(senders) if senders is not None else set(newest)
        return {sender: msg for sender, msg in kept.items() if sender in wanted}, wanted - set(kept)

    def take(self, messages: Iterable[UpdateMsg]) -> None:
        by_slot: dict[int, list[UpdateMsg]] = {}
        for msg in messages:
            by_slot.setdefault(self.slot_of(msg.iter), []).append(msg)
        for index, doomed in by_slot.items():
            slot = self._slots[index]
            present = {id(msg) for msg in slot}
            missing = [msg for msg in doomed if id(msg) not in present]
            if missing:
                raise ProtocolViolationError(f"Worker {self.owner} consumed updates that are not in its queue: {missing}.")
            self._remove(slot, doomed, "dequeue")

    def clear_stale(self, min_iter: int) -> int:
        removed = 0
        for slot in self._slots:
            doomed = [msg for msg in slot if msg.iter < min_iter]
            removed += len(doomed)
            self._remove(slot, doomed, "discard")
        return removed


class TokenQueue:
    """
    Credits held by ``holder`` for its in-coming neighbor ``beneficiary``. The beneficiary consumes one token per
    iteration, so it can run at most ``max_ig`` iterations ahead of the holder.
    """

    def __init__(self, holder: int, beneficiary: int, capacity: Optional[int] = None, tracer: Optional[QueueTracer] = None) -> None:
        self.holder = holder
        self.beneficiary = beneficiary
        self.capacity = capacity
        self._count = 0
        self._initialized = False
        self._tracer = tracer

    @property
    def count(self) -> int:
        return self._count

    @property
    def initialized(self) -> bool:
        return self._initialized

    def _trace(self, op: str, k: int) -> None:
        if self._tracer is not None:
            self._tracer.record(op, self.holder, self.beneficiary, k, -1, self._count)

    def init(self, max_ig: int) -> None:
        if max_ig < 1:
            raise ConfigurationError(f"max_ig must be a positive integer, got {max_ig}.")
        if self._initialized:
            raise ProtocolViolationError(f"Token queue {self.holder}->{self.beneficiary} initialized twice.")
        self._count = max_ig
        self._initialized = True
        self._trace("token_init", max_ig)

    def insert(self, k: int = 1) -> None:
        if k < 1:
            raise PreconditionError(f"Token insertions must be positive, got {k}.")
        if self.capacity is not None and self._count + k > self.capacity:
            raise ProtocolViolationError(
                f"Token queue {self.holder}->{self.beneficiary} would hold {self._count + k} tokens, above its capacity of {self.capacity}."
            )
        self._count += k
        self._trace("token_insert", k)

    def try_remove(self, k: int = 1) -> bool:
        if k < 1:
            raise PreconditionError(f"Token removals must be positive, got {k}.")
        if self._count < k:
            return False
        self._count -= k
        self._trace("token_remove", k)
        return True

    def __repr__(self) -> str:
        return f"TokenQueue({self.holder}->{self.beneficiary}, count={self._count})"
