"""Overload detection, neighbour negotiation, and group transfer.

Every decision here is a function of one station's own state plus a
delivered message; nothing in this module can reach another station's
runtime state (it never imports the engine).  Static configuration — the
ring of station ids and their capability sets — is shared knowledge, like
a printed directory, and carries no runtime information.

Protocol per overloaded station (one episode active at a time):

1. Send a request carrying the exceeded patient count to the next station
   on the ring.
2. The candidate accepts when it has strict headroom (occupancy below its
   fixed capacity, counting slots it has already promised), granting
   ``min(headroom, exceeded)`` slots; otherwise it rejects.
3. On accept, the source groups eligible exceeded patients by descending
   weight, then queue arrival, then id — keeping only those whose next
   task the destination serves — and transfers them in one move message.
   DOPSG moves up to the granted count per cycle; DOPS moves exactly one.
4. While still overloaded after a successful transfer, the source repeats
   with the same destination; on rejection it tries the next ring
   neighbour, and after all neighbours reject the episode parks until the
   station next sees a local arrival or service completion.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

from .domain import (
    MigrationGroup,
    PatientRecord,
    ResourceState,
    exceeded_patients,
)
from .policies import Policy, order_queue


# --- message payloads ----------------------------------------------------------


@dataclass(frozen=True)
class MigrationRequest:
    exceeded_count: int


@dataclass(frozen=True)
class Accept:
    granted_slots: int


@dataclass(frozen=True)
class Reject:
    pass


@dataclass(frozen=True)
class GroupMove:
    group: MigrationGroup


PAYLOAD_KINDS = {MigrationRequest: "request", Accept: "accept", Reject: "reject", GroupMove: "move"}


def payload_kind(payload) -> str:
    return PAYLOAD_KINDS[type(payload)]


# --- episode state machine ------------------------------------------------------


class EpisodeState(enum.Enum):
    IDLE = "idle"
    AWAITING_REPLY = "awaiting_reply"
    MOVING = "moving"
    EXHAUSTED = "exhausted"


_LEGAL_TRANSITIONS = {
    EpisodeState.IDLE: {EpisodeState.AWAITING_REPLY},
    EpisodeState.AWAITING_REPLY: {
        EpisodeState.AWAITING_REPLY,  # next attempt after a rejection
        EpisodeState.MOVING,
        EpisodeState.IDLE,
        EpisodeState.EXHAUSTED,
    },
    # After a transfer the episode either ends or keeps negotiating with the
    # same destination for the remaining exceeded patients.
    EpisodeState.MOVING: {EpisodeState.IDLE, EpisodeState.AWAITING_REPLY, EpisodeState.EXHAUSTED},
    EpisodeState.EXHAUSTED: {EpisodeState.IDLE},
}


@dataclass
class MigrationEpisode:
    source_id: str
    attempt_index: int = 0
    granted: Optional[tuple[str, int]] = None
    state: EpisodeState = EpisodeState.IDLE

    def transition(self, new_state: EpisodeState) -> None:
        if new_state not in _LEGAL_TRANSITIONS[self.state]:
            raise AssertionError(f"illegal episode transition {self.state} -> {new_state}")
        self.state = new_state


# --- pure decision operations ----------------------------------------------------


class NeighborsExhausted(Exception):
    """Every other station on the ring has been tried this episode."""


def next_neighbor(ring_index: int, m: int, attempt: int) -> int:
    """Ring position to try at the given attempt; never the source itself."""
    if m < 2:
        raise NeighborsExhausted("no other station on the ring")
    if attempt < 0 or attempt >= m - 1:
        raise NeighborsExhausted(f"attempt {attempt} exceeds the {m - 1} ring neighbours")
    return (ring_index + attempt + 1) % m


def detect_overload(resource: ResourceState) -> Optional[MigrationRequest]:
    """Request to shed the strict excess, or None when within capacity."""
    excess = resource.occupancy - resource.fixed_capacity
    if excess > 0:
        return MigrationRequest(exceeded_count=excess)
    return None


def evaluate_request(
    acceptor: ResourceState, request: MigrationRequest, held_slots: int = 0
) -> Accept | Reject:
    """Accept with ``min(headroom, exceeded)`` slots, else reject.

    Acceptance requires strict headroom: occupancy below fixed capacity.
    ``held_slots`` counts slots this station has already promised to other
    sources (or patients delivered but not yet seated); they are treated as
    occupied so overlapping episodes cannot over-fill the station.  The
    decision reads nothing but the acceptor's own state and the request.
    """
    effective = acceptor.occupancy + held_slots
    headroom = acceptor.fixed_capacity - effective
    if headroom > 0 and request.exceeded_count > 0:
        return Accept(granted_slots=min(headroom, request.exceeded_count))
    return Reject()


def form_group(
    exceeded: list[PatientRecord],
    granted_slots: int,
    destination_capabilities: Optional[frozenset[str]],
) -> list[PatientRecord]:
    """Pick the patients to move: capability-filtered, priority-first.

    Keeps exceeded patients whose next task the destination serves, sorts by
    descending weight then ascending queue arrival then id, and takes at most
    ``granted_slots``.  May be empty when nothing is compatible.
    """
    if granted_slots < 1:
        raise ValueError("granted_slots must be >= 1")
    compatible = [
        p
        for p in exceeded
        if p.next_task is not None
        and (destination_capabilities is None or p.next_task.kind in destination_capabilities)
    ]
    compatible.sort(key=lambda p: (-p.weight, p.queue_arrival, p.id))
    return compatible[:granted_slots]


def group_size_limit(policy: Policy, granted_slots: int) -> int:
    """DOPSG fills the grant; DOPS degenerates to one patient per cycle."""
    return 1 if policy is Policy.DOPS else granted_slots


class MemberMissing(Exception):
    """A group member was not at the source; the move is aborted untouched."""


def apply_move(
    source: ResourceState, destination: ResourceState, group: MigrationGroup, now: int
) -> None:
    """Atomically transfer the group between two station queues.

    Members leave the source's waiting queue and join the destination's with
    ``queue_arrival = now``.  If any member is absent from the source the
    move aborts with MemberMissing and neither queue changes.  The engine's
    asynchronous path splits this into extraction at formation time and
    admission at delivery time; this combined form is the zero-latency
    equivalent.
    """
    for p in group.patients:
        if p not in source.waiting_queue:
            raise MemberMissing(f"patient {p.id!r} is not waiting at {source.id!r}")
    for p in group.patients:
        source.waiting_queue.remove(p)
        p.queue_arrival = now
        destination.waiting_queue.append(p)
        destination.note_activity(now)
    if destination.occupancy > destination.fixed_capacity:
        raise AssertionError(
            f"move into {destination.id!r} exceeded its capacity "
            f"({destination.occupancy} > {destination.fixed_capacity})"
        )


# --- static ring directory --------------------------------------------------------


@dataclass(frozen=True)
class RingDirectory:
    """Static station listing in ring order: ids and capability sets only."""

    ids: tuple[str, ...]
    capabilities: tuple[Optional[frozenset[str]], ...]

    @property
    def m(self) -> int:
        return len(self.ids)

    def id_at(self, position: int) -> str:
        return self.ids[position]

    def capabilities_of(self, station_id: str) -> Optional[frozenset[str]]:
        return self.capabilities[self.ids.index(station_id)]


# --- per-station coordinator -------------------------------------------------------


@dataclass(frozen=True)
class _Reservation:
    slots: int
    due_tick: int  # tick a prompt move would land; stale strictly after this


@dataclass
class CoordinatorResult:
    """State changes and messages produced by one coordinator step."""

    outbound: list[tuple[str, object]] = field(default_factory=list)
    admitted: list[PatientRecord] = field(default_factory=list)
    parked: list[PatientRecord] = field(default_factory=list)
    extracted: list[PatientRecord] = field(default_factory=list)


class MigrationCoordinator:
    """The scheduling agent attached to one station.

    Driven entirely by the engine's event loop; receives only the owning
    station's state, the current tick, and delivered message payloads.
    Holds the episode state machine, slot reservations made as an acceptor,
    an admission buffer for landed patients awaiting queue space, and
    anti-thrash stamps for recently landed patients.
    """

    def __init__(
        self,
        resource_id: str,
        directory: RingDirectory,
        policy: Policy,
        message_latency: int,
    ) -> None:
        self.resource_id = resource_id
        self.directory = directory
        self.policy = policy
        self.message_latency = message_latency
        self.episode = MigrationEpisode(source_id=resource_id)
        self.reservations: dict[str, _Reservation] = {}
        self.door: list[PatientRecord] = []
        self.outbox: list[PatientRecord] = []
        self._landing_stamp: dict[str, int] = {}
        self._rearm_pending = False

    # -- engine notifications --

    def note_local_event(self, kind: str) -> None:
        # Exhausted episodes re-arm only on the station's own arrivals and
        # service completions, never by polling.
        if kind in ("arrival", "service_complete"):
            self._rearm_pending = True

    # -- helpers --

    def _order(self, queue):
        return order_queue(self.policy, queue, 0)

    def held_slots(self) -> int:
        return sum(r.slots for r in self.reservations.values()) + len(self.door)

    def _drop_stale_reservations(self, now: int) -> None:
        self.reservations = {
            source: r for source, r in self.reservations.items() if now <= r.due_tick
        }

    def _enqueue(self, state: ResourceState, patient: PatientRecord, now: int) -> None:
        patient.queue_arrival = now
        state.waiting_queue.append(patient)
        self._landing_stamp[patient.id] = state.service_completions

    def _eligible_exceeded(self, state: ResourceState) -> list[PatientRecord]:
        result = []
        for p in exceeded_patients(state, self._order):
            stamp = self._landing_stamp.get(p.id)
            if stamp is not None and state.service_completions <= stamp:
                continue  # cooldown: landed here and no service finished since
            if stamp is not None:
                del self._landing_stamp[p.id]
            result.append(p)
        return result

    def _send_request(self, state: ResourceState, result: CoordinatorResult) -> bool:
        request = detect_overload(state)
        if request is None:
            return False
        position = next_neighbor(state.ring_index, self.directory.m, self.episode.attempt_index)
        result.outbound.append((self.directory.id_at(position), request))
        return True

    def _advance_attempt(self, state: ResourceState, result: CoordinatorResult) -> None:
        self.episode.attempt_index += 1
        if self.episode.attempt_index >= self.directory.m - 1:
            self.episode.transition(EpisodeState.EXHAUSTED)
            self.episode.granted = None
            return
        if self._send_request(state, result):
            self.episode.transition(EpisodeState.AWAITING_REPLY)
        else:
            self.episode.transition(EpisodeState.IDLE)
            self.episode.attempt_index = 0

    # -- message handling (as acceptor and as source) --

    def handle_message(
        self, state: ResourceState, sender_id: str, payload, now: int
    ) -> CoordinatorResult:
        result = CoordinatorResult()
        if isinstance(payload, MigrationRequest):
            self._on_request(state, sender_id, payload, now, result)
        elif isinstance(payload, Accept):
            self._on_accept(state, sender_id, payload, now, result)
        elif isinstance(payload, Reject):
            self._on_reject(state, now, result)
        elif isinstance(payload, GroupMove):
            self._on_group_move(state, payload.group, now, result)
        else:  # pragma: no cover - protocol bug guard
            raise AssertionError(f"unknown payload {payload!r}")
        return result

    def _on_request(
        self,
        state: ResourceState,
        sender_id: str,
        request: MigrationRequest,
        now: int,
        result: CoordinatorResult,
    ) -> None:
        self._drop_stale_reservations(now)
        residue = self.reservations.get(sender_id)
        if residue is not None and request.exceeded_count > 0:
            # Follow-up against seats this station already promised: honour
            # them even if arrivals ate the physical headroom meanwhile, so a
            # one-per-cycle chain commits exactly what a grouped move would.
            verdict: Accept | Reject = Accept(min(residue.slots, request.exceeded_count))
        else:
            verdict = evaluate_request(state, request, self.held_slots())
        if isinstance(verdict, Accept):
            self.reservations[sender_id] = _Reservation(
                verdict.granted_slots, now + 2 * self.message_latency
            )
        result.outbound.append((sender_id, verdict))

    def _ship(self, sender_id: str, members: list[PatientRecord], now: int,
              result: CoordinatorResult) -> None:
        group = MigrationGroup(
            source_id=self.resource_id,
            destination_id=sender_id,
            patients=tuple(members),
            formed_at=now,
        )
        result.outbound.append((sender_id, GroupMove(group)))

    def _continue_or_finish(
        self, state: ResourceState, sender_id: str, now: int, result: CoordinatorResult
    ) -> None:
        if self.outbox:
            # Committed patients still to ship, one handshake each.
            self.episode.transition(EpisodeState.AWAITING_REPLY)
            result.outbound.append((sender_id, MigrationRequest(len(self.outbox))))
        elif state.occupancy > state.fixed_capacity:
            # New excess built up; keep negotiating with the same, willing
            # acceptor rather than restarting the ring walk.
            self.episode.transition(EpisodeState.AWAITING_REPLY)
            sent = self._send_request(state, result)
            assert sent, "still overloaded but no request produced"
        else:
            self.episode.transition(EpisodeState.IDLE)
            self.episode.attempt_index = 0

    def _on_accept(
        self,
        state: ResourceState,
        sender_id: str,
        accept: Accept,
        now: int,
        result: CoordinatorResult,
    ) -> None:
        assert self.episode.state is EpisodeState.AWAITING_REPLY, "accept outside an episode"
        self.episode.granted = (sender_id, accept.granted_slots)
        self.episode.transition(EpisodeState.MOVING)
        if self.outbox:
            # Mid-chain accept for an already committed set (one per cycle).
            self._ship(sender_id, [self.outbox.pop(0)], now, result)
            self._continue_or_finish(state, sender_id, now, result)
            return
        if state.occupancy <= state.fixed_capacity:
            # Overload drained during the round trip; the acceptor's unused
            # reservation goes stale on its own.
            self.episode.transition(EpisodeState.IDLE)
            self.episode.attempt_index = 0
            return
        # The grant fixes the transfer set: both modes commit the same
        # patients now.  Grouped mode ships them in one move; one-per-cycle
        # mode queues them in the outbox and ships one per handshake.
        members = form_group(
            self._eligible_exceeded(state),
            accept.granted_slots,
            self.directory.capabilities_of(sender_id),
        )
        if not members:
            # Nothing this destination can take (capability or cooldown):
            # treat like a rejection and try the next neighbour.
            self._advance_attempt(state, result)
            return
        for p in members:
            state.waiting_queue.remove(p)
        result.extracted.extend(members)
        batch = group_size_limit(self.policy, len(members))
        self.outbox = members
        self._ship(sender_id, [self.outbox.pop(0) for _ in range(batch)], now, result)
        self._continue_or_finish(state, sender_id, now, result)

    def _on_reject(self, state: ResourceState, now: int, result: CoordinatorResult) -> None:
        assert self.episode.state is EpisodeState.AWAITING_REPLY, "reject outside an episode"
        assert not self.outbox, "committed patients rejected mid-chain"
        if state.occupancy <= state.fixed_capacity:
            self.episode.transition(EpisodeState.IDLE)
            self.episode.attempt_index = 0
            return
        self._advance_attempt(state, result)

    def _on_group_move(
        self, state: ResourceState, group: MigrationGroup, now: int, result: CoordinatorResult
    ) -> None:
        reservation = self.reservations.pop(group.source_id, None)
        if reservation is not None and reservation.slots > len(group.patients):
            # Unconsumed part of the grant stays promised until its expiry;
            # the source's follow-up request (if any) lands within it.
            self.reservations[group.source_id] = _Reservation(
                reservation.slots - len(group.patients), reservation.due_tick
            )
        for p in group.patients:
            if state.occupancy < state.fixed_capacity:
                self._enqueue(state, p, now)
                result.admitted.append(p)
            else:
                # Granted headroom was consumed by arrivals while the move was
                # in transit; hold the patient at the door until space frees.
                self.door.append(p)
                result.parked.append(p)

    # -- tick boundary --

    def boundary(self, state: ResourceState, now: int) -> CoordinatorResult:
        """Seat door patients, re-arm parked episodes, and start new ones."""
        result = CoordinatorResult()
        while self.door and state.occupancy < state.fixed_capacity:
            patient = self.door.pop(0)
            self._enqueue(state, patient, now)
            result.admitted.append(patient)
        if self.episode.state is EpisodeState.EXHAUSTED and self._rearm_pending:
            self.episode.transition(EpisodeState.IDLE)
            self.episode.attempt_index = 0
        self._rearm_pending = False
        if self.episode.state is EpisodeState.IDLE and self.directory.m >= 2:
            self.episode.attempt_index = 0
            if self._send_request(state, result):
                self.episode.transition(EpisodeState.AWAITING_REPLY)
        return result
