"""Deterministic discrete-event core: clock, event queue, and agent mailboxes.

One run is strictly single-threaded and a pure function of (scenario,
policy): events are processed in (tick, sequence) order, with the sequence
number assigned at scheduling time, so repeated runs produce byte-identical
traces.  All inter-station communication goes through timestamped messages
delivered after the scenario's latency; station decision logic only ever
receives the owning station's state plus those delivered messages.

Within one tick, every due event is processed first (arrivals enqueue,
services finish, messages dispatch to their station's coordinator); then a
boundary phase runs over the stations in ring order, seating buffered
patients, starting service on the policy-preferred waiting patient, and
letting overloaded stations open migration episodes.  Batching service
starts at the boundary means simultaneous arrivals compete under the policy
instead of racing on event order.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .domain import PatientRecord, ResourceState
from .migration import (
    GroupMove,
    MigrationCoordinator,
    RingDirectory,
    payload_kind,
)
from .policies import Policy, select_next
from .scenario_io import ScenarioSpec, validate_scenario


class StallError(RuntimeError):
    """The event queue emptied with unfinished patients: a protocol bug."""

    def __init__(self, message: str, snapshot: str) -> None:
        super().__init__(f"{message}\n{snapshot}")
        self.snapshot = snapshot


class NoCompatibleResource(RuntimeError):
    """No station serves the task a patient needs next."""


class SimulationInvariantError(RuntimeError):
    """An engine self-check failed; the trace cannot be trusted."""


# --- events and messages ---------------------------------------------------------


@dataclass(frozen=True)
class ProtocolMessage:
    from_id: str
    to_id: str
    sent_at: int
    payload: object


@dataclass(frozen=True)
class PatientArrival:
    patient_id: str
    resource_id: str


@dataclass(frozen=True)
class ServiceComplete:
    resource_id: str


@dataclass(frozen=True)
class MessageDelivery:
    message: ProtocolMessage


SimEvent = PatientArrival | ServiceComplete | MessageDelivery


# --- trace -----------------------------------------------------------------------


@dataclass(frozen=True)
class TraceRecord:
    at: int
    kind: str
    fields: tuple[tuple[str, str], ...]

    def format(self, seq: int) -> str:
        detail = " ".join(f"{key}={value}" for key, value in self.fields)
        return f"{self.at} {seq} {self.kind} {detail}".rstrip()


@dataclass(frozen=True)
class PatientOutcome:
    completion: int
    due: int
    tardiness: int
    weight: Fraction


@dataclass(frozen=True)
class ResourceOutcome:
    busy_ticks: int
    first_activity: Optional[int]
    idle_ticks: int


@dataclass(frozen=True)
class SimulationTrace:
    spec: ScenarioSpec
    policy: Policy
    records: tuple[TraceRecord, ...]
    patients: dict[str, PatientOutcome]
    resources: dict[str, ResourceOutcome]
    message_counts: dict[str, int]

    def dump_lines(self) -> list[str]:
        return [record.format(i) for i, record in enumerate(self.records)]

    def dump(self) -> str:
        return "\n".join(self.dump_lines()) + "\n"


# --- initial assignment -----------------------------------------------------------


def initial_assignment(spec: ScenarioSpec) -> list[tuple[str, str, int]]:
    """Admission routing: (patient id, resource id, arrival tick) triples.

    Patient k goes to the k-th (mod count) station, in ring order, among
    those able to serve its first task.  Routing is deliberately load-blind:
    the admission desk sees capabilities, never queue lengths.
    """
    ordered = sorted(spec.resources, key=lambda r: r.ring_index)
    assignments = []
    for k, patient in enumerate(spec.patients):
        first = patient.tasks[0] if patient.tasks else None
        if first is None:
            compatible = list(ordered)
        else:
            compatible = [
                r for r in ordered if r.capabilities is None or first.kind in r.capabilities
            ]
        if not compatible:
            raise NoCompatibleResource(
                f"patient {patient.id!r}: no resource serves {first.kind!r}"
            )
        chosen = compatible[k % len(compatible)]
        assignments.append((patient.id, chosen.id, patient.hospital_arrival))
    return assignments


# --- simulation -------------------------------------------------------------------


class Simulation:
    """A single deterministic run; use :func:`run` unless stepping manually."""

    def __init__(self, spec: ScenarioSpec, policy: Policy, *, check_invariants: bool = True):
        validate_scenario(spec)
        self.spec = spec
        self.policy = policy
        self.latency = spec.message_latency
        self.check = check_invariants
        self.now = 0
        self._seq = itertools.count()
        self._heap: list[tuple[int, int, SimEvent]] = []
        self._last_at = 0
        self._mhca_counter = 0
        self.records: list[TraceRecord] = []
        self.message_counts = {"request": 0, "accept": 0, "reject": 0, "move": 0}
        self.departed: dict[str, int] = {}

        self.patients = {
            p.id: PatientRecord(
                id=p.id,
                weight=p.weight,
                hospital_arrival=p.hospital_arrival,
                tasks=p.tasks,
                queue_arrival=p.hospital_arrival,
            )
            for p in spec.patients
        }
        ordered = sorted(spec.resources, key=lambda r: r.ring_index)
        self.resources = {
            r.id: ResourceState(
                id=r.id,
                ring_index=r.ring_index,
                fixed_capacity=r.fixed_capacity,
                capabilities=None if r.capabilities is None else frozenset(r.capabilities),
            )
            for r in ordered
        }
        self._ring = [self.resources[r.id] for r in ordered]
        directory = RingDirectory(
            ids=tuple(r.id for r in self._ring),
            capabilities=tuple(r.capabilities for r in self._ring),
        )
        self.coordinators: dict[str, MigrationCoordinator] = {}
        if policy.migrates:
            self.coordinators = {
                state.id: MigrationCoordinator(state.id, directory, policy, self.latency)
                for state in self._ring
            }

        self._location: dict[str, tuple] = {}
        for pid, rid, at in initial_assignment(spec):
            self._location[pid] = ("enroute", rid)
            self._schedule(at, PatientArrival(pid, rid))

    # -- plumbing --

    def _schedule(self, at: int, event: SimEvent) -> None:
        heapq.heappush(self._heap, (at, next(self._seq), event))

    def _record(self, at: int, kind: str, **fields) -> None:
        self.records.append(
            TraceRecord(at, kind, tuple((k, str(v)) for k, v in fields.items()))
        )

    # -- event dispatch --

    def step(self) -> None:
        """Process the (at, seq)-minimal event; close the tick when it is the last."""
        if not self._heap:
            raise SimulationInvariantError("step() with an empty event queue")
        at, _seq, event = heapq.heappop(self._heap)
        if at < self._last_at:
            raise SimulationInvariantError(f"clock moved backwards: {at} < {self._last_at}")
        self._last_at = at
        self.now = at
        if isinstance(event, PatientArrival):
            self._on_arrival(event, at)
        elif isinstance(event, ServiceComplete):
            self._on_service_complete(event, at)
        else:
            self._on_delivery(event.message, at)
        if self.check:
            self._check_conservation()
        if not self._heap or self._heap[0][0] > at:
            self._boundary(at)

    def _on_arrival(self, event: PatientArrival, at: int) -> None:
        patient = self.patients[event.patient_id]
        state = self.resources[event.resource_id]
        state.note_activity(at)
        self._record(at, "arrive", patient=patient.id, resource=state.id)
        coordinator = self.coordinators.get(state.id)
        if coordinator:
            coordinator.note_local_event("arrival")
        if patient.all_done:
            # Empty itinerary: nothing to do, complete at the arrival tick.
            self._depart(patient, at)
        else:
            patient.queue_arrival = at
            state.waiting_queue.append(patient)
            self._location[patient.id] = ("at", state.id)

    def _on_service_complete(self, event: ServiceComplete, at: int) -> None:
        state = self.resources[event.resource_id]
        if state.in_service is None:
            raise SimulationInvariantError(f"completion at idle resource {state.id!r}")
        patient, end = state.in_service
        if end != at:
            raise SimulationInvariantError(f"completion at {at}, expected {end}")
        task = patient.next_task
        state.in_service = None
        state.busy_ticks += task.duration
        state.service_completions += 1
        patient.record_completion(task.kind, at - task.duration, at)
        self._record(
            at,
            "complete",
            patient=patient.id,
            resource=state.id,
            task=task.kind,
            start=at - task.duration,
            end=at,
        )
        coordinator = self.coordinators.get(state.id)
        if coordinator:
            coordinator.note_local_event("service_complete")
        if patient.all_done:
            self._depart(patient, at)
        else:
            target = self._route(patient, state)
            self._location[patient.id] = ("enroute", target)
            self._schedule(at, PatientArrival(patient.id, target))

    def _route(self, patient: PatientRecord, current: ResourceState) -> str:
        """Between-task routing: stay when possible, else blind round-robin."""
        kind = patient.next_task.kind
        if current.can_serve(kind):
            return current.id
        capable = [r for r in self._ring if r.can_serve(kind)]
        if not capable:
            raise NoCompatibleResource(f"patient {patient.id!r}: no resource serves {kind!r}")
        chosen = capable[self._mhca_counter % len(capable)]
        self._mhca_counter += 1
        return chosen.id

    def _depart(self, patient: PatientRecord, at: int) -> None:
        self._location[patient.id] = ("done",)
        self.departed[patient.id] = at
        self._record(at, "depart", patient=patient.id, completion=at)

    def _on_delivery(self, message: ProtocolMessage, at: int) -> None:
        kind = payload_kind(message.payload)
        self.message_counts[kind] += 1
        detail: dict[str, object] = {"msg": kind, "src": message.from_id, "dst": message.to_id}
        payload = message.payload
        if kind == "request":
            detail["exceeded"] = payload.exceeded_count
        elif kind == "accept":
            detail["granted"] = payload.granted_slots
        elif kind == "move":
            detail["patients"] = "+".join(p.id for p in payload.group.patients)
        self._record(at, "deliver", **detail)
        coordinator = self.coordinators[message.to_id]
        state = self.resources[message.to_id]
        result = coordinator.handle_message(state, message.from_id, payload, at)
        self._apply_result(state, result, at)

    def _apply_result(self, state: ResourceState, result, at: int) -> None:
        for patient in result.extracted:
            self._record(at, "extract", patient=patient.id, resource=state.id)
        for patient in result.parked:
            self._location[patient.id] = ("at", state.id)
            state.note_activity(at)
            self._record(at, "land", patient=patient.id, resource=state.id)
        for patient in result.admitted:
            self._location[patient.id] = ("at", state.id)
            state.note_activity(at)
            self._record(at, "admit", patient=patient.id, resource=state.id)
        for target, payload in result.outbound:
            if isinstance(payload, GroupMove):
                for member in payload.group.patients:
                    self._location[member.id] = ("flight",)
            message = ProtocolMessage(from_id=state.id, to_id=target, sent_at=at, payload=payload)
            self._schedule(at + self.latency, MessageDelivery(message))

    # -- tick boundary --

    def _boundary(self, at: int) -> None:
        for state in self._ring:
            coordinator = self.coordinators.get(state.id)
            if coordinator:
                result = coordinator.boundary(state, at)
                self._apply_result(state, result, at)
            if state.in_service is None:
                nxt = select_next(self.policy, state, at)
                if nxt is not None:
                    task = nxt.next_task
                    end = at + task.duration
                    state.in_service = (nxt, end)
                    state.note_activity(at)
                    self._schedule(end, ServiceComplete(state.id))
                    self._record(
                        at, "start", patient=nxt.id, resource=state.id, task=task.kind, end=end
                    )
        if self.check:
            self._check_conservation()
            self._check_work_conservation()

    # -- self-checks --

    def _check_conservation(self) -> None:
        seen: dict[str, tuple] = {}
        for state in self._ring:
            ids = [p.id for p in state.waiting_queue]
            if state.in_service is not None:
                ids.append(state.in_service[0].id)
            coordinator = self.coordinators.get(state.id)
            if coordinator:
                ids.extend(p.id for p in coordinator.door)
                ids.extend(p.id for p in coordinator.outbox)
            for pid in ids:
                if pid in seen:
                    raise SimulationInvariantError(f"patient {pid!r} present twice")
                seen[pid] = ("at", state.id)
        if set(self._location) != {p.id for p in self.spec.patients}:
            raise SimulationInvariantError("location map out of sync with the scenario")
        for pid, location in self._location.items():
            if location[0] == "at":
                if seen.get(pid) != location:
                    raise SimulationInvariantError(f"patient {pid!r} missing from {location}")
            elif pid in seen:
                raise SimulationInvariantError(f"patient {pid!r} duplicated: {location}")

    def _check_work_conservation(self) -> None:
        for state in self._ring:
            if state.in_service is None:
                for p in state.waiting_queue:
                    if p.next_task is not None and state.can_serve(p.next_task.kind):
                        raise SimulationInvariantError(
                            f"resource {state.id!r} idle with {p.id!r} waiting"
                        )

    def _snapshot(self) -> str:
        lines = [f"tick {self.now}"]
        for state in self._ring:
            coordinator = self.coordinators.get(state.id)
            queue = ",".join(p.id for p in state.waiting_queue)
            serving = state.in_service[0].id if state.in_service else "-"
            door = ",".join(p.id for p in coordinator.door) if coordinator else ""
            outbox = ",".join(p.id for p in coordinator.outbox) if coordinator else ""
            episode = coordinator.episode.state.value if coordinator else "-"
            lines.append(
                f"  {state.id}: occupancy={state.occupancy}/{state.fixed_capacity} "
                f"serving={serving} queue=[{queue}] door=[{door}] outbox=[{outbox}] "
                f"episode={episode}"
            )
        pending = sorted(pid for pid in self.patients if pid not in self.departed)
        lines.append(f"  unfinished: {','.join(pending)}")
        return "\n".join(lines)

    # -- full run --

    def execute(self) -> SimulationTrace:
        while self._heap:
            self.step()
        if len(self.departed) != len(self.patients):
            raise StallError("event queue empty with unfinished patients", self._snapshot())
        outcomes = {}
        for p in self.spec.patients:
            completion = self.departed[p.id]
            due = p.hospital_arrival + sum(t.duration for t in p.tasks)
            outcomes[p.id] = PatientOutcome(
                completion=completion, due=due, tardiness=completion - due, weight=p.weight
            )
        cmax = max((o.completion for o in outcomes.values()), default=0)
        resource_outcomes = {}
        for state in self._ring:
            idle = 0
            if state.first_activity is not None:
                idle = cmax - state.first_activity - state.busy_ticks
            resource_outcomes[state.id] = ResourceOutcome(
                busy_ticks=state.busy_ticks,
                first_activity=state.first_activity,
                idle_ticks=idle,
            )
        return SimulationTrace(
            spec=self.spec,
            policy=self.policy,
            records=tuple(self.records),
            patients=outcomes,
            resources=resource_outcomes,
            message_counts=dict(self.message_counts),
        )


def run(spec: ScenarioSpec, policy: Policy, *, check_invariants: bool = True) -> SimulationTrace:
    """Simulate until every patient finished; a pure function of its inputs."""
    return Simulation(spec, policy, check_invariants=check_invariants).execute()
