"""Core value types: patients, clinic stations, and migration groups."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence


@dataclass(frozen=True)
class TaskSpec:
    """One checkup a patient must undergo: a task kind and its duration in ticks."""

    kind: str
    duration: int

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ValueError(f"task {self.kind!r}: duration must be positive, got {self.duration}")


@dataclass(frozen=True)
class CompletedTask:
    kind: str
    start: int
    end: int


@dataclass
class PatientRecord:
    """A patient moving through the clinic; the unit of migration.

    ``tasks`` is the full itinerary and never changes after scenario load, so
    the due time (arrival plus total processing) is invariant under migration.
    Progress is tracked in ``completed_tasks``; the next pending task is the
    first itinerary entry without a completion record.

    ``queue_arrival`` is the tick the patient joined the queue it currently
    waits in.  It is reset on every queue entry (initial arrival, re-entry
    after a task, migration landing), so a moved patient carries no seniority
    into its new queue.  ``hospital_arrival`` never changes.
    """

    id: str
    weight: Fraction
    hospital_arrival: int
    tasks: tuple[TaskSpec, ...]
    queue_arrival: int = 0
    completed_tasks: list[CompletedTask] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.weight <= 0:
            raise ValueError(f"patient {self.id!r}: weight must be positive, got {self.weight}")
        if self.hospital_arrival < 0:
            raise ValueError(f"patient {self.id!r}: negative hospital_arrival")
        if self.queue_arrival < self.hospital_arrival:
            self.queue_arrival = self.hospital_arrival

    @property
    def next_task(self) -> Optional[TaskSpec]:
        done = len(self.completed_tasks)
        return self.tasks[done] if done < len(self.tasks) else None

    @property
    def all_done(self) -> bool:
        return len(self.completed_tasks) >= len(self.tasks)

    def record_completion(self, kind: str, start: int, end: int) -> None:
        """Append a finished task, enforcing chronological, non-overlapping intervals."""
        expected = self.next_task
        if expected is None:
            raise ValueError(f"patient {self.id!r}: no pending task to complete")
        if kind != expected.kind:
            raise ValueError(f"patient {self.id!r}: completed {kind!r}, expected {expected.kind!r}")
        if end - start != expected.duration:
            raise ValueError(f"patient {self.id!r}: interval {start}..{end} != duration {expected.duration}")
        if self.completed_tasks and start < self.completed_tasks[-1].end:
            raise ValueError(f"patient {self.id!r}: overlapping completion at {start}")
        self.completed_tasks.append(CompletedTask(kind, start, end))


@dataclass
class ResourceState:
    """A clinic station's local view: its queue, service slot, and counters.

    ``capabilities`` is the set of task kinds the station serves; ``None``
    means it serves every kind.  Only the engine's event loop mutates this
    state, and only the owning agent's decision logic ever reads it.
    """

    id: str
    ring_index: int
    fixed_capacity: int
    capabilities: Optional[frozenset[str]] = None
    waiting_queue: list[PatientRecord] = field(default_factory=list)
    in_service: Optional[tuple[PatientRecord, int]] = None
    busy_ticks: int = 0
    service_completions: int = 0
    first_activity: Optional[int] = None

    def __post_init__(self) -> None:
        if self.fixed_capacity <= 0:
            raise ValueError(f"resource {self.id!r}: fixed_capacity must be positive")

    @property
    def occupancy(self) -> int:
        """Current occupancy: waiting patients plus the in-service slot."""
        return len(self.waiting_queue) + (1 if self.in_service is not None else 0)

    def can_serve(self, kind: str) -> bool:
        return self.capabilities is None or kind in self.capabilities

    def note_activity(self, tick: int) -> None:
        if self.first_activity is None:
            self.first_activity = tick


@dataclass(frozen=True)
class MigrationGroup:
    """The set of patients selected for a single transfer between stations."""

    source_id: str
    destination_id: str
    patients: tuple[PatientRecord, ...]
    formed_at: int

    def __post_init__(self) -> None:
        if not self.patients:
            raise ValueError("migration group must contain at least one patient")


Ordering = Callable[[Sequence[PatientRecord]], list[PatientRecord]]


def due_time(patient: PatientRecord) -> int:
    """Arrival plus total processing time over the whole itinerary."""
    return patient.hospital_arrival + sum(t.duration for t in patient.tasks)


def remaining_processing(patient: PatientRecord) -> int:
    """Total duration of the patient's not-yet-completed tasks."""
    done = len(patient.completed_tasks)
    return sum(t.duration for t in patient.tasks[done:])


def exceeded_patients(
    resource: ResourceState, ordering: Optional[Ordering] = None
) -> list[PatientRecord]:
    """Waiting patients beyond the station's fixed capacity.

    Returns the last ``occupancy - fixed_capacity`` patients of the waiting
    queue under ``ordering`` (insertion order when omitted), so the patients
    the active policy ranks highest stay put.  The in-service patient is
    never eligible.  Empty whenever occupancy does not exceed capacity.
    """
    excess = resource.occupancy - resource.fixed_capacity
    if excess <= 0:
        return []
    ordered = ordering(resource.waiting_queue) if ordering else list(resource.waiting_queue)
    return ordered[len(ordered) - excess:]
