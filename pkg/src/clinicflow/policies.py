"""Queue-ordering disciplines for station waiting queues."""

from __future__ import annotations

import enum
from fractions import Fraction
from typing import Optional, Sequence

from .domain import PatientRecord, ResourceState


class Policy(enum.Enum):
    """The four disciplines under comparison.

    FCFS and WSPT are migration-free baselines.  DOPS and DOPSG order their
    local queues exactly like WSPT and differ only in migration behaviour:
    DOPS transfers one patient per accepted request, DOPSG transfers a group
    of up to the granted slot count.
    """

    FCFS = "fcfs"
    WSPT = "wspt"
    DOPS = "dops"
    DOPSG = "dopsg"

    @classmethod
    def parse(cls, text: str) -> "Policy":
        try:
            return cls(text.strip().lower())
        except ValueError:
            valid = ", ".join(p.value for p in cls)
            raise ValueError(f"unknown policy {text!r} (expected one of: {valid})") from None

    @property
    def migrates(self) -> bool:
        return self in (Policy.DOPS, Policy.DOPSG)

    @property
    def uses_ratio_order(self) -> bool:
        return self in (Policy.WSPT, Policy.DOPS, Policy.DOPSG)


#: Canonical presentation order for reports and tables.
POLICY_ORDER = (Policy.FCFS, Policy.WSPT, Policy.DOPS, Policy.DOPSG)


def _fcfs_key(p: PatientRecord):
    return (p.queue_arrival, p.id)


def _ratio_key(p: PatientRecord):
    # Descending weight / next-task duration; Fraction keeps the comparison
    # exact (no floating division).  Patients with nothing left to do sort
    # first so they drain immediately.
    nxt = p.next_task
    if nxt is None:
        return (0, Fraction(0), p.queue_arrival, p.id)
    return (1, -Fraction(p.weight, nxt.duration), p.queue_arrival, p.id)


def order_queue(policy: Policy, queue: Sequence[PatientRecord], now: int) -> list[PatientRecord]:
    """Return the queue in the policy's service order without mutating the input.

    FCFS: ascending queue arrival, ties by id.  WSPT/DOPS/DOPSG: descending
    weight over next-task duration, ties by ascending queue arrival then id.
    The key includes the unique id, so the order is total and stable.
    """
    key = _ratio_key if policy.uses_ratio_order else _fcfs_key
    return sorted(queue, key=key)


def select_next(policy: Policy, resource: ResourceState, now: int) -> Optional[PatientRecord]:
    """Pop the policy-preferred waiting patient the station can actually serve.

    Requires an empty service slot.  Returns ``None`` when no compatible
    patient is waiting; the queue is left untouched in that case.
    """
    if resource.in_service is not None:
        raise ValueError(f"resource {resource.id!r}: service slot is occupied")
    candidates = [
        p
        for p in resource.waiting_queue
        if p.next_task is not None and resource.can_serve(p.next_task.kind)
    ]
    if not candidates:
        return None
    chosen = order_queue(policy, candidates, now)[0]
    resource.waiting_queue.remove(chosen)
    return chosen
