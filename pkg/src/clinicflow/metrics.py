"""Headline schedule metrics computed from a completed simulation trace.

All arithmetic is exact: times are integers, weighted sums are rationals.
Per-patient tardiness is literal (completion minus due, possibly negative);
clamped-at-zero variants are carried alongside because standard scheduling
practice floors tardiness and downstream users will expect it.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import TYPE_CHECKING, Mapping

if TYPE_CHECKING:  # pragma: no cover
    from .engine import SimulationTrace


class IncompleteTraceError(Exception):
    """A patient still has pending tasks, so its metrics are undefined."""


@dataclass(frozen=True)
class MetricsReport:
    cmax: int
    tmax: int
    sum_completion: int
    sum_tardiness: int
    sum_weighted_completion: Fraction
    sum_weighted_tardiness: Fraction
    message_count: int
    idle_ticks: int
    tmax_clamped: int
    sum_tardiness_clamped: int
    sum_weighted_tardiness_clamped: Fraction
    messages_by_kind: Mapping[str, int]


def tardiness(completion: int, due: int) -> int:
    """Literal signed tardiness; callers clamp at zero where needed."""
    return completion - due


def completion_time(patient_id: str, trace: "SimulationTrace") -> int:
    """Absolute tick at which the patient finished its last task.

    A patient with an empty itinerary completes at its arrival tick.
    Raises IncompleteTraceError if the trace holds no completion for it.
    """
    outcome = trace.patients.get(patient_id)
    if outcome is None:
        raise IncompleteTraceError(f"patient {patient_id!r} has pending tasks in this trace")
    return outcome.completion


def aggregate(trace: "SimulationTrace") -> MetricsReport:
    """Compute every headline metric from a trace where all patients completed.

    Empty scenarios yield all-zero metrics by convention.  Idle time per
    resource is the span from its first activity to the last global
    completion, minus its busy ticks; never-visited resources contribute 0.
    """
    for p in trace.spec.patients:
        if p.id not in trace.patients:
            raise IncompleteTraceError(f"patient {p.id!r} has pending tasks in this trace")

    cmax = 0
    tmax = 0
    tmax_clamped = 0
    sum_c = 0
    sum_t = 0
    sum_t0 = 0
    sum_wc = Fraction(0)
    sum_wt = Fraction(0)
    sum_wt0 = Fraction(0)
    first = True
    for p in trace.spec.patients:
        outcome = trace.patients[p.id]
        t_literal = outcome.completion - outcome.due
        t_clamped = max(0, t_literal)
        if first:
            cmax, tmax, tmax_clamped = outcome.completion, t_literal, t_clamped
            first = False
        else:
            cmax = max(cmax, outcome.completion)
            tmax = max(tmax, t_literal)
            tmax_clamped = max(tmax_clamped, t_clamped)
        sum_c += outcome.completion
        sum_t += t_literal
        sum_t0 += t_clamped
        sum_wc += p.weight * outcome.completion
        sum_wt += p.weight * t_literal
        sum_wt0 += p.weight * t_clamped

    idle = 0
    for res in trace.resources.values():
        if res.first_activity is not None:
            span = cmax - res.first_activity - res.busy_ticks
            if span < 0:
                raise AssertionError(
                    f"negative idle at resource: busy {res.busy_ticks} exceeds span"
                )
            idle += span

    return MetricsReport(
        cmax=cmax,
        tmax=tmax,
        sum_completion=sum_c,
        sum_tardiness=sum_t,
        sum_weighted_completion=sum_wc,
        sum_weighted_tardiness=sum_wt,
        message_count=sum(trace.message_counts.values()),
        idle_ticks=idle,
        tmax_clamped=tmax_clamped,
        sum_tardiness_clamped=sum_t0,
        sum_weighted_tardiness_clamped=sum_wt0,
        messages_by_kind=dict(trace.message_counts),
    )
