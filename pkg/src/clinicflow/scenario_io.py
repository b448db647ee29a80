"""Scenario parsing, validation, generation, and report files.

Scenario files use a JSON document (conventional extension ``.scn.json``)
with all times in integer ticks (1 tick = 1 minute):

.. code-block:: json

    {
      "resources": [
        {"id": "R0", "fixed_capacity": 9, "ring_index": 0, "capabilities": null}
      ],
      "patients": [
        {"id": "P00", "weight": 3, "hospital_arrival": 17,
         "tasks": [{"kind": "ecg", "duration": 12}]}
      ],
      "message_latency": 1,
      "assignment_policy": "round_robin",
      "rng_seed": 42
    }

``capabilities: null`` (or omitted) means the station serves every task
kind.  Weights are positive rationals: an integer, a decimal number, or a
string such as ``"7/2"``.  Unknown fields are rejected.

Report files are CSV with header
``policy,cmax,tmax,sum_c,sum_t,sum_wc,sum_wt,messages,idle_ticks``,
LF line endings, and metric values rendered exactly (integers as-is,
rationals as decimals with at most six places).
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from .domain import TaskSpec
from .metrics import MetricsReport
from .policies import POLICY_ORDER


class SchemaError(ValueError):
    """The document is malformed: wrong types, missing or unknown fields."""


class ValidationError(ValueError):
    """The document is well-formed but violates a scenario invariant."""


class RangeError(ValueError):
    """A generator range is inverted, empty, or out of domain."""


@dataclass(frozen=True)
class ResourceSpec:
    id: str
    fixed_capacity: int
    ring_index: int
    capabilities: Optional[tuple[str, ...]] = None


@dataclass(frozen=True)
class PatientSpec:
    id: str
    weight: Fraction
    hospital_arrival: int
    tasks: tuple[TaskSpec, ...]


@dataclass(frozen=True)
class ScenarioSpec:
    resources: tuple[ResourceSpec, ...]
    patients: tuple[PatientSpec, ...]
    message_latency: int = 1
    assignment_policy: str = "round_robin"
    rng_seed: int = 0


# --- parsing -----------------------------------------------------------------


def _require_keys(obj: dict, allowed: set[str], required: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise SchemaError(f"{where}: unknown field(s) {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise SchemaError(f"{where}: missing field(s) {sorted(missing)}")


def _as_int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{where}: expected an integer, got {value!r}")
    return value


def _as_str(value, where: str) -> str:
    if not isinstance(value, str) or not value:
        raise SchemaError(f"{where}: expected a non-empty string, got {value!r}")
    return value


def _as_weight(value, where: str) -> Fraction:
    try:
        if isinstance(value, bool):
            raise TypeError
        if isinstance(value, int):
            return Fraction(value)
        if isinstance(value, float):
            return Fraction(str(value))
        if isinstance(value, str):
            return Fraction(value)
    except (ValueError, ZeroDivisionError, TypeError):
        pass
    raise SchemaError(f"{where}: expected a number or 'a/b' string, got {value!r}")


def _parse_resource(obj, index: int) -> ResourceSpec:
    where = f"resources[{index}]"
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object")
    _require_keys(obj, {"id", "fixed_capacity", "ring_index", "capabilities"},
                  {"id", "fixed_capacity", "ring_index"}, where)
    caps = obj.get("capabilities")
    if caps is not None:
        if not isinstance(caps, list) or not all(isinstance(c, str) and c for c in caps):
            raise SchemaError(f"{where}: capabilities must be null or a list of task kinds")
        caps = tuple(sorted(set(caps)))
    return ResourceSpec(
        id=_as_str(obj["id"], f"{where}.id"),
        fixed_capacity=_as_int(obj["fixed_capacity"], f"{where}.fixed_capacity"),
        ring_index=_as_int(obj["ring_index"], f"{where}.ring_index"),
        capabilities=caps,
    )


def _parse_task(obj, where: str) -> TaskSpec:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object")
    _require_keys(obj, {"kind", "duration"}, {"kind", "duration"}, where)
    kind = _as_str(obj["kind"], f"{where}.kind")
    duration = _as_int(obj["duration"], f"{where}.duration")
    if duration <= 0:
        raise ValidationError(f"{where}: task {kind!r} has non-positive duration {duration}")
    return TaskSpec(kind, duration)


def _parse_patient(obj, index: int) -> PatientSpec:
    where = f"patients[{index}]"
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object")
    _require_keys(obj, {"id", "weight", "hospital_arrival", "tasks"},
                  {"id", "weight", "hospital_arrival", "tasks"}, where)
    pid = _as_str(obj["id"], f"{where}.id")
    weight = _as_weight(obj["weight"], f"{where}.weight")
    if weight <= 0:
        raise ValidationError(f"patient {pid!r}: weight must be positive, got {weight}")
    arrival = _as_int(obj["hospital_arrival"], f"{where}.hospital_arrival")
    if arrival < 0:
        raise ValidationError(f"patient {pid!r}: hospital_arrival must be >= 0")
    tasks_obj = obj["tasks"]
    if not isinstance(tasks_obj, list):
        raise SchemaError(f"{where}.tasks: expected a list")
    tasks = tuple(_parse_task(t, f"{where}.tasks[{i}]") for i, t in enumerate(tasks_obj))
    return PatientSpec(pid, weight, arrival, tasks)


def parse_scenario(text: str) -> ScenarioSpec:
    """Parse and validate a scenario document; errors name the offending element."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("top level: expected an object")
    _require_keys(
        doc,
        {"resources", "patients", "message_latency", "assignment_policy", "rng_seed"},
        {"resources", "patients"},
        "top level",
    )
    if not isinstance(doc["resources"], list):
        raise SchemaError("resources: expected a list")
    if not isinstance(doc["patients"], list):
        raise SchemaError("patients: expected a list")
    resources = tuple(_parse_resource(r, i) for i, r in enumerate(doc["resources"]))
    patients = tuple(_parse_patient(p, i) for i, p in enumerate(doc["patients"]))
    latency = _as_int(doc.get("message_latency", 1), "message_latency")
    assignment = doc.get("assignment_policy", "round_robin")
    if not isinstance(assignment, str):
        raise SchemaError("assignment_policy: expected a string")
    seed = _as_int(doc.get("rng_seed", 0), "rng_seed")
    spec = ScenarioSpec(resources, patients, latency, assignment, seed)
    validate_scenario(spec)
    return spec


def validate_scenario(spec: ScenarioSpec) -> None:
    """Check cross-element invariants; raises ValidationError naming the offender."""
    if not spec.resources:
        raise ValidationError("scenario must declare at least one resource")
    seen_rids: set[str] = set()
    for r in spec.resources:
        if r.id in seen_rids:
            raise ValidationError(f"duplicate resource id {r.id!r}")
        seen_rids.add(r.id)
        if r.fixed_capacity <= 0:
            raise ValidationError(f"resource {r.id!r}: fixed_capacity must be positive")
    ring = sorted(r.ring_index for r in spec.resources)
    if ring != list(range(len(spec.resources))):
        raise ValidationError(
            f"ring_index values must be exactly 0..{len(spec.resources) - 1}, got {ring}"
        )
    seen_pids: set[str] = set()
    for p in spec.patients:
        if p.id in seen_pids:
            raise ValidationError(f"duplicate patient id {p.id!r}")
        seen_pids.add(p.id)
        for t in p.tasks:
            if not any(r.capabilities is None or t.kind in r.capabilities for r in spec.resources):
                raise ValidationError(
                    f"patient {p.id!r}: no resource serves task kind {t.kind!r}"
                )
    if spec.message_latency < 0:
        raise ValidationError("message_latency must be >= 0")
    if spec.assignment_policy != "round_robin":
        raise ValidationError(f"unknown assignment_policy {spec.assignment_policy!r}")


# --- rendering ---------------------------------------------------------------


def _weight_json(weight: Fraction):
    return weight.numerator if weight.denominator == 1 else str(weight)


def render_scenario(spec: ScenarioSpec) -> str:
    """Serialize a spec to the documented JSON form; parse(render(s)) == s."""
    doc = {
        "resources": [
            {
                "id": r.id,
                "fixed_capacity": r.fixed_capacity,
                "ring_index": r.ring_index,
                "capabilities": None if r.capabilities is None else list(r.capabilities),
            }
            for r in spec.resources
        ],
        "patients": [
            {
                "id": p.id,
                "weight": _weight_json(p.weight),
                "hospital_arrival": p.hospital_arrival,
                "tasks": [{"kind": t.kind, "duration": t.duration} for t in p.tasks],
            }
            for p in spec.patients
        ],
        "message_latency": spec.message_latency,
        "assignment_policy": spec.assignment_policy,
        "rng_seed": spec.rng_seed,
    }
    return json.dumps(doc, indent=2) + "\n"


def load_scenario(path) -> ScenarioSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def save_scenario(spec: ScenarioSpec, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_scenario(spec))


# --- generation --------------------------------------------------------------

#: Cosmetic pool of checkup kinds for generated patients.
TASK_KINDS = ("blood", "urine", "ecg", "xray", "scan", "thyroid", "dental", "eye")


@dataclass(frozen=True)
class GeneratorParams:
    """Ranges for scenario generation; all inclusive, all in ticks.

    One task per patient by default: the classic single-stage benchmark
    shape.  Multi-task itineraries (``tasks_range``) are fully supported by
    the engine, which re-queues or re-routes patients between tasks.
    """

    duration_range: tuple[int, int] = (5, 30)
    weight_range: tuple[int, int] = (1, 5)
    arrival_range: tuple[int, int] = (0, 120)
    tasks_range: tuple[int, int] = (1, 1)
    capacity: Optional[int] = None
    message_latency: int = 1
    task_kinds: tuple[str, ...] = TASK_KINDS


def _check_range(name: str, rng: tuple[int, int], minimum: int) -> None:
    lo, hi = rng
    if lo > hi:
        raise RangeError(f"{name}: inverted range {lo}..{hi}")
    if lo < minimum:
        raise RangeError(f"{name}: lower bound must be >= {minimum}, got {lo}")


def default_capacity(m: int, n: int) -> int:
    """ceil(n / 2m), floored at 1, so overload episodes actually occur."""
    return max(1, math.ceil(n / (2 * m))) if n else 1


def generate_scenario(
    m: int, n: int, params: Optional[GeneratorParams] = None, seed: int = 0
) -> ScenarioSpec:
    """Deterministically generate an ``m``-station, ``n``-patient scenario.

    A pure function of its arguments: the same inputs always produce an
    identical spec.  All generated values fall inside the declared ranges.
    """
    params = params or GeneratorParams()
    if m < 1:
        raise RangeError(f"resource count must be >= 1, got {m}")
    if n < 0:
        raise RangeError(f"patient count must be >= 0, got {n}")
    _check_range("duration_range", params.duration_range, 1)
    _check_range("weight_range", params.weight_range, 1)
    _check_range("arrival_range", params.arrival_range, 0)
    _check_range("tasks_range", params.tasks_range, 0)
    if params.capacity is not None and params.capacity < 1:
        raise RangeError(f"capacity must be >= 1, got {params.capacity}")
    if not params.task_kinds:
        raise RangeError("task_kinds must not be empty")
    if params.message_latency < 0:
        raise RangeError("message_latency must be >= 0")

    capacity = params.capacity if params.capacity is not None else default_capacity(m, n)
    rng = random.Random(seed)
    pad = max(2, len(str(max(n - 1, 0))))
    patients = []
    for i in range(n):
        arrival = rng.randint(*params.arrival_range)
        weight = Fraction(rng.randint(*params.weight_range))
        count = rng.randint(*params.tasks_range)
        tasks = tuple(
            TaskSpec(rng.choice(params.task_kinds), rng.randint(*params.duration_range))
            for _ in range(count)
        )
        patients.append(PatientSpec(f"P{i:0{pad}d}", weight, arrival, tasks))
    resources = tuple(
        ResourceSpec(id=f"R{j}", fixed_capacity=capacity, ring_index=j, capabilities=None)
        for j in range(m)
    )
    spec = ScenarioSpec(
        resources=resources,
        patients=tuple(patients),
        message_latency=params.message_latency,
        assignment_policy="round_robin",
        rng_seed=seed,
    )
    validate_scenario(spec)
    return spec


# --- reports -----------------------------------------------------------------

REPORT_HEADER = "policy,cmax,tmax,sum_c,sum_t,sum_wc,sum_wt,messages,idle_ticks"

_CANONICAL_RANK = {p.value: i for i, p in enumerate(POLICY_ORDER)}


def format_metric(value) -> str:
    """Render a tick or rational metric exactly, with at most six decimals."""
    frac = Fraction(value)
    if frac.denominator == 1:
        return str(frac.numerator)
    number = round(frac * 1_000_000)
    sign = "-" if number < 0 else ""
    digits = f"{abs(number):07d}"
    whole, decimals = digits[:-6], digits[-6:].rstrip("0")
    return f"{sign}{whole}.{decimals}" if decimals else f"{sign}{whole}"


def report_row(label: str, report: MetricsReport, tardiness: str = "literal") -> str:
    if tardiness == "clamped":
        tmax, sum_t, sum_wt = (
            report.tmax_clamped,
            report.sum_tardiness_clamped,
            report.sum_weighted_tardiness_clamped,
        )
    else:
        tmax, sum_t, sum_wt = report.tmax, report.sum_tardiness, report.sum_weighted_tardiness
    cells = [
        label,
        format_metric(report.cmax),
        format_metric(tmax),
        format_metric(report.sum_completion),
        format_metric(sum_t),
        format_metric(report.sum_weighted_completion),
        format_metric(sum_wt),
        format_metric(report.message_count),
        format_metric(report.idle_ticks),
    ]
    return ",".join(cells)


def render_report(
    reports: Sequence[tuple[str, MetricsReport]], tardiness: str = "literal"
) -> str:
    """Build the comparison CSV: one row per policy, canonical policy order."""
    if not reports:
        raise ValueError("need at least one report")
    ordered = sorted(
        reports, key=lambda item: (_CANONICAL_RANK.get(item[0].lower(), len(_CANONICAL_RANK)), item[0])
    )
    lines = [REPORT_HEADER]
    lines.extend(report_row(label, report, tardiness) for label, report in ordered)
    return "\n".join(lines) + "\n"


def write_report(
    reports: Sequence[tuple[str, MetricsReport]], path, tardiness: str = "literal"
) -> None:
    """Write the comparison CSV; identical input produces identical bytes."""
    text = render_report(reports, tardiness)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
