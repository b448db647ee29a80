"""Deterministic multi-agent patient-flow simulator.

Capacity-bounded clinic stations serve weighted patients under four queue
disciplines; overloaded stations shed patients to ring neighbours through a
partial-information request/accept/move protocol, either one at a time or
as groups.  Runs are exactly reproducible and report the standard weighted
completion and tardiness metrics.
"""

from .domain import (
    MigrationGroup,
    PatientRecord,
    ResourceState,
    TaskSpec,
    due_time,
    exceeded_patients,
    remaining_processing,
)
from .engine import (
    NoCompatibleResource,
    Simulation,
    SimulationTrace,
    StallError,
    initial_assignment,
    run,
)
from .metrics import IncompleteTraceError, MetricsReport, aggregate, completion_time, tardiness
from .policies import POLICY_ORDER, Policy, order_queue, select_next
from .scenario_io import (
    GeneratorParams,
    PatientSpec,
    RangeError,
    ResourceSpec,
    ScenarioSpec,
    SchemaError,
    ValidationError,
    generate_scenario,
    load_scenario,
    parse_scenario,
    render_scenario,
    save_scenario,
    write_report,
)

__version__ = "0.1.0"

__all__ = [
    "GeneratorParams",
    "IncompleteTraceError",
    "MetricsReport",
    "MigrationGroup",
    "NoCompatibleResource",
    "POLICY_ORDER",
    "PatientRecord",
    "PatientSpec",
    "Policy",
    "RangeError",
    "ResourceSpec",
    "ResourceState",
    "ScenarioSpec",
    "SchemaError",
    "Simulation",
    "SimulationTrace",
    "StallError",
    "TaskSpec",
    "ValidationError",
    "aggregate",
    "completion_time",
    "due_time",
    "exceeded_patients",
    "generate_scenario",
    "initial_assignment",
    "load_scenario",
    "order_queue",
    "parse_scenario",
    "remaining_processing",
    "render_scenario",
    "run",
    "save_scenario",
    "select_next",
    "tardiness",
    "write_report",
]
