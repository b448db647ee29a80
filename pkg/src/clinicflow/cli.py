"""Command-line experiment runner.

Two subcommands:

``run``
    Simulate every (policy, seed) pair, print a per-policy summary table,
    and optionally write per-run CSV reports, a mean summary CSV, trace
    dumps, and the generated scenario files into ``--out``.

``compare``
    Same runs, presented as a comparison: a metrics table plus percentage
    deltas of each policy against the FCFS baseline (pairwise deltas behind
    ``--pairwise``).

All output is a pure function of the arguments and input files.  Exit codes:
0 success, 1 validation/usage error, 2 simulation stall.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

from .engine import StallError, run
from .metrics import MetricsReport, aggregate
from .policies import POLICY_ORDER, Policy
from .scenario_io import (
    GeneratorParams,
    RangeError,
    ScenarioSpec,
    SchemaError,
    ValidationError,
    format_metric,
    generate_scenario,
    load_scenario,
    render_report,
    save_scenario,
)


class _Parser(argparse.ArgumentParser):
    # Usage problems are validation errors: exit 1, not argparse's default 2.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _parse_int_range(text: str, name: str) -> tuple[int, int]:
    try:
        if ".." in text:
            lo_text, hi_text = text.split("..", 1)
            lo, hi = int(lo_text), int(hi_text)
        else:
            lo = hi = int(text)
    except ValueError:
        raise RangeError(f"{name}: expected 'A..B' or an integer, got {text!r}") from None
    if lo > hi:
        raise RangeError(f"{name}: inverted range {lo}..{hi}")
    return lo, hi


def _parse_seeds(text: str) -> list[int]:
    lo, hi = _parse_int_range(text, "--seeds")
    return list(range(lo, hi + 1))


def _parse_policies(text: str) -> list[Policy]:
    if text.strip().lower() == "all":
        return list(POLICY_ORDER)
    chosen = {Policy.parse(part) for part in text.split(",") if part.strip()}
    if not chosen:
        raise ValidationError("--policies: no policy given")
    return [p for p in POLICY_ORDER if p in chosen]


def _parse_generate(tokens: Sequence[str]) -> dict:
    values: dict[str, str] = {}
    for token in tokens:
        if "=" not in token:
            raise RangeError(f"--generate: expected key=value, got {token!r}")
        key, _, value = token.partition("=")
        if key not in ("m", "n", "dur", "w", "arr"):
            raise RangeError(f"--generate: unknown key {key!r}")
        values[key] = value
    for required in ("m", "n"):
        if required not in values:
            raise RangeError(f"--generate: missing {required}=INT")
    try:
        m, n = int(values["m"]), int(values["n"])
    except ValueError:
        raise RangeError("--generate: m and n must be integers") from None
    out = {"m": m, "n": n}
    if "dur" in values:
        out["duration_range"] = _parse_int_range(values["dur"], "dur")
    if "w" in values:
        out["weight_range"] = _parse_int_range(values["w"], "w")
    if "arr" in values:
        out["arrival_range"] = _parse_int_range(values["arr"], "arr")
    return out


def _build_spec(args, seed: int) -> ScenarioSpec:
    if args.scenario is not None:
        spec = load_scenario(args.scenario)
    else:
        gen = _parse_generate(args.generate)
        params = GeneratorParams(
            duration_range=gen.get("duration_range", GeneratorParams.duration_range),
            weight_range=gen.get("weight_range", GeneratorParams.weight_range),
            arrival_range=gen.get("arrival_range", GeneratorParams.arrival_range),
            capacity=args.capacity,
            message_latency=args.latency if args.latency is not None else 1,
        )
        return generate_scenario(gen["m"], gen["n"], params, seed)
    if args.latency is not None:
        spec = dataclasses.replace(spec, message_latency=args.latency)
    if args.capacity is not None:
        spec = dataclasses.replace(
            spec,
            resources=tuple(
                dataclasses.replace(r, fixed_capacity=args.capacity) for r in spec.resources
            ),
        )
    return spec


def _mean_report(reports: Sequence[MetricsReport]) -> MetricsReport:
    k = len(reports)

    def mean(attr):
        total = sum(getattr(r, attr) for r in reports)
        value = Fraction(total, k)
        return int(value) if value.denominator == 1 else value

    kinds = sorted({kind for r in reports for kind in r.messages_by_kind})
    by_kind = {
        kind: Fraction(sum(r.messages_by_kind.get(kind, 0) for r in reports), k) for kind in kinds
    }
    return MetricsReport(
        cmax=mean("cmax"),
        tmax=mean("tmax"),
        sum_completion=mean("sum_completion"),
        sum_tardiness=mean("sum_tardiness"),
        sum_weighted_completion=mean("sum_weighted_completion"),
        sum_weighted_tardiness=mean("sum_weighted_tardiness"),
        message_count=mean("message_count"),
        idle_ticks=mean("idle_ticks"),
        tmax_clamped=mean("tmax_clamped"),
        sum_tardiness_clamped=mean("sum_tardiness_clamped"),
        sum_weighted_tardiness_clamped=mean("sum_weighted_tardiness_clamped"),
        messages_by_kind=by_kind,
    )


def _table_columns(mode: str) -> list[tuple[str, str]]:
    columns = [("cmax", "cmax"), ("tmax", "tmax"), ("sum_c", "sum_completion"),
               ("sum_t", "sum_tardiness"), ("sum_wc", "sum_weighted_completion"),
               ("sum_wt", "sum_weighted_tardiness")]
    if mode == "clamped":
        columns = [("cmax", "cmax"), ("tmax0", "tmax_clamped"), ("sum_c", "sum_completion"),
                   ("sum_t0", "sum_tardiness_clamped"), ("sum_wc", "sum_weighted_completion"),
                   ("sum_wt0", "sum_weighted_tardiness_clamped")]
    elif mode == "both":
        columns += [("tmax0", "tmax_clamped"), ("sum_t0", "sum_tardiness_clamped"),
                    ("sum_wt0", "sum_weighted_tardiness_clamped")]
    columns += [("messages", "message_count"), ("idle", "idle_ticks")]
    return columns


def _format_table(header: list[str], rows: list[list[str]]) -> str:
    widths = [len(cell) for cell in header]
    for row in rows:
        widths = [max(w, len(cell)) for w, cell in zip(widths, row)]
    lines = []
    for cells in [header] + rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(cells, widths)).rstrip())
    return "\n".join(lines)


def format_percent(value: Fraction) -> str:
    tenths = round(value * 10)
    sign = "-" if tenths < 0 else ("+" if tenths > 0 else "")
    return f"{sign}{abs(tenths) // 10}.{abs(tenths) % 10}%"


def _delta(value, base) -> str:
    value, base = Fraction(value), Fraction(base)
    if base == 0:
        return "0.0%" if value == 0 else "n/a"
    return format_percent((value - base) / base * 100)


def _summary_lines(policies, means, mode) -> list[str]:
    columns = _table_columns(mode)
    header = ["policy"] + [name for name, _ in columns]
    rows = [
        [policy.value] + [format_metric(getattr(means[policy], attr)) for _, attr in columns]
        for policy in policies
    ]
    return [_format_table(header, rows)]


def _run_all(args, policies, seeds):
    """Simulate every (policy, seed) pair; returns specs and reports."""
    specs = {seed: _build_spec(args, seed) for seed in seeds}
    traces = {}
    reports = {}
    for policy in policies:
        for seed in seeds:
            trace = run(specs[seed], policy)
            traces[(policy, seed)] = trace
            reports[(policy, seed)] = aggregate(trace)
    means = {policy: _mean_report([reports[(policy, s)] for s in seeds]) for policy in policies}
    return specs, traces, reports, means


def _write_outputs(args, policies, seeds, specs, traces, reports, means, summary_name):
    if args.out is None:
        return
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mode = "literal" if args.tardiness == "both" else args.tardiness
    with open(out / summary_name, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_report([(p.value, means[p]) for p in policies], mode))
    for policy in policies:
        for seed in seeds:
            name = f"run_{policy.value}_seed{seed}.csv"
            with open(out / name, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(render_report([(policy.value, reports[(policy, seed)])], mode))
    if args.scenario is None:
        for seed in seeds:
            save_scenario(specs[seed], out / f"scenario_seed{seed}.scn.json")
    if args.dump_trace:
        for (policy, seed), trace in traces.items():
            with open(out / f"trace_{policy.value}_seed{seed}.log",
                      "w", encoding="utf-8", newline="\n") as fh:
                fh.write(trace.dump())


def _seeds_label(seeds) -> str:
    if len(seeds) == 1:
        return f"seed {seeds[0]}"
    return f"seeds {seeds[0]}..{seeds[-1]} (mean of {len(seeds)} runs)"


def cmd_run(args) -> int:
    policies = _parse_policies(args.policies)
    seeds = _parse_seeds(args.seeds)
    specs, traces, reports, means = _run_all(args, policies, seeds)
    print(_seeds_label(seeds))
    for line in _summary_lines(policies, means, args.tardiness):
        print(line)
    _write_outputs(args, policies, seeds, specs, traces, reports, means, "summary.csv")
    return 0


def cmd_compare(args) -> int:
    policies = _parse_policies(args.policies)
    if len(policies) < 2:
        raise ValidationError("compare needs at least two policies")
    seeds = _parse_seeds(args.seeds)
    specs, traces, reports, means = _run_all(args, policies, seeds)
    print(_seeds_label(seeds))
    for line in _summary_lines(policies, means, args.tardiness):
        print(line)
    baseline = Policy.FCFS if Policy.FCFS in policies else policies[0]
    columns = _table_columns(args.tardiness)
    header = [f"vs {baseline.value}"] + [name for name, _ in columns]
    rows = [
        [policy.value]
        + [
            _delta(getattr(means[policy], attr), getattr(means[baseline], attr))
            for _, attr in columns
        ]
        for policy in policies
        if policy is not baseline
    ]
    print()
    print(_format_table(header, rows))
    if args.pairwise:
        print()
        print("pairwise deltas (row vs column):")
        for name, attr in columns:
            pairs = []
            for a in policies:
                for b in policies:
                    if a is not b:
                        pairs.append(
                            f"{a.value} vs {b.value}: "
                            f"{_delta(getattr(means[a], attr), getattr(means[b], attr))}"
                        )
            print(f"  {name}: " + "; ".join(pairs))
    _write_outputs(args, policies, seeds, specs, traces, reports, means, "comparison.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="clinicflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, func in (("run", cmd_run), ("compare", cmd_compare)):
        p = sub.add_parser(name)
        source = p.add_mutually_exclusive_group(required=True)
        source.add_argument("--scenario", metavar="PATH", help="scenario file (.scn.json)")
        source.add_argument(
            "--generate",
            nargs="+",
            metavar="KEY=VAL",
            help="generate a scenario: m=INT n=INT [dur=A..B] [w=A..B] [arr=A..B]",
        )
        p.add_argument("--policies", default="all",
                       help="fcfs, wspt, dops, dopsg, comma list, or 'all'")
        p.add_argument("--seeds", "--seed", default="0", help="A..B inclusive, or a single seed")
        p.add_argument("--out", metavar="PATH", help="directory for CSV reports and dumps")
        p.add_argument("--dump-trace", action="store_true", help="write per-run event logs")
        p.add_argument("--tardiness", choices=("literal", "clamped", "both"), default="literal")
        p.add_argument("--latency", type=int, metavar="TICKS", help="override message latency")
        p.add_argument("--capacity", type=int, metavar="INT", help="override fixed capacities")
        if name == "compare":
            p.add_argument("--pairwise", action="store_true", help="print pairwise deltas too")
        p.set_defaults(func=func)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except StallError as exc:
        print(f"error: simulation stalled: {exc}", file=sys.stderr)
        return 2
    except (SchemaError, ValidationError, RangeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
