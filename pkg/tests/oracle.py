"""Independent checkers used by the test suite.

The metric recomputation here deliberately shares no code with the package:
it parses the plain-text event dump and recomputes every metric with flat
loops, so it can act as an oracle for the packaged aggregation.
"""

from __future__ import annotations

import itertools
from fractions import Fraction


def parse_dump(text):
    events = []
    for line in text.strip().splitlines():
        parts = line.split()
        at, seq, kind = int(parts[0]), int(parts[1]), parts[2]
        fields = dict(part.split("=", 1) for part in parts[3:])
        events.append((at, seq, kind, fields))
    return events


def recompute_metrics(spec, dump_text):
    """Straight-line metric recomputation from the dump plus scenario data."""
    completion = {}
    busy = {}
    first_seen = {}
    message_total = 0
    by_kind = {}
    for at, _seq, kind, f in parse_dump(dump_text):
        if kind == "depart":
            completion[f["patient"]] = int(f["completion"])
        elif kind == "complete":
            rid = f["resource"]
            busy[rid] = busy.get(rid, 0) + (int(f["end"]) - int(f["start"]))
        elif kind == "deliver":
            message_total += 1
            by_kind[f["msg"]] = by_kind.get(f["msg"], 0) + 1
        if kind in ("arrive", "admit", "land", "start"):
            rid = f["resource"]
            if rid not in first_seen:
                first_seen[rid] = at

    cmax = 0
    tmax = None
    tmax0 = None
    sum_c = 0
    sum_t = 0
    sum_t0 = 0
    sum_wc = Fraction(0)
    sum_wt = Fraction(0)
    sum_wt0 = Fraction(0)
    for p in spec.patients:
        c = completion[p.id]
        due = p.hospital_arrival
        for task in p.tasks:
            due += task.duration
        literal = c - due
        clamped = literal if literal > 0 else 0
        cmax = max(cmax, c)
        tmax = literal if tmax is None else max(tmax, literal)
        tmax0 = clamped if tmax0 is None else max(tmax0, clamped)
        sum_c += c
        sum_t += literal
        sum_t0 += clamped
        sum_wc += p.weight * c
        sum_wt += p.weight * literal
        sum_wt0 += p.weight * clamped
    if tmax is None:
        tmax = 0
        tmax0 = 0
    idle = 0
    for rid, activated in first_seen.items():
        idle += cmax - activated - busy.get(rid, 0)
    return {
        "cmax": cmax,
        "tmax": tmax,
        "tmax_clamped": tmax0,
        "sum_completion": sum_c,
        "sum_tardiness": sum_t,
        "sum_tardiness_clamped": sum_t0,
        "sum_weighted_completion": sum_wc,
        "sum_weighted_tardiness": sum_wt,
        "sum_weighted_tardiness_clamped": sum_wt0,
        "message_count": message_total,
        "messages_by_kind": by_kind,
        "idle_ticks": idle,
    }


def replay_locations(spec, dump_text, capacities=None):
    """Replay the dump checking single-location conservation per patient.

    Returns the final location map.  When ``capacities`` is given (resource
    id -> fixed capacity), also asserts that no migration seating ever
    pushes a station's occupancy past its capacity; exogenous arrivals may.
    """
    location = {}
    occupancy = {}

    def seat(pid, rid, migration: bool):
        occupancy[rid] = occupancy.get(rid, 0) + 1
        location[pid] = ("queued", rid)
        if migration and capacities is not None:
            assert occupancy[rid] <= capacities[rid], (
                f"seating {pid} pushed {rid} to {occupancy[rid]} > {capacities[rid]}"
            )

    def leave(pid):
        state, rid = location[pid]
        if state == "queued":
            occupancy[rid] -= 1

    for at, _seq, kind, f in parse_dump(dump_text):
        if kind == "arrive":
            pid = f["patient"]
            prior = location.get(pid, ("fresh", None))[0]
            assert prior in ("fresh", "routing"), (pid, prior)
            seat(pid, f["resource"], migration=False)
        elif kind == "start":
            assert location[f["patient"]] == ("queued", f["resource"])
        elif kind == "complete":
            pid = f["patient"]
            assert location[pid] == ("queued", f["resource"])
            leave(pid)
            location[pid] = ("routing", None)
        elif kind == "depart":
            pid = f["patient"]
            assert location[pid][0] in ("queued", "routing", "fresh")
            if location.get(pid, ("fresh", None))[0] == "queued":
                leave(pid)
            location[pid] = ("done", None)
        elif kind == "extract":
            pid = f["patient"]
            assert location[pid] == ("queued", f["resource"]), (pid, location[pid])
            leave(pid)
            location[pid] = ("held", f["resource"])
        elif kind == "deliver" and f["msg"] == "move":
            for pid in f["patients"].split("+"):
                assert location[pid][0] == "held", (pid, location[pid])
                location[pid] = ("flight", None)
        elif kind == "land":
            assert location[f["patient"]][0] == "flight"
            location[f["patient"]] = ("door", f["resource"])
        elif kind == "admit":
            pid = f["patient"]
            prior = location[pid][0]
            assert prior in ("flight", "door"), (pid, prior)
            seat(pid, f["resource"], migration=True)
    for p in spec.patients:
        assert location[p.id] == ("done", None), f"{p.id} never finished: {location.get(p.id)}"
    return location


def reconstruct_cycles(dump_text):
    """Rebuild transfer cycles (request -> accept -> move) from the dump.

    Returns (cycles, probe_count, empty_accepts) where each cycle is a dict
    with src, dst, k (patients moved), and at (move delivery tick).  Every
    cycle accounts for exactly three messages; a probe is a request/reject
    pair; an accept never followed by a move is an empty accept.
    """
    pending_request = {}
    pending_accept = {}
    cycles = []
    probes = 0
    empty_accepts = 0
    for at, _seq, kind, f in parse_dump(dump_text):
        if kind != "deliver":
            continue
        msg, src, dst = f["msg"], f["src"], f["dst"]
        if msg == "request":
            key = (src, dst)
            if key in pending_accept:
                empty_accepts += 1
                del pending_accept[key]
            assert key not in pending_request, "overlapping requests on one pair"
            pending_request[key] = at
        elif msg == "reject":
            key = (dst, src)
            assert key in pending_request, "reject without a request"
            del pending_request[key]
            probes += 1
        elif msg == "accept":
            key = (dst, src)
            assert key in pending_request, "accept without a request"
            del pending_request[key]
            pending_accept[key] = at
        elif msg == "move":
            key = (src, dst)
            assert key in pending_accept, "move without an accept"
            del pending_accept[key]
            cycles.append({"src": src, "dst": dst, "k": f["patients"].count("+") + 1, "at": at})
    empty_accepts += len(pending_accept)
    return cycles, probes, empty_accepts


def brute_force_min_weighted_completion(jobs):
    """Exhaustive single-machine minimum of sum(weight * completion)."""
    best = None
    for perm in itertools.permutations(range(len(jobs))):
        clock = 0
        total = Fraction(0)
        for index in perm:
            weight, duration = jobs[index]
            clock += duration
            total += Fraction(weight) * clock
        if best is None or total < best:
            best = total
    return Fraction(0) if best is None else best
