"""Offline and online checking.

Everything here works on artifacts (scenarios, traces, snapshot images) with
no privileged view of the runtime internals, so each check is an independent
route to the property it guards:

* happens-before acyclicity over executed blocking collective instances;
* static point-to-point crossing legality (a matched pair may not straddle a
  blocking collective on a communicator containing both endpoints);
* safe-state soundness of a snapshot against its trace;
* replay equivalence of checkpoint/restart against the uninterrupted run;
* bounded clock skew between members of a blocking-only group.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .scenario import ScenarioProgram, WORLD


@dataclass
class Verdict:
    check: str
    passed: bool
    detail: dict = field(default_factory=dict)
    scenario: str = ""
    seed: int | None = None

    def to_json_line(self) -> str:
        return json.dumps(
            {"check": self.check, "scenario": self.scenario, "seed": self.seed,
             "pass": self.passed, "detail": self.detail},
            sort_keys=True, separators=(",", ":"))


# --------------------------------------------------------------------------
# Happens-before
# --------------------------------------------------------------------------


def hb_lists_from_trace(trace) -> list:
    """Per-rank ordered (group label, instance number) of blocking collectives."""
    per_rank: dict[int, list] = {}
    for ev in trace:
        if ev["event"] == "coll_enter":
            d = ev["detail"]
            per_rank.setdefault(ev["rank"], []).append((d["group"], d["num"]))
    if not per_rank:
        return []
    return [per_rank.get(r, []) for r in range(max(per_rank) + 1)]


def _find_cycle(adjacency: dict):
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {node: WHITE for node in adjacency}
    parent = {}
    for start in sorted(adjacency):
        if color[start] != WHITE:
            continue
        stack = [(start, iter(sorted(adjacency[start])))]
        color[start] = GRAY
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if color.get(nxt, WHITE) == WHITE:
                    color[nxt] = GRAY
                    parent[nxt] = node
                    stack.append((nxt, iter(sorted(adjacency.get(nxt, ())))))
                    advanced = True
                    break
                if color.get(nxt) == GRAY:
                    cycle = [nxt, node]
                    cur = node
                    while cur != nxt:
                        cur = parent[cur]
                        cycle.append(cur)
                    cycle.reverse()
                    return cycle
            if not advanced:
                color[node] = BLACK
                stack.pop()
    return None


def check_hb_acyclic(trace_or_lists, scenario="", seed=None) -> Verdict:
    """Program-order edges per rank between consecutive blocking instances;
    the transitive closure is a DAG iff this base graph is."""
    if trace_or_lists and isinstance(trace_or_lists[0], dict):
        per_rank = hb_lists_from_trace(trace_or_lists)
    else:
        per_rank = trace_or_lists or []
    adjacency: dict = {}
    for sequence in per_rank:
        for node in sequence:
            adjacency.setdefault(tuple(node), set())
        for a, b in zip(sequence, sequence[1:]):
            adjacency[tuple(a)].add(tuple(b))
    cycle = _find_cycle(adjacency)
    detail = {"nodes": len(adjacency)}
    if cycle:
        detail["cycle"] = [list(n) for n in cycle]
    return Verdict("hb_acyclic", cycle is None, detail, scenario, seed)


# --------------------------------------------------------------------------
# Point-to-point crossing legality (static)
# --------------------------------------------------------------------------


def _blocking_positions(scenario: ScenarioProgram, rank: int, comm_id: str) -> list:
    """Program positions of rank's blocking collective calls on a communicator.

    Communicator creation is collective over the parent, so it counts as a
    blocking call on the parent (world).
    """
    positions = []
    for i, op in enumerate(scenario.programs[rank]):
        if op.op == "coll" and op.comm == comm_id:
            positions.append(i)
        elif op.op == "comm_create" and comm_id == WORLD:
            positions.append(i)
    return positions


def check_crossing_legality(scenario: ScenarioProgram, seed=None) -> Verdict:
    """No matched send/recv pair may straddle a blocking collective instance
    on a communicator containing both endpoints, in either direction."""
    sends: dict = {}
    recvs: dict = {}
    for rank, program in enumerate(scenario.programs):
        for i, op in enumerate(program):
            if op.op == "send":
                sends.setdefault((rank, op.peer, op.tag, op.comm), []).append(i)
            elif op.op == "recv":
                recvs.setdefault((op.peer, rank, op.tag, op.comm), []).append(i)

    shared_comms = {}
    violations = []

    def comms_containing(a, b):
        key = (a, b) if a < b else (b, a)
        if key not in shared_comms:
            found = [WORLD]
            for cid, members in scenario.comms.items():
                if a in members and b in members:
                    found.append(cid)
            shared_comms[key] = found
        return shared_comms[key]

    for key in sorted(set(sends) | set(recvs)):
        src, dst, tag, comm = key
        pair_sends = sends.get(key, [])
        pair_recvs = recvs.get(key, [])
        for send_pos, recv_pos in zip(pair_sends, pair_recvs):
            for cid in comms_containing(src, dst):
                src_positions = _blocking_positions(scenario, src, cid)
                dst_positions = _blocking_positions(scenario, dst, cid)
                for k in range(min(len(src_positions), len(dst_positions))):
                    a, b = src_positions[k], dst_positions[k]
                    before_a, after_b = send_pos < a, recv_pos > b
                    after_a, before_b = send_pos > a, recv_pos < b
                    if (before_a and after_b) or (after_a and before_b):
                        violations.append({
                            "send": [src, send_pos], "recv": [dst, recv_pos],
                            "comm": cid, "instance": k,
                        })
    return Verdict("crossing_legality", not violations,
                   {"violations": violations}, scenario.name, seed)


# --------------------------------------------------------------------------
# Safe-state soundness from artifacts
# --------------------------------------------------------------------------


def _members_of(snapshot, comm_id):
    if comm_id == WORLD:
        return tuple(range(snapshot.world_size))
    return tuple(snapshot.comms_created[comm_id])


def check_safe_state(snapshot, trace, scenario="", seed=None) -> Verdict:
    """Validate the two safe-state invariants plus clock agreement.

    Uses only the serialized snapshot and the event trace up to the
    ``safe_state`` marker: every blocking instance any member entered must be
    returned by all members, every initiated non-blocking instance must be
    globally complete, no point-to-point may be in flight, and each rank's
    counter must equal the final target for every group it belongs to.
    """
    problems = []
    marker = None
    for i, ev in enumerate(trace):
        if ev["event"] == "safe_state":
            marker = i
            break
    if marker is None:
        return Verdict("safe_state", False, {"problems": ["no safe_state event in trace"]},
                       scenario, seed)
    pre = trace[:marker]

    entered: dict = {}
    returned: dict = {}
    initiated: dict = {}
    nb_complete = set()
    tb_entered: dict = {}
    tb_resolved = set()
    tb_aborted = set()
    posts = {"send": {}, "recv": {}}
    matches: dict = {}
    for ev in pre:
        name, rank, d = ev["event"], ev["rank"], ev["detail"]
        key = (d.get("comm"), d.get("instance"))
        if name == "coll_enter":
            entered.setdefault(key, set()).add(rank)
        elif name == "coll_return":
            returned.setdefault(key, set()).add(rank)
        elif name == "icoll_init":
            initiated.setdefault(key, set()).add(rank)
        elif name == "icoll_complete":
            nb_complete.add(key)
        elif name == "tb_enter":
            tb_entered.setdefault(key, set()).add(rank)
        elif name == "tb_complete":
            tb_resolved.add(key)
        elif name == "tb_abort":
            tb_aborted.add((rank,) + key)
        elif name == "send_post":
            pkey = (rank, d["peer"], d["tag"], d["comm"])
            posts["send"][pkey] = posts["send"].get(pkey, 0) + 1
        elif name == "recv_post":
            pkey = (d["peer"], rank, d["tag"], d["comm"])
            posts["recv"][pkey] = posts["recv"].get(pkey, 0) + 1
        elif name == "p2p_match":
            pkey = (d["src"], d["dst"], d["tag"], d["comm"])
            matches[pkey] = matches.get(pkey, 0) + 1

    for key, who in sorted(entered.items()):
        members = set(_members_of(snapshot, key[0]))
        done = returned.get(key, set())
        if done != members:
            problems.append(f"instance {key} entered by {sorted(who)} but returned only by "
                            f"{sorted(done)} of {sorted(members)}")
    for key, who in sorted(initiated.items()):
        members = set(_members_of(snapshot, key[0]))
        if key not in nb_complete or who != members:
            problems.append(f"non-blocking instance {key} initiated by {sorted(who)} "
                            f"but not globally complete")
    for key, who in sorted(tb_entered.items()):
        if key in tb_resolved:
            continue
        for rank in sorted(who):
            if (rank,) + key not in tb_aborted:
                problems.append(f"rank {rank} still inside trivial barrier {key}")
    for kind in ("send", "recv"):
        for pkey, count in sorted(posts[kind].items()):
            if matches.get(pkey, 0) < count:
                problems.append(f"{kind} posts unmatched at snapshot: {pkey}")

    targets = snapshot.final_targets
    for row in snapshot.per_rank:
        clock = row.get("protocol", {}).get("clock")
        if clock is None:
            continue
        rank = row["rank"]
        for label, tgt in targets.items():
            members = [int(x) for x in label.split(",")]
            if rank in members and clock.get(label, 0) != tgt:
                problems.append(f"rank {rank} SEQ {clock.get(label, 0)} != TARGET {tgt} "
                                f"for group {{{label}}}")
        for label, seq in clock.items():
            members = [int(x) for x in label.split(",")]
            if rank in members and seq > 0 and targets.get(label, 0) != seq:
                problems.append(f"rank {rank} group {{{label}}} SEQ {seq} missing from targets")
        for rid, rec in row.get("protocol", {}).get("incomplete_requests", {}).items():
            if rec["state"] not in ("globally_complete", "consumed"):
                problems.append(f"request {rid} on rank {rank} is {rec['state']} in snapshot")

    return Verdict("safe_state", not problems, {"problems": problems}, scenario, seed)


# --------------------------------------------------------------------------
# Replay equivalence
# --------------------------------------------------------------------------


def check_replay_equivalence(scenario, algorithm, seed, placement,
                             restart_seed=None) -> Verdict:
    """Uninterrupted run vs. checkpoint + restart: final checksums must agree.

    Also asserts the resumed original run (release path) matches, which is
    strictly stronger.
    """
    from . import driver  # late import; driver depends on this module

    base = driver.run(scenario, algorithm=algorithm, seed=seed, record=False, checks=False)
    ck = driver.run(scenario, algorithm=algorithm, seed=seed, ckpt=placement,
                    record=True, checks=False)
    detail = {"placement": str(placement)}
    if ck.snapshot is None:
        return Verdict("replay_equivalence", False,
                       {"problems": ["no snapshot taken"], **detail},
                       ck.scenario_name, seed)
    resumed_ok = ck.checksums == base.checksums
    rs = driver.run_restart(ck.snapshot, seed=restart_seed, record=False)
    restarted_ok = rs.checksums == base.checksums
    detail["resumed_matches"] = resumed_ok
    detail["restarted_matches"] = restarted_ok
    return Verdict("replay_equivalence", resumed_ok and restarted_ok, detail,
                   ck.scenario_name, seed)


# --------------------------------------------------------------------------
# Clock skew (blocking-only groups)
# --------------------------------------------------------------------------


def check_clock_skew(trace, scenario="", seed=None) -> Verdict:
    """Members of a group used only by blocking collectives never drift more
    than one count apart at any scheduler step."""
    # A group whose counter is ever bumped at a non-blocking initiation is out
    # of scope: initiations do not synchronize, so members may legally drift.
    nb_steps = {(ev["step"], ev["rank"]) for ev in trace if ev["event"] == "icoll_init"}
    skip = set()
    values: dict = {}
    worst = 0
    offender = None
    for ev in trace:
        if ev["event"] != "seq_inc":
            continue
        label = ev["detail"]["group"]
        if (ev["step"], ev["rank"]) in nb_steps:
            skip.add(label)
            continue
        if label in skip:
            continue
        members = [int(x) for x in label.split(",")]
        values.setdefault(label, {m: 0 for m in members})
        values[label][ev["rank"]] = ev["detail"]["value"]
        spread = max(values[label].values()) - min(values[label].values())
        if spread > worst:
            worst, offender = spread, label
        if spread > 1:
            return Verdict("clock_skew", False,
                           {"group": label, "spread": spread, "at_step": ev["step"]},
                           scenario, seed)
    return Verdict("clock_skew", True, {"max_spread": worst, "group": offender},
                   scenario, seed)
