"""Exact, deterministic accounting for one run.

Overhead is reported as message and step counts, never wall clock. The cost
model for application messages lives in runtime.collective_cost and is
identical across algorithms, so cross-algorithm differences isolate protocol
traffic: target updates for the collective clock, inserted barriers for the
two-phase baseline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

CSV_FIELDS = (
    "scenario", "algorithm", "seed", "steps", "app_messages", "p2p_messages",
    "protocol_messages", "target_updates_sent", "tpc_barrier_messages",
    "wrapper_invocations", "collectives_completed", "drain_collectives",
    "steps_to_safe_state",
)


@dataclass
class MetricsReport:
    scenario: str
    algorithm: str
    seed: int
    steps: int
    counts: dict
    steps_to_safe_state: int | None = None
    final_seq: dict = field(default_factory=dict)
    final_targets: dict = field(default_factory=dict)
    placement: str = ""

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "algorithm": self.algorithm,
            "seed": self.seed,
            "placement": self.placement,
            "steps": self.steps,
            "counts": dict(sorted(self.counts.items())),
            "steps_to_safe_state": self.steps_to_safe_state,
            "final_seq": self.final_seq,
            "final_targets": self.final_targets,
        }

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def csv_row(self) -> list:
        row = []
        for name in CSV_FIELDS:
            if name in ("scenario", "algorithm", "seed"):
                row.append(getattr(self, name))
            elif name == "steps":
                row.append(self.steps)
            elif name == "steps_to_safe_state":
                row.append("" if self.steps_to_safe_state is None else self.steps_to_safe_state)
            else:
                row.append(self.counts.get(name, 0))
        return row


def collect_metrics(sim, coordinator=None, placement="") -> MetricsReport:
    counts = sim.counters.to_dict()
    steps_to_safe = None
    final_targets = {}
    if coordinator is not None and coordinator.declared:
        steps_to_safe = coordinator.declared_step - coordinator.requested_step
        final_targets = dict(coordinator.final_targets)
    final_seq = {}
    if sim.protocol.name == "cc":
        for st in sim.protocol.states:
            for g, v in st.clock.items():
                if v > final_seq.get(g.label(), 0):
                    final_seq[g.label()] = v
        final_seq = dict(sorted(final_seq.items()))
    return MetricsReport(
        scenario=sim.scenario.name,
        algorithm=sim.protocol.name,
        seed=sim.scheduler.seed,
        steps=sim.step,
        counts=counts,
        steps_to_safe_state=steps_to_safe,
        final_seq=final_seq,
        final_targets=final_targets,
        placement=placement,
    )
