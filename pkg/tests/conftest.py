"""Shared scenario builders and manual-driving helpers."""

from ccsim import CheckpointCoordinator, ScenarioProgram, Simulator, make_protocol
from ccsim.scenario import Op


def op_coll(rank, comm="world", kind="barrier", root=None, reduce_op=None, data=None):
    return Op(rank=rank, op="coll", comm=comm, kind=kind, root=root,
              reduce_op=reduce_op, data=data)


def op_icoll(rank, request_id, comm="world", kind="barrier", root=None,
             reduce_op=None, data=None):
    return Op(rank=rank, op="icoll", comm=comm, kind=kind, root=root,
              reduce_op=reduce_op, data=data, request_id=request_id)


def scenario(world_size, comms=None, name="test", preamble=True):
    sc = ScenarioProgram(world_size=world_size, comms=comms or {}, name=name)
    if preamble and comms:
        for cid in sorted(comms):
            for rank in range(world_size):
                sc.programs[rank].append(Op(rank=rank, op="comm_create", new_comm=cid))
    return sc


def build(sc, algorithm="none", seed=0, placement=None, record=True, policy=None):
    """Simulator plus coordinator wired for manual driving."""
    sc.validate()
    sim = Simulator(sc, make_protocol(algorithm, policy), seed=seed,
                    mode="exhaustive-small", record=record)
    coordinator = None
    if algorithm != "none":
        coordinator = CheckpointCoordinator(placement)
        sim.coordinator = coordinator
    return sim, coordinator


def drive(sim, coordinator=None, pick=min, request_when=None, max_steps=100_000):
    """Run the loop with an explicit actor-choice policy.

    ``request_when(sim)`` fires the checkpoint request the first time it
    holds, checked before every step.
    """
    requested = False
    while True:
        if (request_when is not None and not requested
                and coordinator is not None and request_when(sim)):
            coordinator.request_checkpoint(sim)
            requested = True
        enabled = sim.enabled_actors()
        if not enabled:
            if coordinator is not None and coordinator.handle_idle(sim):
                if sim.halted:
                    return sim
                continue
            assert sim.all_finished(), "drive() hit a deadlock"
            return sim
        sim.step_actor(pick(enabled))
        max_steps -= 1
        assert max_steps > 0, "drive() exceeded its step budget"


def drive_held(sim, holds, max_steps=100_000):
    """Step every schedulable actor except ranks held at an op boundary.

    ``holds`` maps rank id to a program counter: that rank is not scheduled
    while sitting at START with pc >= the bound. Returns when only held or
    blocked ranks remain, leaving the runtime at a precise instant.
    """
    from ccsim.runtime import START as START_STAGE

    while True:
        enabled = [
            r for r in sim.enabled_actors()
            if not (r in holds and sim.ranks[r].stage == START_STAGE
                    and sim.ranks[r].pc >= holds[r])
        ]
        if not enabled:
            return sim
        sim.step_actor(min(enabled))
        max_steps -= 1
        assert max_steps > 0, "drive_held() exceeded its step budget"
