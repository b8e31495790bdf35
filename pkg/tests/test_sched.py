import io
import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import scalar_config
from edgesched.plant import ProcessSpec, SystemConfig, loop_delay, mse_of_age, benchmark_config
from edgesched.sched import (ContractError, SchedAction, SchedModel, SchedState, ServerPipeline,
                             StateBudgetError, StaticPolicy, action_from_id, action_id,
                             count_states, default_assignment, enumerate_pipelines,
                             enumerate_states, export_policy_csv, feasible_actions,
                             greedy_action, solve_optimal, stage_cost, transition,
                             transition_dist)

CFG12 = benchmark_config((1, 2), p=0.9, aoi_cap=45)
IDLE_R = ServerPipeline((), 0, 0, (0,))
IDLE_E = ServerPipeline((), 0, 0, ())


def hand_pipeline_pairs(T_r, T_e):
    """Pipeline pairs for remote delays (1, 1) and edge delays (0, 0), by hand.

    Remote: compute idle or (k, d) with 1 <= d <= T_r[k]; the one-slot
    downlink holds a just-finished job, which only coexists with an idle
    unit or a job that entered this slot (d = T_r).  Edge: the job starts
    computing in its sending slot, so d runs 1..T_e[k] - 1.  A process never
    sits in both pipelines.
    """
    ids = list(T_r)
    remote = [(0, 0, 0)] + [(k, d, 0) for k in ids for d in range(1, T_r[k] + 1)]
    remote += [(c, d, j) for j in ids for (c, d) in [(0, 0)] + [(k, T_r[k]) for k in ids]]
    edge = [(0, 0)] + [(k, d) for k in ids for d in range(1, T_e[k])]
    pairs = []
    for (rc, rd, rj), (ec, ed) in itertools.product(remote, edge):
        if ec and ec in (rc, rj):
            continue
        pairs.append(((rc, rd, rj), (ec, ed)))
    return pairs


def test_pipeline_count_oracle():
    T_r = {1: 4, 2: 3}
    T_e = {1: 8, 2: 6}
    oracle = hand_pipeline_pairs(T_r, T_e)
    pipes = enumerate_pipelines(CFG12)
    assert len(pipes) == len(oracle) == 91
    got = {((r.compute_id, r.compute_left, r.down[0]), (e.compute_id, e.compute_left))
           for r, e in pipes}
    assert got == set(oracle)


def test_state_count_product_formula():
    # reachable AoI grid starts at the shorter loop delay: 6 and 5
    assert count_states(CFG12) == (45 - 6 + 1) * (45 - 5 + 1) * 91
    assert count_states(CFG12, aoi_floor=1) == 45 * 45 * 91


def test_hand_enumerated_single_process():
    cfg = scalar_config((1.02,), cap=3, remote_up_delay=0, remote_down_delay=0)
    states = enumerate_states(cfg)
    # remote work (1 slot) leaves no trace; edge work (2 slots) leaves (1, 1)
    expected = [SchedState((t,), IDLE_E, e) for t in (1, 2, 3)
                for e in (IDLE_E, ServerPipeline((), 1, 1, ()))]
    assert states == expected
    assert [s.flat() for s in states] == sorted(s.flat() for s in states)


def test_degenerate_cap_pins_aoi():
    procs = tuple(ProcessSpec(k, np.array([[a]]), np.eye(1), 1, 1, aoi_cap=1)
                  for k, a in ((1, 1.5), (2, 2.0)))
    cfg = SystemConfig(procs, remote_up_delay=0, remote_down_delay=0)
    states = enumerate_states(cfg)
    assert states and all(s.aoi == (1, 1) for s in states)


def test_state_budget():
    with pytest.raises(StateBudgetError, match="149240") as info:
        enumerate_states(CFG12, max_states=1000)
    assert info.value.count == 149240
    with pytest.raises(StateBudgetError):
        solve_optimal(CFG12, max_states=1000)


def test_action_ids_round_trip():
    for n in (1, 2, 4):
        for a1, a2 in itertools.product(range(n + 1), repeat=2):
            a = SchedAction(a1, a2)
            assert action_from_id(action_id(a, n), n) == a


def test_feasible_actions_idle():
    s = SchedState((10, 10), IDLE_R, IDLE_E)
    assert set(feasible_actions(s, CFG12)) == {(0, 0), (1, 0), (2, 0), (0, 1), (0, 2),
                                               (1, 2), (2, 1)}
    assert set(feasible_actions(s, CFG12, allow_idle=False)) == {(1, 2), (2, 1)}


def test_feasible_actions_busy_remote():
    busy = SchedState((10, 10), ServerPipeline((), 1, 3, (0,)), IDLE_E)
    acts = feasible_actions(busy, CFG12)
    assert all(a.to_remote == 0 for a in acts)
    # process 1 is computing remotely, so it cannot go to the edge either
    assert set(acts) == {(0, 0), (0, 2)}
    # one slot before the unit frees, a one-slot uplink delivers just in time
    freeing = SchedState((10, 10), ServerPipeline((), 1, 1, (0,)), IDLE_E)
    assert (1, 0) in feasible_actions(freeing, CFG12)


def test_zero_delay_edge_starts_at_once():
    s = SchedState((10, 10), IDLE_R, IDLE_E)
    nxt = transition(s, SchedAction(0, 2), CFG12)
    assert nxt.edge == ServerPipeline((), 2, 5, ())


def test_pure_aging():
    s = SchedState((44, 45), IDLE_R, IDLE_E)
    for flags in itertools.product((True, False), repeat=4):
        assert transition(s, SchedAction(0, 0), CFG12, *flags) == SchedState((45, 45), IDLE_R,
                                                                              IDLE_E)


def test_remote_completion_resets_to_loop_delay():
    s = SchedState((10, 10), ServerPipeline((), 1, 1, (0,)), IDLE_E)
    s1 = transition(s, SchedAction(0, 0), CFG12)
    assert s1 == SchedState((11, 11), ServerPipeline((), 0, 0, (1,)), IDLE_E)
    s2 = transition(s1, SchedAction(0, 0), CFG12)
    assert s2.aoi == (6, 12)
    lost = transition(s1, SchedAction(0, 0), CFG12, down_ok_r=False)
    assert lost.aoi == (12, 12) and lost.remote == IDLE_R


def test_uplink_failure_drops_job():
    s = SchedState((10, 10), IDLE_R, IDLE_E)
    nxt = transition(s, SchedAction(1, 0), CFG12, up_ok_r=False)
    assert nxt == SchedState((11, 11), IDLE_R, IDLE_E)


def test_full_remote_trace():
    s = SchedState((20, 20), IDLE_R, IDLE_E)
    seq = [transition(s, SchedAction(1, 0), CFG12)]
    for _ in range(5):
        seq.append(transition(seq[-1], SchedAction(0, 0), CFG12))
    assert [x.remote.compute_left for x in seq[:4]] == [4, 3, 2, 1]
    assert seq[4].remote.down == (1,)
    assert seq[5].aoi[0] == loop_delay(CFG12.processes[0], "remote", CFG12) == 6


def test_infeasible_action_rejected():
    busy = SchedState((10, 10), ServerPipeline((), 1, 3, (0,)), IDLE_E)
    with pytest.raises(ContractError):
        transition(busy, SchedAction(2, 0), CFG12)
    with pytest.raises(ContractError):
        transition_dist(busy, SchedAction(2, 0), CFG12)


def test_transition_dist_branch_counts():
    s = SchedState((10, 10), ServerPipeline((), 1, 1, (2,)), IDLE_E)
    dist = transition_dist(s, SchedAction(1, 2), CFG12)
    assert sum(p for p, _ in dist) == pytest.approx(1.0, abs=1e-12)
    assert len(dist) <= 16
    idle = transition_dist(SchedState((10, 10), IDLE_R, IDLE_E), SchedAction(0, 0), CFG12)
    assert len(idle) == 1 and idle[0][0] == 1.0


def test_kernel_rows_are_stochastic():
    cfg = benchmark_config((1, 2), p=0.85, aoi_cap=10)
    mdp = SchedModel(cfg).mdp()
    sums = np.asarray(mdp.kernel.sum(axis=1)).ravel()
    assert np.max(np.abs(sums - 1.0)) < 1e-9
    assert mdp.kernel.min() >= 0.0


def test_stage_cost_examples():
    s = SchedState((1, 1), IDLE_R, IDLE_E)
    assert stage_cost(s, benchmark_config((1, 2), aoi_cap=45)) == pytest.approx(4 + 3)
    cfg = scalar_config((1.02, 1.02), cap=10)
    assert stage_cost(SchedState((3, 1), IDLE_R, IDLE_E), cfg) == pytest.approx(4.12283216)
    capped = SchedState((10, 10), IDLE_R, IDLE_E)
    assert stage_cost(capped, cfg) == pytest.approx(2 * mse_of_age(cfg.processes[0], 10))


def test_static_assignment_rules():
    cfg14 = benchmark_config((1, 4))
    assert default_assignment(cfg14) == {1: "remote", 2: "edge"}
    assert default_assignment(CFG12) == {1: "remote", 2: "edge"}
    pol = StaticPolicy(CFG12)
    assert pol(SchedState((6, 5), IDLE_R, IDLE_E)) == (1, 2)
    busy = SchedState((10, 10), ServerPipeline((), 1, 3, (0,)), IDLE_E)
    assert pol(busy) == (0, 2)
    with pytest.raises(ValueError):
        StaticPolicy(CFG12, {1: "remote"})


def test_greedy_examples():
    # process 2 much staler: it takes remote (loop 5 < 6), process 1 the edge
    assert greedy_action(SchedState((6, 40), IDLE_R, IDLE_E), CFG12) == (2, 1)
    assert greedy_action(SchedState((40, 6), IDLE_R, IDLE_E), CFG12) == (1, 2)
    busy = SchedState((6, 40), ServerPipeline((), 1, 3, (0,)), IDLE_E)
    assert greedy_action(busy, CFG12) == (0, 2)
    # equal MSE: process 1 ranks first and takes the edge (loop 2 < 3)
    twins = scalar_config((1.1, 1.1), cap=10)
    assert greedy_action(SchedState((5, 5), IDLE_R, IDLE_E), twins) == (2, 1)


def test_optimal_equals_static_on_recurrent_states_at_p1():
    cfg = benchmark_config((1, 2), p=1.0, aoi_cap=30)
    model, res = solve_optimal(cfg)
    static = StaticPolicy(cfg)
    s = SchedState(model.floors, IDLE_R, IDLE_E)
    seen = []
    while s not in seen:
        seen.append(s)
        s = transition(s, action_from_id(res.policy[model.index_of(s)], 2), cfg)
    cycle = seen[seen.index(s):]
    assert cycle
    for x in cycle:
        assert action_from_id(res.policy[model.index_of(x)], 2) == static(x)


def test_policy_csv_export():
    cfg = scalar_config(cap=6)
    model, res = solve_optimal(cfg)
    buf = io.StringIO()
    export_policy_csv(buf, model, res.policy, model.slice_indices())
    lines = buf.getvalue().splitlines()
    assert lines[0] == "tau_1,tau_2,remote,edge,a1,a2"
    assert len(lines) == 1 + model.n_grid
    empty = io.StringIO()
    export_policy_csv(empty, model, res.policy, [])
    assert empty.getvalue().splitlines() == [lines[0]]


# -- property checks on random reachable states ------------------------------

MODEL12 = SchedModel(benchmark_config((1, 2), p=0.9, aoi_cap=12))


@settings(max_examples=300, deadline=None)
@given(idx=st.integers(0, MODEL12.num_states - 1), pick=st.integers(0, 10 ** 6),
       flags=st.tuples(*[st.booleans()] * 4))
def test_transition_invariants(idx, pick, flags):
    cfg = MODEL12.config
    s = MODEL12.state_of(idx)
    acts = feasible_actions(s, cfg)
    a = acts[pick % len(acts)]
    nxt = transition(s, a, cfg, *flags)
    MODEL12.index_of(nxt)  # stays inside the enumerated space
    for k, (t, t2) in enumerate(zip(s.aoi, nxt.aoi), start=1):
        proc = cfg.processes[k - 1]
        loops = {loop_delay(proc, srv, cfg) for srv in ("remote", "edge")}
        assert t2 == min(t + 1, proc.aoi_cap) or t2 in loops
    # a job in compute keeps running until its last slot
    for old, new in ((s.remote, nxt.remote), (s.edge, nxt.edge)):
        if old.compute_id and old.compute_left > 1:
            assert (new.compute_id, new.compute_left) == (old.compute_id, old.compute_left - 1)
    ids = {nxt.remote.compute_id, *nxt.remote.up} - {0}
    assert not (ids & ({nxt.edge.compute_id, *nxt.edge.up} - {0}))


@settings(max_examples=200, deadline=None)
@given(idx=st.integers(0, MODEL12.num_states - 1), pick=st.integers(0, 10 ** 6))
def test_transition_dist_invariants(idx, pick):
    s = MODEL12.state_of(idx)
    acts = feasible_actions(s, MODEL12.config)
    dist = transition_dist(s, acts[pick % len(acts)], MODEL12.config)
    assert sum(p for p, _ in dist) == pytest.approx(1.0, abs=1e-9)
    assert all(0.0 < p <= 1.0 for p, _ in dist)
    assert len(dist) <= 16


@settings(max_examples=200, deadline=None)
@given(idx=st.integers(0, MODEL12.num_states - 1), pick=st.integers(0, 10 ** 6))
def test_delivery_resets_exactly_to_loop_delay(idx, pick):
    cfg = MODEL12.config
    s = MODEL12.state_of(idx)
    acts = feasible_actions(s, cfg)
    a = acts[pick % len(acts)]
    nxt = transition(s, a, cfg)
    for server, pipe in (("remote", s.remote), ("edge", s.edge)):
        done = pipe.down[-1] if pipe.down else (pipe.compute_id if pipe.compute_left == 1 else 0)
        if done:
            assert nxt.aoi[done - 1] == loop_delay(cfg.processes[done - 1], server, cfg)
