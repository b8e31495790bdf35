from fractions import Fraction

import numpy as np
import pytest

from conftest import scalar_config
from oracles import evaluate_gain
from edgesched.mdp import policy_evaluate
from edgesched.plant import benchmark_config
from edgesched.sched import (ContractError, SchedAction, SchedModel, SchedState, ServerPipeline,
                             action_from_id, feasible_actions, solve_optimal, transition_dist)
from edgesched.sim import initial_state
from edgesched.suboptimal import (BasePolicy, complexity_report, per_process_value,
                                  per_process_values, suboptimal_action, suboptimal_table)

IDLE_R = ServerPipeline((), 0, 0, (0,))
IDLE_E = ServerPipeline((), 0, 0, ())


def test_uniform_base_idle_two_processes():
    base = BasePolicy(benchmark_config((1, 2)))
    dist = base.distribution(IDLE_R, IDLE_E)
    assert len(dist) == 7
    assert all(v == pytest.approx(1 / 7) for v in dist.values())


def test_uniform_base_busy_and_single():
    cfg = benchmark_config((1, 2))
    base = BasePolicy(cfg)
    busy = base.distribution(ServerPipeline((), 1, 3, (0,)), ServerPipeline((), 2, 4, ()))
    assert busy == {SchedAction(0, 0): 1.0}
    single = BasePolicy(benchmark_config((1,))).distribution(IDLE_R, IDLE_E)
    assert set(single) == {(0, 0), (1, 0), (0, 1)}
    assert sum(single.values()) == pytest.approx(1.0)


def test_static_base_needs_one_process_per_server():
    with pytest.raises(ContractError):
        BasePolicy(benchmark_config((1, 2, 3)), kind="static")
    with pytest.raises(ValueError):
        BasePolicy(benchmark_config((1, 2)), kind="round-robin")


def test_single_process_value_is_exact():
    cfg = benchmark_config((2,), p=0.9, aoi_cap=15)
    model = SchedModel(cfg)
    theta_k, V_k = per_process_value(cfg, 1, tol=1e-9, model=model)
    theta, V = policy_evaluate(model.mdp(), model.mdp().uniform_weights(), tol=1e-9)
    assert theta_k == pytest.approx(theta, abs=1e-8)
    assert np.allclose(V_k.ravel(), V, atol=1e-6)


@pytest.mark.parametrize("kind", ["uniform", "static"])
def test_additivity_against_joint_evaluation(kind):
    tol = 1e-7
    cfg = scalar_config(cap=6)
    model = SchedModel(cfg)
    base = BasePolicy(cfg, kind)
    vals = per_process_values(cfg, base, tol=tol, model=model)
    mdp = model.mdp()
    joint, _ = policy_evaluate(mdp, base.row_weights(model, mdp), tol=tol)
    assert abs(vals.total_theta - joint) <= 2 * tol


def test_per_process_values_monotone_in_aoi():
    cfg = benchmark_config((1, 2), p=0.9, aoi_cap=20)
    vals = per_process_values(cfg)
    for V in vals.values:
        assert np.all(np.diff(V, axis=0) >= -1e-9)


def test_action_is_always_feasible(tiny2):
    vals = per_process_values(tiny2)
    m = vals.model
    for i in range(0, m.num_states, 5):
        s = m.state_of(i)
        assert suboptimal_action(s, vals) in feasible_actions(s, tiny2)


def test_action_matches_table(tiny2):
    vals = per_process_values(tiny2)
    table = suboptimal_table(vals)
    m = vals.model
    for i in range(0, m.num_states, 7):
        assert suboptimal_action(m.state_of(i), vals) == action_from_id(table[i], m.n)


def test_action_is_one_step_lookahead(tiny2):
    vals = per_process_values(tiny2)
    s = SchedState((5, 3), IDLE_R, IDLE_E)
    best = None
    for a in sorted({(0, 0), (1, 0), (2, 0), (0, 1), (0, 2), (1, 2), (2, 1)},
                    key=lambda a: a[0] * 3 + a[1]):
        q = sum(p * sum(vals.value(k + 1, t, nxt.remote, nxt.edge)
                        for k, t in enumerate(nxt.aoi))
                for p, nxt in transition_dist(s, SchedAction(*a), tiny2))
        if best is None or q < best[0] - 1e-12:
            best = (q, a)
    assert suboptimal_action(s, vals) == best[1]


def test_rejects_values_of_other_config(tiny2):
    vals = per_process_values(tiny2)
    with pytest.raises(ContractError):
        suboptimal_action(SchedState((4, 4), IDLE_R, IDLE_E), vals,
                          config=tiny2.replace(p=0.5))


# -- single process: one improvement step against the optimum -----------------

def _single(k, p):
    cfg = benchmark_config((k,), p=p, aoi_cap=20)
    model, res = solve_optimal(cfg, tol=1e-9)
    sub = suboptimal_table(per_process_values(cfg, tol=1e-9, model=model))
    return cfg, model, res, sub


@pytest.mark.parametrize("k,p", [(1, 0.8), (1, 0.9), (1, 1.0), (2, 0.8), (2, 0.9), (2, 1.0),
                                 (3, 0.8), (3, 0.9), (3, 1.0), (4, 0.8)])
def test_single_process_matches_optimal(k, p):
    _, _, res, sub = _single(k, p)
    assert np.array_equal(sub, res.policy)


def test_single_process_matches_optimal_state_for_state_process4():
    _, _, res, sub = _single(4, 0.9)
    assert np.array_equal(sub, res.policy)


@pytest.mark.parametrize("p", [0.9, 1.0])
def test_single_process4_agrees_where_it_matters(p):
    cfg, model, res, sub = _single(4, p)
    mdp = model.mdp()
    K = mdp.kernel.toarray()
    P_sub = np.array([K[mdp.row_of(s, sub[s])] for s in range(model.num_states)])
    gain, _ = evaluate_gain(P_sub, mdp.cost)
    s0 = model.index_of(initial_state(cfg))
    assert gain[s0] == pytest.approx(res.avg_cost, abs=1e-7)
    # recurrent states of the optimal chain
    P_opt = np.array([K[mdp.row_of(s, res.policy[s])] for s in range(model.num_states)])
    reach = np.zeros(model.num_states, dtype=bool)
    reach[s0] = True
    for _ in range(model.num_states):
        reach = reach | (reach @ P_opt > 0)
    pi = np.full(model.num_states, 1.0 / model.num_states) @ np.linalg.matrix_power(P_opt, 4096)
    recurrent = reach & (pi > 1e-12)
    assert recurrent.any()
    assert np.array_equal(sub[recurrent], res.policy[recurrent])


# -- complexity ---------------------------------------------------------------

def test_complexity_single_process_counts_equal():
    r = complexity_report(benchmark_config((1,)))
    assert r.subopt_states == r.full_states


def test_complexity_two_and_three_processes():
    r2 = complexity_report(benchmark_config((1, 2), aoi_cap=45))
    assert Fraction(r2.subopt_states, r2.full_states) == Fraction(90, 2025)
    r3 = complexity_report(benchmark_config((1, 2, 3), aoi_cap=45))
    assert Fraction(r3.subopt_states, r3.full_states) == Fraction(135, 91125)
    assert r3.subopt_states < r3.full_states


def test_complexity_reachable_grid():
    cfg = benchmark_config((1, 2), aoi_cap=45)
    r = complexity_report(cfg, aoi_floor=None)
    assert r.full_states == SchedModel(cfg).num_states
    assert r.subopt_states == (40 + 41) * 91
