"""Slot-level Monte Carlo evaluation of scheduling policies.

Link outcomes come from a Philox generator.  Every slot consumes four
uniforms in the fixed order remote-up, edge-up, remote-down, edge-down (the
preemption model reads them as arrival of process 1, arrival of process 2,
downlink); a link succeeds when its uniform is below ``p``.  Policies run
with the same seed therefore see the same outcome stream.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .plant import ProcessSpec, SystemConfig, control_command, estimate_state, mse_table, \
    plant_step
from .preempt import PreemptModel, PreemptState, _pparams, no_preempt_policy, \
    preempt_actions, preempt_transition, solve_preempt_optimal
from .sched import ContractError, SchedModel, SchedState, StaticPolicy, action_from_id, \
    aoi_floors, empty_pipeline, feasible_actions, greedy_action, solve_optimal, transition, \
    _params

Z95 = 1.959963984540054
N_BATCHES = 20
BURN_IN = 0.1


@dataclass
class SimResult:
    avg_mse: float
    per_process_mse: list
    horizon: int
    seed: int
    half_width_95: float
    batch_means: list = field(default_factory=list, repr=False)


def link_uniforms(horizon: int, seed: int) -> np.ndarray:
    """``(horizon, 4)`` uniforms; same seed, same stream."""
    return np.random.Generator(np.random.Philox(seed)).random((horizon, 4))


def replication_seed(seed: int, replication: int) -> int:
    """Deterministic child seed for replication ``r`` of a run seeded ``seed``."""
    return int(np.random.SeedSequence([seed, replication]).generate_state(1, np.uint64)[0])


def _summarise(costs: np.ndarray, horizon: int, seed: int, burn_in: float,
               n_batches: int) -> SimResult:
    kept = costs[int(math.floor(burn_in * horizon)):]
    if len(kept) < n_batches:
        raise ValueError(f"horizon {horizon} leaves fewer than {n_batches} slots after burn-in")
    per = kept.mean(axis=0)
    totals = kept.sum(axis=1)
    batches = np.array([b.mean() for b in np.array_split(totals, n_batches)])
    half = Z95 * batches.std(ddof=1) / math.sqrt(n_batches)
    return SimResult(float(per.sum()), [float(x) for x in per], horizon, seed, float(half),
                     [float(b) for b in batches])


def _check_horizon(horizon: int):
    if int(horizon) != horizon or horizon <= 0:
        raise ValueError(f"horizon must be a positive integer, got {horizon}")


def initial_state(config: SystemConfig) -> SchedState:
    """All AoI at the shorter loop delay, both servers idle."""
    P = _params(config)
    return SchedState(aoi_floors(config), empty_pipeline(P.remote), empty_pipeline(P.edge))


def monte_carlo(policy: Callable, config: SystemConfig, horizon: int, seed: int,
                initial: SchedState | None = None, burn_in: float = BURN_IN,
                n_batches: int = N_BATCHES) -> SimResult:
    """Average MSE of a state-feedback policy over ``horizon`` slots.

    The first ``burn_in`` fraction of slots is discarded; the half-width
    comes from ``n_batches`` batch means.
    """
    _check_horizon(horizon)
    u = link_uniforms(horizon, seed)
    flags = u < config.p
    tables = [mse_table(p) for p in config.processes]
    costs = np.empty((horizon, config.n_processes))
    s = initial or initial_state(config)
    actions = {}
    for t in range(horizon):
        costs[t] = [tab[tau - 1] for tab, tau in zip(tables, s.aoi)]
        a = actions.get(s)
        if a is None:
            try:
                a = policy(s)
            except (KeyError, IndexError) as exc:
                raise ContractError(f"policy undefined at state {s}") from exc
            if a not in feasible_actions(s, config):
                raise ContractError(f"policy chose infeasible action {tuple(a)} at state {s}")
            actions[s] = a
        f = flags[t]
        s = transition(s, a, config, f[0], f[1], f[2], f[3], check=False)
    return _summarise(costs, horizon, seed, burn_in, n_batches)


def preempt_initial_state(config: SystemConfig) -> PreemptState:
    """Both AoI at their loop delay, server idle."""
    P = _pparams(config)
    return PreemptState(tuple(P.loop[1:]))


def monte_carlo_preempt(policy: Callable, config: SystemConfig, horizon: int, seed: int,
                        initial: PreemptState | None = None, burn_in: float = BURN_IN,
                        n_batches: int = N_BATCHES) -> SimResult:
    """Average MSE of a preemption policy ``policy(state, arrivals) -> action``."""
    _check_horizon(horizon)
    u = link_uniforms(horizon, seed)
    flags = u < config.p
    n = config.n_processes
    tables = [mse_table(p) for p in config.processes]
    costs = np.empty((horizon, n))
    s = initial or preempt_initial_state(config)
    for t in range(horizon):
        costs[t] = [tab[tau - 1] for tab, tau in zip(tables, s.aoi)]
        arrivals = (bool(flags[t, 0]), bool(flags[t, 1]) and n > 1)
        a = int(policy(s, arrivals))
        if a not in preempt_actions(arrivals, config):
            raise ContractError(f"policy chose infeasible action {a} at {s} with {arrivals}")
        s = preempt_transition(s, a, arrivals[0], arrivals[1], bool(flags[t, 2]), config)
    return _summarise(costs, horizon, seed, burn_in, n_batches)


def closed_loop_validate(spec: ProcessSpec, forced_aoi: int, steps: int = 1_000_000,
                         seed: int = 0, burn_in: int = 1000) -> tuple:
    """Empirical ``E[trace(x x^T)]`` under a fixed AoI versus ``mse_of_age``.

    The controller applies ``-A x_hat`` where ``x_hat`` predicts the current
    state from the sample taken ``forced_aoi - 1`` slots ago plus the inputs
    applied since, so the closed-loop state is the sum of the last
    ``forced_aoi`` propagated noise terms.
    """
    tau = int(forced_aoi)
    if tau < 1 or tau > spec.aoi_cap:
        raise ValueError(f"forced_aoi must lie in [1, {spec.aoi_cap}]")
    _check_horizon(steps)
    n = spec.dim
    A = spec.dynamics
    w, V = np.linalg.eigh(spec.noise_cov)
    root = V * np.sqrt(np.clip(w, 0.0, None))
    rng = np.random.Generator(np.random.Philox(seed))
    noise = rng.standard_normal((steps + burn_in, n)) @ root.T
    lag = tau - 1
    powers = [np.linalg.matrix_power(A, i) for i in range(tau)]
    xs = [np.zeros(n)] * (lag + 1)   # xs[-1] is x(t)
    us = [np.zeros(n)] * max(lag, 1)  # us[-i] is u(t - i)
    total = 0.0
    for t in range(steps + burn_in):
        x = xs[-1]
        x_hat = estimate_state(spec, xs[-1 - lag], lag) if lag else x.copy()
        for i in range(1, lag + 1):
            x_hat = x_hat + powers[i - 1] @ us[-i]
        u = control_command(spec, x_hat)
        x_next = plant_step(spec, x, u, noise[t])
        if t >= burn_in:
            total += float(x_next @ x_next)
        xs = xs[1:] + [x_next] if lag else [x_next]
        us = us[1:] + [u] if lag else [u]
    empirical = total / steps
    return empirical, float(mse_table(spec)[tau - 1])


# -- policies by name --------------------------------------------------------

POLICY_NAMES = ("optimal", "suboptimal", "greedy", "static")
PREEMPT_POLICY_NAMES = ("preempt", "no-preempt")


class TablePolicy:
    """State-feedback view of an action-id table indexed by ``model``."""

    def __init__(self, model, table: np.ndarray):
        self.model = model
        self.table = np.asarray(table)

    def __call__(self, s: SchedState):
        return action_from_id(int(self.table[self.model.index_of(s)]), self.model.n)


class PreemptTablePolicy:
    def __init__(self, model: PreemptModel, table: np.ndarray):
        self.model = model
        self.table = np.asarray(table)

    def __call__(self, s: PreemptState, arrivals) -> int:
        return int(self.table[self.model.index_of(s, arrivals)])


def make_policy(name: str, config: SystemConfig, model=None, tol: float = 1e-7,
                max_states: int = 2_000_000) -> Callable:
    """Build a named policy for ``config`` (solving or evaluating as needed)."""
    from .suboptimal import SuboptimalPolicy, per_process_values

    if name == "optimal":
        model, result = solve_optimal(config, tol=tol, max_states=max_states, model=model)
        return TablePolicy(model, result.policy)
    if name == "suboptimal":
        model = model or SchedModel(config, max_states)
        return SuboptimalPolicy(per_process_values(config, tol=tol, model=model))
    if name == "greedy":
        return lambda s: greedy_action(s, config)
    if name == "static":
        return StaticPolicy(config)
    if name == "preempt":
        model, result = solve_preempt_optimal(config, tol=tol, max_states=max_states, model=model)
        return PreemptTablePolicy(model, result.policy)
    if name == "no-preempt":
        return no_preempt_policy(config)
    raise ValueError(f"unknown policy {name!r}; choose from "
                     f"{POLICY_NAMES + PREEMPT_POLICY_NAMES}")


@dataclass
class SweepRow:
    policy: str
    p: float
    avg_mse: float
    ci_half_width: float
    horizon: int
    seed: int
    replicates: list = field(default_factory=list, repr=False)


SWEEP_COLUMNS = ("policy_name", "p", "avg_mse", "ci_half_width", "horizon", "seed")


def sweep_p(policies: Sequence[str] | Mapping[str, Callable], config: SystemConfig,
            p_grid: Sequence[float], horizon: int = 40_000, seed: int = 0,
            replications: int = 10, tol: float = 1e-7) -> list:
    """One row per (policy, p), averaging ``replications`` runs.

    ``policies`` is a list of names or a mapping ``name -> factory(config)``.
    Replication ``r`` uses seed ``replication_seed(seed, r)`` for every policy
    (common random numbers).  With several replications the half-width is
    the normal interval over replication means, otherwise the batch-means one.
    """
    grid = [float(p) for p in p_grid]
    for p in grid:
        if not (0.0 < p <= 1.0):
            raise ValueError(f"p must lie in (0, 1], got {p}")
    if replications < 1:
        raise ValueError("replications must be >= 1")
    factories = policies if isinstance(policies, Mapping) else \
        {name: (lambda c, n=name: make_policy(n, c, tol=tol)) for name in policies}
    seeds = [replication_seed(seed, r) for r in range(replications)]
    rows = []
    for p in grid:
        cfg = config.replace(p=p)
        for name, factory in factories.items():
            policy = factory(cfg)
            run = monte_carlo_preempt if name in PREEMPT_POLICY_NAMES else monte_carlo
            results = [run(policy, cfg, horizon, s) for s in seeds]
            values = [r.avg_mse for r in results]
            if replications > 1:
                half = Z95 * float(np.std(values, ddof=1)) / math.sqrt(replications)
            else:
                half = results[0].half_width_95
            rows.append(SweepRow(name, p, float(np.mean(values)), half, horizon, seed, values))
    return rows


def write_sweep_csv(path_or_file, rows: Sequence[SweepRow]):
    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([r.policy, f"{r.p:g}", repr(r.avg_mse), repr(r.ci_half_width),
                        r.horizon, r.seed])

    if hasattr(path_or_file, "write"):
        emit(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            emit(fh)
