"""Two-server (remote cloud + edge) scheduling MDP.

Timing convention
-----------------
A status update sent in slot ``t`` to a server with uplink delay ``U``,
processing time ``T`` and downlink delay ``D`` spends slots
``t .. t+U-1`` on the uplink, ``t+U .. t+U+T-1`` in the compute unit and the
next ``D`` slots on the downlink.  Its command is applied at the start of slot
``t + L`` (``L = U + T + D``, the loop delay), where the AoI of that process
becomes ``L``.

The sending slot is the first uplink slot, so a pipeline stores
``max(U - 1, 0)`` uplink stages, the compute unit ``(id, slots_left)`` where
``slots_left`` counts the current slot, and ``D`` downlink stages.  Stage
sequences list the newest job first and the oldest last.

Pipelines follow plain shift-register semantics: the edge admission uses
the edge processing time of the admitted process, and every stage carries
its own server subscript.  This reproduces the loop-delay arithmetic of the
benchmark (6/8 slots for process 1, 5/6 for process 2).
"""

from __future__ import annotations

import csv
import functools
import itertools
from collections import deque
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .mdp import FiniteMdp, SolveResult, rvia_solve
from .plant import EDGE, REMOTE, SERVERS, SystemConfig, loop_delay, mse_table


class ContractError(ValueError):
    """An operation was called outside its precondition."""


class StateBudgetError(MemoryError):
    """The enumerated state space would exceed the configured budget."""

    def __init__(self, count: int, budget: int):
        super().__init__(f"state space has {count} states, budget is {budget}")
        self.count = count
        self.budget = budget


class ServerPipeline(NamedTuple):
    up: tuple = ()
    compute_id: int = 0
    compute_left: int = 0
    down: tuple = ()

    def flat(self) -> tuple:
        return (*self.up, self.compute_id, self.compute_left, *self.down)

    def is_idle(self) -> bool:
        return self.compute_id == 0 and not any(self.up) and not any(self.down)


class SchedState(NamedTuple):
    aoi: tuple
    remote: ServerPipeline
    edge: ServerPipeline

    def flat(self) -> tuple:
        return (*self.aoi, *self.remote.flat(), *self.edge.flat())


class SchedAction(NamedTuple):
    to_remote: int = 0
    to_edge: int = 0


def action_id(a: SchedAction, n: int) -> int:
    return a.to_remote * (n + 1) + a.to_edge


def action_from_id(aid: int, n: int) -> SchedAction:
    aid = int(aid)
    return SchedAction(aid // (n + 1), aid % (n + 1))


class ServerParams(NamedTuple):
    up_delay: int
    down_delay: int
    proc: tuple  # proc[k] = processing slots of process k (index 0 unused)

    @property
    def n_up(self) -> int:
        return max(self.up_delay - 1, 0)


def server_params(config: SystemConfig, server: str) -> ServerParams:
    proc = (0, *(p.proc_slots(server) for p in config.processes))
    return ServerParams(config.up_delay(server), config.down_delay(server), proc)


def empty_pipeline(params: ServerParams) -> ServerPipeline:
    return ServerPipeline((0,) * params.n_up, 0, 0, (0,) * params.down_delay)


def _jobs(pipe: ServerPipeline, params: ServerParams):
    """(process, slots completed) for every job in the pipeline."""
    jobs = [(k, i + 1) for i, k in enumerate(pipe.up) if k]
    if pipe.compute_id:
        k = pipe.compute_id
        jobs.append((k, params.up_delay + params.proc[k] - pipe.compute_left))
    base = params.up_delay
    for i, k in enumerate(pipe.down):
        if k:
            jobs.append((k, base + params.proc[k] + i))
    return jobs


def _place(jobs, params: ServerParams) -> ServerPipeline:
    up = [0] * params.n_up
    down = [0] * params.down_delay
    cid = cleft = 0
    for k, j in jobs:
        T = params.proc[k]
        if j < params.up_delay:
            up[j - 1] = k
        elif j < params.up_delay + T:
            cid, cleft = k, params.up_delay + T - j
        else:
            down[j - params.up_delay - T] = k
    return ServerPipeline(tuple(up), cid, cleft, tuple(down))


def _upstream_ids(pipe: ServerPipeline) -> set:
    ids = {k for k in pipe.up if k}
    if pipe.compute_id:
        ids.add(pipe.compute_id)
    return ids


@functools.lru_cache(maxsize=None)
def can_admit(pipe: ServerPipeline, k: int, params: ServerParams) -> bool:
    """A job for ``k`` sent now would find the compute unit free on arrival."""
    T = params.proc
    return all(j >= T[kk] for kk, j in _jobs(pipe, params) if j < params.up_delay + T[kk])


@functools.lru_cache(maxsize=None)
def advance(pipe: ServerPipeline, inject: int, up_ok: bool, down_ok: bool,
            params: ServerParams):
    """Advance one server by one slot.

    Returns ``(next_pipeline, delivered_process_or_0)``.  An injection whose
    uplink fails never enters; a command whose downlink fails is dropped.
    """
    moved = []
    delivered = 0
    jobs = _jobs(pipe, params)
    if inject and up_ok:
        jobs.append((inject, 0))
    for k, j in jobs:
        if j + 1 == params.up_delay + params.proc[k] + params.down_delay:
            if down_ok:
                delivered = k
        else:
            moved.append((k, j + 1))
    return _place(moved, params), delivered


class _Params(NamedTuple):
    remote: ServerParams
    edge: ServerParams
    n: int
    loop: tuple  # loop[k] = (remote loop delay, edge loop delay)
    caps: tuple


@functools.lru_cache(maxsize=64)
def _params(config: SystemConfig) -> _Params:
    loops = (None, *((loop_delay(p, REMOTE, config), loop_delay(p, EDGE, config))
                     for p in config.processes))
    return _Params(server_params(config, REMOTE), server_params(config, EDGE),
                   config.n_processes, loops, config.caps())


def _pipe_actions(remote: ServerPipeline, edge: ServerPipeline, P: _Params,
                  allow_idle: bool = True) -> list:
    """Feasible actions for a pipeline pair, sorted by action id."""
    busy_r = _upstream_ids(remote)
    busy_e = _upstream_ids(edge)
    to_r = [0] + [k for k in range(1, P.n + 1)
                  if k not in busy_e and can_admit(remote, k, P.remote)]
    to_e = [0] + [k for k in range(1, P.n + 1)
                  if k not in busy_r and can_admit(edge, k, P.edge)]
    acts = [SchedAction(a1, a2) for a1 in to_r for a2 in to_e if a1 != a2 or a1 == 0]
    if not allow_idle:
        busiest = max((a1 > 0) + (a2 > 0) for a1, a2 in acts)
        acts = [a for a in acts if (a[0] > 0) + (a[1] > 0) == busiest]
    return acts


def feasible_actions(s: SchedState, config: SystemConfig, allow_idle: bool = True) -> list:
    """Actions whose jobs reach a free compute unit; (0, 0) is always included.

    A process whose update is still on the uplink or in the compute unit of
    one server cannot be sent to the other server, so the same process is
    never computed on both servers at once.

    ``allow_idle=False`` keeps only the actions that send as many updates as
    possible (the strict action space, where a free server always gets one).
    """
    return _pipe_actions(s.remote, s.edge, _params(config), allow_idle)


def _pipes_step(remote, edge, a: SchedAction, flags, P: _Params):
    up_r, up_e, down_r, down_e = flags
    nr, dr = advance(remote, a.to_remote, up_r, down_r, P.remote)
    ne, de = advance(edge, a.to_edge, up_e, down_e, P.edge)
    resets = [0] * (P.n + 1)
    if dr:
        resets[dr] = P.loop[dr][0]
    if de:
        resets[de] = P.loop[de][1] if not resets[de] else min(resets[de], P.loop[de][1])
    return nr, ne, tuple(resets[1:])


def _age(aoi, resets, caps):
    return tuple(min(t + 1, c) if not r else min(r, c)
                 for t, r, c in zip(aoi, resets, caps))


def transition(s: SchedState, a: SchedAction, config: SystemConfig, up_ok_r: bool = True,
               up_ok_e: bool = True, down_ok_r: bool = True, down_ok_e: bool = True,
               check: bool = True) -> SchedState:
    """Deterministic next state for one realisation of the four link outcomes."""
    P = _params(config)
    if check and a not in _pipe_actions(s.remote, s.edge, P):
        raise ContractError(f"action {tuple(a)} is infeasible in state {s}")
    nr, ne, resets = _pipes_step(s.remote, s.edge, a, (up_ok_r, up_ok_e, down_ok_r, down_ok_e), P)
    return SchedState(_age(s.aoi, resets, P.caps), nr, ne)


def _active_links(remote, edge, a: SchedAction, P: _Params):
    """Which of (up_r, up_e, down_r, down_e) can influence the outcome."""
    def delivering(pipe, inject, params):
        L = lambda k: params.up_delay + params.proc[k] + params.down_delay
        if any(j + 1 == L(k) for k, j in _jobs(pipe, params)):
            return True
        return bool(inject) and L(inject) == 1

    return (bool(a.to_remote), bool(a.to_edge),
            delivering(remote, a.to_remote, P.remote),
            delivering(edge, a.to_edge, P.edge))


@functools.lru_cache(maxsize=None)
def _pipe_branches(remote, edge, a: SchedAction, p: float, P: _Params):
    """Merged outcome distribution ``[(prob, remote', edge', resets)]``."""
    active = _active_links(remote, edge, a, P)
    idx = [i for i, on in enumerate(active) if on]
    out = {}
    for bits in itertools.product((True, False), repeat=len(idx)):
        prob = 1.0
        for b in bits:
            prob *= p if b else 1.0 - p
        if prob == 0.0:
            continue
        flags = [True] * 4
        for i, b in zip(idx, bits):
            flags[i] = b
        key = _pipes_step(remote, edge, a, tuple(flags), P)
        out[key] = out.get(key, 0.0) + prob
    return tuple((prob, *key) for key, prob in out.items())


def transition_dist(s: SchedState, a: SchedAction, config: SystemConfig,
                    p: float | None = None) -> list:
    """``[(prob, next_state)]`` with independent Bernoulli(p) links."""
    P = _params(config)
    if a not in _pipe_actions(s.remote, s.edge, P):
        raise ContractError(f"action {tuple(a)} is infeasible in state {s}")
    p = config.p if p is None else p
    dist = {}
    for prob, nr, ne, resets in _pipe_branches(s.remote, s.edge, a, p, P):
        nxt = SchedState(_age(s.aoi, resets, P.caps), nr, ne)
        dist[nxt] = dist.get(nxt, 0.0) + prob
    return sorted(((prob, nxt) for nxt, prob in dist.items()), key=lambda t: t[1].flat())


def stage_cost(s: SchedState, config: SystemConfig) -> float:
    return float(sum(mse_table(proc)[t - 1] for proc, t in zip(config.processes, s.aoi)))


def enumerate_pipelines(config: SystemConfig) -> list:
    """Reachable (remote, edge) pipeline pairs in canonical order."""
    P = _params(config)
    start = (empty_pipeline(P.remote), empty_pipeline(P.edge))
    seen = {start}
    queue = deque([start])
    all_flags = list(itertools.product((True, False), repeat=4))
    while queue:
        remote, edge = queue.popleft()
        for a in _pipe_actions(remote, edge, P):
            for flags in all_flags:
                nr, ne, _ = _pipes_step(remote, edge, a, flags, P)
                if (nr, ne) not in seen:
                    seen.add((nr, ne))
                    queue.append((nr, ne))
    return sorted(seen, key=lambda rc: (*rc[0].flat(), *rc[1].flat()))


def aoi_floors(config: SystemConfig) -> tuple:
    """Smallest reachable AoI per process: its shorter loop delay."""
    return tuple(min(loop_delay(p, REMOTE, config), loop_delay(p, EDGE, config))
                 for p in config.processes)


def _floors(config: SystemConfig, aoi_floor: int | None) -> tuple:
    return aoi_floors(config) if aoi_floor is None else (int(aoi_floor),) * config.n_processes


def _grid_sizes(config: SystemConfig, aoi_floor: int | None = None) -> tuple:
    return tuple(c - f + 1 for c, f in zip(config.caps(), _floors(config, aoi_floor)))


def count_states(config: SystemConfig, aoi_floor: int | None = None) -> int:
    """Joint state count; ``aoi_floor=1`` counts the nominal AoI range ``[1, cap]``."""
    return int(np.prod(_grid_sizes(config, aoi_floor))) * len(enumerate_pipelines(config))


def enumerate_states(config: SystemConfig, max_states: int = 2_000_000,
                     aoi_floor: int | None = None) -> list:
    """Every state in canonical (lexicographic flattened-tuple) order.

    AoI coordinates start at each process's shorter loop delay unless
    ``aoi_floor`` fixes a common lower bound.
    """
    pipes = enumerate_pipelines(config)
    count = int(np.prod(_grid_sizes(config, aoi_floor))) * len(pipes)
    if count > max_states:
        raise StateBudgetError(count, max_states)
    grids = itertools.product(*(range(f, c + 1)
                                for f, c in zip(_floors(config, aoi_floor), config.caps())))
    return [SchedState(tau, r, e) for tau in grids for r, e in pipes]


def grid_product_kernel(floors: Sequence[int], caps: Sequence[int], axes: Sequence[int],
                        n_configs: int, templates: list, cost: np.ndarray) -> FiniteMdp:
    """Sparse kernel on ``AoI grid x configurations`` from per-configuration templates.

    ``templates`` lists ``(config index, action id, branches)`` grouped by
    configuration with increasing action ids; each branch is
    ``(prob, next config index, resets)`` where ``resets[axes[i]]`` is the
    delivered loop age of the ``i``-th grid axis (0 if nothing arrives).
    AoI becomes ``min(reset, cap)`` on a delivery and ``min(tau + 1, cap)`` otherwise.  State index is
    ``g * n_configs + c`` with ``g`` the C-order grid index.
    """
    sizes = [c - f + 1 for f, c in zip(floors, caps)]
    strides = [int(np.prod(sizes[i + 1:])) for i in range(len(sizes))]
    n_grid = int(np.prod(sizes))
    offsets = np.stack(np.meshgrid(*(np.arange(n) for n in sizes), indexing="ij"),
                       axis=-1).reshape(n_grid, len(sizes))
    maps = {}

    def axis_map(i, reset):
        tau = np.arange(floors[i], caps[i] + 1)
        nxt = np.minimum(tau + 1, caps[i])
        if reset:
            nxt = np.full_like(nxt, min(reset, caps[i]))
        return nxt - floors[i]

    def grid_after(resets):
        key = tuple(resets[k] for k in axes)
        if key not in maps:
            out = np.zeros(n_grid, dtype=np.int64)
            for i, r in enumerate(key):
                out += axis_map(i, r)[offsets[:, i]] * strides[i]
            maps[key] = out
        return maps[key]

    n_t = len(templates)
    g = np.arange(n_grid, dtype=np.int64)
    rows, cols, vals = [], [], []
    for t, (_, _, branches) in enumerate(templates):
        r = g * n_t + t
        for prob, c2, resets in branches:
            rows.append(r)
            cols.append(grid_after(resets) * n_configs + c2)
            vals.append(np.full(n_grid, prob))
    kernel = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_grid * n_t, n_grid * n_configs),
    )
    t_cfg = np.array([c for c, _, _ in templates], dtype=np.int64)
    t_act = np.array([a for _, a, _ in templates], dtype=np.int64)
    row_state = (g[:, None] * n_configs + t_cfg[None, :]).ravel()
    row_action = np.tile(t_act, n_grid)
    return FiniteMdp(kernel, row_state, row_action, cost)


class SchedModel:
    """Indexed state space and sparse kernel of the scheduling MDP.

    State index ``g * n_pipes + c`` where ``g`` is the C-order index of the
    AoI vector over ``[floor_1, cap_1] x ... x [floor_N, cap_N]`` and ``c`` the
    index of the pipeline pair; this is the lexicographic order of flattened
    states.  AoI never drops below a process's shorter loop delay once the
    system starts there, so lower values are left out.
    """

    def __init__(self, config: SystemConfig, max_states: int = 2_000_000,
                 allow_idle: bool = True, aoi_floor: int | None = None):
        self.config = config
        self.allow_idle = allow_idle
        self.max_states = max_states
        self._P = _params(config)
        self.n = config.n_processes
        self.caps = config.caps()
        self.floors = _floors(config, aoi_floor)
        self.sizes = _grid_sizes(config, aoi_floor)
        self.pipes = enumerate_pipelines(config)
        self.pipe_index = {rc: i for i, rc in enumerate(self.pipes)}
        self.n_pipes = len(self.pipes)
        self.n_grid = int(np.prod(self.sizes))
        self.num_states = self.n_grid * self.n_pipes
        self.strides = tuple(int(np.prod(self.sizes[k + 1:])) for k in range(self.n))
        self.pipe_actions = [_pipe_actions(r, e, self._P, allow_idle) for r, e in self.pipes]
        self.idle_pipe = self.pipe_index[(empty_pipeline(self._P.remote),
                                          empty_pipeline(self._P.edge))]
        self._mdp = {}

    # -- indexing ----------------------------------------------------------

    def grid_index(self, aoi) -> int:
        return sum((t - f) * s for t, f, s in zip(aoi, self.floors, self.strides))

    def index_of(self, s: SchedState) -> int:
        return self.grid_index(s.aoi) * self.n_pipes + self.pipe_index[(s.remote, s.edge)]

    def aoi_grid(self) -> np.ndarray:
        """``(n_grid, N)`` array of AoI vectors in grid order."""
        axes = np.meshgrid(*(np.arange(f, c + 1) for f, c in zip(self.floors, self.caps)),
                           indexing="ij")
        return np.stack([ax.ravel() for ax in axes], axis=1)

    def state_of(self, index: int) -> SchedState:
        g, c = divmod(int(index), self.n_pipes)
        aoi = []
        for s, f in zip(self.strides, self.floors):
            q, g = divmod(g, s)
            aoi.append(q + f)
        r, e = self.pipes[c]
        return SchedState(tuple(aoi), r, e)

    def states(self) -> list:
        return [self.state_of(i) for i in range(self.num_states)]

    def cost_vector(self) -> np.ndarray:
        grid_cost = np.zeros(self.n_grid)
        grid = self.aoi_grid()
        for k, proc in enumerate(self.config.processes):
            grid_cost += mse_table(proc)[grid[:, k] - 1]
        return np.repeat(grid_cost, self.n_pipes)

    # -- kernel ------------------------------------------------------------

    def _kernel(self, axes: Sequence[int], p: float, cost: np.ndarray) -> FiniteMdp:
        """Kernel over ``AoI(axes) x pipelines``; ``axes`` are 0-based process indices."""
        P = self._P
        templates = []
        for c, (remote, edge) in enumerate(self.pipes):
            for a in self.pipe_actions[c]:
                branches = [(prob, self.pipe_index[(nr, ne)], resets)
                            for prob, nr, ne, resets in _pipe_branches(remote, edge, a, p, P)]
                templates.append((c, action_id(a, self.n), branches))
        return grid_product_kernel([self.floors[k] for k in axes], [self.caps[k] for k in axes],
                                   list(axes), self.n_pipes, templates, cost)

    def mdp(self, p: float | None = None) -> FiniteMdp:
        """Sparse FiniteMdp for success probability ``p`` (config's by default)."""
        p = self.config.p if p is None else float(p)
        if self.num_states > self.max_states:
            raise StateBudgetError(self.num_states, self.max_states)
        if p not in self._mdp:
            self._mdp[p] = self._kernel(range(self.n), p, self.cost_vector())
        return self._mdp[p]

    def marginal_mdp(self, k: int, p: float | None = None) -> FiniteMdp:
        """Chain of ``(tau_k, pipelines)`` for process ``k`` (1-based).

        Pipelines and actions do not depend on AoI, so this is the exact
        marginal of the joint chain under any policy that only looks at the
        pipelines; its stage cost is process ``k``'s MSE.
        """
        p = self.config.p if p is None else float(p)
        idx = k - 1
        table = mse_table(self.config.process(k))[self.floors[idx] - 1:]
        return self._kernel([idx], p, np.repeat(table, self.n_pipes))

    # -- slices ------------------------------------------------------------

    def slice_indices(self, remote: ServerPipeline | None = None,
                      edge: ServerPipeline | None = None,
                      aoi_sum: int | None = None) -> np.ndarray:
        """Indices of states whose pipelines match, optionally with fixed AoI sum."""
        if remote is None and edge is None:
            remote = empty_pipeline(self._P.remote)
            edge = empty_pipeline(self._P.edge)
        cs = [c for c, (r, e) in enumerate(self.pipes)
              if (remote is None or r == remote) and (edge is None or e == edge)]
        grid = np.arange(self.n_grid)
        if aoi_sum is not None:
            grid = grid[self.aoi_grid().sum(axis=1) == aoi_sum]
        return (grid[:, None] * self.n_pipes + np.array(cs, dtype=np.int64)[None, :]).ravel() \
            if cs else np.zeros(0, dtype=np.int64)


def solve_optimal(config: SystemConfig, tol: float = 1e-7, max_sweeps: int = 100_000,
                  max_states: int = 2_000_000, model: SchedModel | None = None,
                  allow_idle: bool = True, **kwargs) -> tuple:
    """Optimal average-cost policy; returns ``(model, SolveResult)``."""
    model = model or SchedModel(config, max_states, allow_idle)
    if model.num_states > max_states:
        raise StateBudgetError(model.num_states, max_states)
    mdp = model.mdp(config.p)
    result = rvia_solve(mdp, ref_state=0, tol=tol, max_sweeps=max_sweeps, **kwargs)
    return model, result


# -- heuristic policies ------------------------------------------------------


def default_assignment(config: SystemConfig) -> dict:
    """Each process to its loop-delay-minimising server (remote on ties).

    When two processes want the same server, they are taken in id order:
    the first keeps its preferred server and the next one is moved to the
    server still unclaimed; with every server claimed, later processes keep
    their preference and share it.
    """
    claimed = set()
    out = {}
    for proc in config.processes:
        r, e = loop_delay(proc, REMOTE, config), loop_delay(proc, EDGE, config)
        pref = REMOTE if r <= e else EDGE
        other = EDGE if pref == REMOTE else REMOTE
        if pref in claimed and other not in claimed:
            pref = other
        claimed.add(pref)
        out[proc.id] = pref
    return out


def _mse_now(s: SchedState, config: SystemConfig):
    return [mse_table(p)[t - 1] for p, t in zip(config.processes, s.aoi)]


def _by_priority(ids, mse):
    return sorted(ids, key=lambda k: (-mse[k - 1], k))


class StaticPolicy:
    """Fixed process-to-server assignment.

    Each server receives an update from one of its assigned processes whenever
    that send is feasible; with several processes sharing a server the one
    with the largest current MSE goes first.
    """

    def __init__(self, config: SystemConfig, assignment: dict | None = None):
        self.config = config
        self.assignment = dict(assignment or default_assignment(config))
        if set(self.assignment) != {p.id for p in config.processes}:
            raise ValueError("assignment must cover every process exactly once")
        if not set(self.assignment.values()) <= set(SERVERS):
            raise ValueError(f"servers must be among {SERVERS}")

    def __call__(self, s: SchedState) -> SchedAction:
        feasible = set(feasible_actions(s, self.config))
        mse = _mse_now(s, self.config)
        pick = {}
        for server in SERVERS:
            ids = [k for k, srv in self.assignment.items() if srv == server]
            for k in _by_priority(ids, mse):
                a = SchedAction(k, 0) if server == REMOTE else SchedAction(0, k)
                if a in feasible:
                    pick[server] = k
                    break
        return SchedAction(pick.get(REMOTE, 0), pick.get(EDGE, 0))


def static_policy(config: SystemConfig, assignment: dict | None = None) -> StaticPolicy:
    return StaticPolicy(config, assignment)


def greedy_action(s: SchedState, config: SystemConfig) -> SchedAction:
    """Rank by current MSE; the top process takes its best feasible server,
    the runner-up the other one if it can."""
    P = _params(config)
    feasible = set(_pipe_actions(s.remote, s.edge, P))
    mse = _mse_now(s, config)
    ranked = _by_priority(range(1, P.n + 1), mse)
    first = ranked[0]
    options = [(P.loop[first][0], 0, SchedAction(first, 0)),
               (P.loop[first][1], 1, SchedAction(0, first))]
    options = [o for o in sorted(options) if o[2] in feasible]
    if not options:
        return SchedAction(0, 0)
    a = options[0][2]
    if len(ranked) > 1:
        second = ranked[1]
        both = SchedAction(a.to_remote or second, a.to_edge or second)
        if both in feasible:
            a = both
    return a


def policy_table(model: SchedModel, policy: Callable[[SchedState], SchedAction]) -> np.ndarray:
    """Action id per state index for a state-feedback policy."""
    return np.array([action_id(policy(model.state_of(i)), model.n)
                     for i in range(model.num_states)], dtype=np.int64)


def export_policy_csv(path_or_file, model: SchedModel, policy: np.ndarray,
                      indices: Iterable[int] | None = None):
    """Write ``tau_1..tau_N, remote, edge, a1, a2`` rows for the given states."""
    indices = range(model.num_states) if indices is None else indices
    header = [f"tau_{k}" for k in range(1, model.n + 1)] + ["remote", "edge", "a1", "a2"]

    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in indices:
            s = model.state_of(i)
            a = action_from_id(int(policy[i]), model.n)
            w.writerow([*s.aoi, " ".join(map(str, s.remote.flat())),
                        " ".join(map(str, s.edge.flat())), a.to_remote, a.to_edge])

    if hasattr(path_or_file, "write"):
        emit(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            emit(fh)
