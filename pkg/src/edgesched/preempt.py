"""Single-server scheduling with processing preemption (up to two processes).

Fresh status updates reach the server through independent Bernoulli(p)
uplinks every slot, already ``up_delay`` slots old.  At each decision epoch
the scheduler sees which processes have a fresh update waiting and chooses

* ``0``: keep computing the running task (or stay idle);
* ``k``: start a fresh run of process ``k``.  A running task of another
  process is parked (displacing any older parked task); a running task of
  ``k`` itself is cancelled.

A task that finishes moves to the one-slot downlink (``out``) and its
command is applied at the next transition if the downlink succeeds.  The
delivered AoI is ``up_delay + down_delay + T_k + E`` where ``E`` counts the
slots the task spent waiting behind preemptors.

The MDP's decision state pairs a :class:`PreemptState` with the arrival
pattern of the current slot, since admissibility depends on it.
"""

from __future__ import annotations

import csv
import functools
import itertools
from collections import deque
from typing import Callable, Iterable, NamedTuple

import numpy as np

from .mdp import SolveResult, rvia_solve
from .plant import REMOTE, SystemConfig, mse_table
from .sched import ContractError, StateBudgetError, grid_product_kernel


class TaskSlot(NamedTuple):
    proc_id: int = 0
    slots_left: int = 0
    extra_age: int = 0


EMPTY = TaskSlot()


class PreemptState(NamedTuple):
    aoi: tuple
    running: TaskSlot = EMPTY
    parked: TaskSlot = EMPTY
    out_id: int = 0
    out_extra: int = 0

    def machine(self) -> tuple:
        """Everything but the AoI vector."""
        return (self.running, self.parked, self.out_id, self.out_extra)


class PreemptAction(int):
    """``0`` continue, ``k`` admit a fresh update of process ``k``."""

    def __new__(cls, act: int = 0):
        if int(act) not in (0, 1, 2):
            raise ValueError(f"preemption action must be 0, 1 or 2, got {act}")
        return super().__new__(cls, int(act))


class _PParams(NamedTuple):
    n: int
    up_delay: int
    down_delay: int
    proc: tuple  # proc[k], index 0 unused
    loop: tuple  # loop[k] = up + down + proc[k]
    caps: tuple
    extra_cap: tuple  # largest useful extra age per process


@functools.lru_cache(maxsize=64)
def _pparams(config: SystemConfig) -> _PParams:
    if config.n_processes > 2:
        raise ContractError("the preemption model supports at most two processes")
    if config.remote_down_delay != 1:
        raise ContractError("the preemption model needs a one-slot downlink (remote_down_delay=1)")
    up, down = config.remote_up_delay, config.remote_down_delay
    proc = (0, *(p.proc_slots(REMOTE) for p in config.processes))
    loop = (0, *(up + down + t for t in proc[1:]))
    caps = config.caps()
    return _PParams(config.n_processes, up, down, proc, loop, caps,
                    (0, *(c - l for c, l in zip(caps, loop[1:]))))


def _clamp_extra(k: int, extra: int, P: _PParams) -> int:
    # beyond this the delivered age reaches the cap, so larger values act alike
    return min(extra, P.extra_cap[k])


def _check_state(s: PreemptState, P: _PParams):
    if len(s.aoi) != P.n:
        raise ContractError(f"state has {len(s.aoi)} AoI entries for {P.n} processes")
    for slot in (s.running, s.parked):
        if slot.proc_id == 0 and slot != EMPTY:
            raise ContractError(f"empty task slot carries data: {slot}")
        if slot.proc_id and slot.slots_left < 1:
            raise ContractError(f"a held task needs slots left: {slot}")
    if not s.running.proc_id and s.parked.proc_id:
        raise ContractError("a parked task needs a running task")
    if not s.out_id and s.out_extra:
        raise ContractError("empty out slot carries extra age")


def _machine_step(machine: tuple, a: int, down_ok: bool, P: _PParams):
    """``(next machine, resets)``; resets[k-1] is the delivered loop age or 0."""
    run, park, out_id, out_extra = machine
    resets = [0] * P.n
    if out_id and down_ok:
        resets[out_id - 1] = P.loop[out_id] + out_extra
    out_id = out_extra = 0
    if a:
        T = P.proc[a]
        if run.proc_id == a:
            if park.proc_id:
                # slots already spent on the cancelled run delay the parked task further
                spent = T - run.slots_left
                park = park._replace(extra_age=_clamp_extra(park.proc_id, park.extra_age + spent, P))
        elif run.proc_id:
            park = TaskSlot(run.proc_id, run.slots_left,
                            _clamp_extra(run.proc_id, run.extra_age + T, P))
        run = TaskSlot(a, T - 1, 0)
    elif run.proc_id:
        run = run._replace(slots_left=run.slots_left - 1)
    if run.proc_id and run.slots_left == 0:
        out_id, out_extra = run.proc_id, run.extra_age
        run, park = park, EMPTY
    return (run, park, out_id, out_extra), tuple(resets)


def _age(aoi, resets, caps):
    return tuple(min(t + 1, c) if not r else min(r, c)
                 for t, r, c in zip(aoi, resets, caps))


def preempt_transition(s: PreemptState, a, arrive1: bool, arrive2: bool, down_ok: bool,
                       config: SystemConfig) -> PreemptState:
    """One slot: command delivery first, then the action on the compute unit.

    ``arrive1``/``arrive2`` say which fresh updates are at the server now.
    """
    P = _pparams(config)
    a = PreemptAction(a)
    _check_state(s, P)
    arrivals = (bool(arrive1), bool(arrive2))
    if a and (a > P.n or not arrivals[a - 1]):
        raise ContractError(f"action {int(a)} needs a fresh update of process {int(a)}")
    machine, resets = _machine_step(s.machine(), int(a), down_ok, P)
    return PreemptState(_age(s.aoi, resets, P.caps), *machine)


def _arrival_patterns(n: int) -> list:
    return list(itertools.product((False, True), repeat=n)) if n == 2 else \
        [(False, False), (True, False)]


def preempt_actions(arrivals, config: SystemConfig, running: TaskSlot | None = None,
                    allow_preempt: bool = True) -> list:
    """Feasible actions: continue, or admit any process with a fresh update.

    With ``allow_preempt=False`` a busy server (``running`` set) only continues.
    """
    if not allow_preempt and running is not None and running.proc_id:
        return [0]
    n = config.n_processes
    return [0] + [k for k in range(1, n + 1) if arrivals[k - 1]]


@functools.lru_cache(maxsize=None)
def _machine_branches(machine: tuple, a: int, p: float, P: _PParams):
    """``[(prob, next machine, next arrivals, resets)]`` merged over outcomes."""
    out = {}
    down = [(True, p), (False, 1.0 - p)] if machine[2] else [(True, 1.0)]
    for ok, pd in down:
        nxt, resets = _machine_step(machine, a, ok, P)
        for arr in _arrival_patterns(P.n):
            pa = 1.0
            for k in range(P.n):
                pa *= p if arr[k] else 1.0 - p
            prob = pd * pa
            if prob == 0.0:
                continue
            key = (nxt, arr, resets)
            out[key] = out.get(key, 0.0) + prob
    return tuple((prob, *key) for key, prob in out.items())


def preempt_transition_dist(s: PreemptState, arrivals, a, config: SystemConfig,
                            p: float | None = None) -> list:
    """``[(prob, next_state, next_arrivals)]`` with Bernoulli(p) uplinks and downlink."""
    P = _pparams(config)
    a = PreemptAction(a)
    arrivals = tuple(bool(x) for x in arrivals) + (False,) * (2 - len(arrivals))
    if int(a) not in preempt_actions(arrivals, config):
        raise ContractError(f"action {int(a)} is infeasible with arrivals {arrivals}")
    p = config.p if p is None else p
    dist = {}
    for prob, machine, arr, resets in _machine_branches(s.machine(), int(a), p, P):
        key = (PreemptState(_age(s.aoi, resets, P.caps), *machine), arr)
        dist[key] = dist.get(key, 0.0) + prob
    return [(prob, st, arr) for (st, arr), prob in dist.items()]


def preempt_stage_cost(s: PreemptState, config: SystemConfig) -> float:
    return float(sum(mse_table(proc)[t - 1] for proc, t in zip(config.processes, s.aoi)))


def _machine_key(m: tuple, arrivals: tuple) -> tuple:
    run, park, out_id, out_extra = m
    return (*run, *park, out_id, out_extra, *arrivals)


class PreemptModel:
    """Indexed decision states ``(PreemptState, arrivals)`` and their kernel.

    Index ``g * n_configs + c``: ``g`` is the C-order AoI grid index over
    ``[loop_k, cap_k]`` and ``c`` indexes the reachable (machine, arrivals)
    configurations in lexicographic order.
    """

    def __init__(self, config: SystemConfig, max_states: int = 2_000_000,
                 allow_preempt: bool = True):
        self.config = config
        self.max_states = max_states
        self.allow_preempt = allow_preempt
        self._P = P = _pparams(config)
        self.n = P.n
        self.caps = P.caps
        self.floors = tuple(P.loop[1:])
        self.sizes = tuple(c - f + 1 for c, f in zip(self.caps, self.floors))
        self.n_grid = int(np.prod(self.sizes))
        self.strides = tuple(int(np.prod(self.sizes[k + 1:])) for k in range(self.n))
        self.configs = self._enumerate()
        self.config_index = {c: i for i, c in enumerate(self.configs)}
        self.n_configs = len(self.configs)
        self.num_states = self.n_grid * self.n_configs
        self._mdp = {}

    def _enumerate(self) -> list:
        P = self._P
        idle = (EMPTY, EMPTY, 0, 0)
        start = [(idle, arr) for arr in _arrival_patterns(P.n)]
        seen = set(start)
        queue = deque(start)
        while queue:
            m, arr = queue.popleft()
            for a in self.actions(m, arr):
                for _, nm, narr, _ in _machine_branches(m, a, 0.5, P):
                    if (nm, narr) not in seen:
                        seen.add((nm, narr))
                        queue.append((nm, narr))
        return sorted(seen, key=lambda c: _machine_key(*c))

    def actions(self, machine: tuple, arrivals) -> list:
        return preempt_actions(arrivals, self.config, machine[0], self.allow_preempt)

    def index_of(self, s: PreemptState, arrivals) -> int:
        arrivals = tuple(bool(x) for x in arrivals)
        g = sum((t - f) * st for t, f, st in zip(s.aoi, self.floors, self.strides))
        return g * self.n_configs + self.config_index[(s.machine(), arrivals)]

    def state_of(self, index: int) -> tuple:
        g, c = divmod(int(index), self.n_configs)
        aoi = []
        for st, f in zip(self.strides, self.floors):
            q, g = divmod(g, st)
            aoi.append(q + f)
        m, arr = self.configs[c]
        return PreemptState(tuple(aoi), *m), arr

    def aoi_grid(self) -> np.ndarray:
        axes = np.meshgrid(*(np.arange(f, c + 1) for f, c in zip(self.floors, self.caps)),
                           indexing="ij")
        return np.stack([ax.ravel() for ax in axes], axis=1)

    def cost_vector(self) -> np.ndarray:
        grid_cost = np.zeros(self.n_grid)
        grid = self.aoi_grid()
        for k, proc in enumerate(self.config.processes):
            grid_cost += mse_table(proc)[grid[:, k] - 1]
        return np.repeat(grid_cost, self.n_configs)

    def mdp(self, p: float | None = None):
        p = self.config.p if p is None else float(p)
        if self.num_states > self.max_states:
            raise StateBudgetError(self.num_states, self.max_states)
        if p not in self._mdp:
            templates = []
            for c, (m, arr) in enumerate(self.configs):
                for a in self.actions(m, arr):
                    branches = [(prob, self.config_index[(nm, narr)], resets)
                                for prob, nm, narr, resets in _machine_branches(m, a, p, self._P)]
                    templates.append((c, a, branches))
            self._mdp[p] = grid_product_kernel(self.floors, self.caps, range(self.n),
                                               self.n_configs, templates, self.cost_vector())
        return self._mdp[p]

    def slice_indices(self, running: TaskSlot = EMPTY, parked: TaskSlot = EMPTY,
                      out_id: int = 0, out_extra: int = 0, arrivals=None) -> np.ndarray:
        """States with the given machine part (and arrivals, all by default)."""
        m = (running, parked, out_id, out_extra)
        cs = [i for i, (mm, arr) in enumerate(self.configs)
              if mm == m and (arrivals is None or arr == tuple(arrivals))]
        g = np.arange(self.n_grid)
        return (g[:, None] * self.n_configs + np.array(cs, dtype=np.int64)[None, :]).ravel() \
            if cs else np.zeros(0, dtype=np.int64)


def solve_preempt_optimal(config: SystemConfig, tol: float = 1e-7, max_sweeps: int = 100_000,
                          max_states: int = 2_000_000, model: PreemptModel | None = None,
                          allow_preempt: bool = True, **kwargs) -> tuple:
    """Optimal preemption policy by relative value iteration; ``(model, SolveResult)``.

    ``allow_preempt=False`` gives the best policy that never interrupts a task.
    """
    model = model or PreemptModel(config, max_states, allow_preempt)
    result = rvia_solve(model.mdp(config.p), ref_state=0, tol=tol, max_sweeps=max_sweeps, **kwargs)
    return model, result


class NoPreemptPolicy:
    """Never interrupts; an idle server admits the arrived update with the largest MSE."""

    def __init__(self, config: SystemConfig):
        self.config = config
        _pparams(config)

    def __call__(self, s: PreemptState, arrivals) -> int:
        if s.running.proc_id:
            return 0
        ready = [k for k in range(1, self.config.n_processes + 1) if arrivals[k - 1]]
        if not ready:
            return 0
        mse = [mse_table(p)[t - 1] for p, t in zip(self.config.processes, s.aoi)]
        return min(ready, key=lambda k: (-mse[k - 1], k))


def no_preempt_policy(config: SystemConfig) -> NoPreemptPolicy:
    return NoPreemptPolicy(config)


def preempt_policy_table(model: PreemptModel, policy: Callable) -> np.ndarray:
    return np.array([policy(*model.state_of(i)) for i in range(model.num_states)], dtype=np.int64)


def export_preempt_policy_csv(path_or_file, model: PreemptModel, policy: np.ndarray,
                              indices: Iterable[int] | None = None):
    """Rows ``tau_1..tau_N, running, parked, out, arrivals, action``."""
    indices = range(model.num_states) if indices is None else indices
    header = [f"tau_{k}" for k in range(1, model.n + 1)] + \
        ["running", "parked", "out", "arrivals", "action"]

    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in indices:
            s, arr = model.state_of(i)
            w.writerow([*s.aoi, " ".join(map(str, s.running)), " ".join(map(str, s.parked)),
                        f"{s.out_id} {s.out_extra}", " ".join(str(int(x)) for x in arr),
                        int(policy[i])])

    if hasattr(path_or_file, "write"):
        emit(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            emit(fh)
