"""Mechanical checks of the structural properties of solved policies.

* monotonicity: the relative value does not decrease when one AoI grows;
* threshold shift: on idle servers, a two-process action ``(k1, k2)`` is
  kept when both ``tau_k1`` and ``tau_k2`` grow by the same amount;
* consistency: an admitted task is never interrupted while it computes.

Every check returns a :class:`CheckReport` with the violation count and the
first few witnesses.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp

from .preempt import PreemptModel, preempt_policy_table, preempt_transition_dist
from .sched import SchedAction, SchedModel, SchedState, action_from_id

MAX_WITNESSES = 10


@dataclass
class CheckReport:
    name: str
    violations: int
    checked: int
    witnesses: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, default=_plain)

    def to_text(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [f"{self.name}: {status} ({self.violations} violations in {self.checked} checks)"]
        lines += [f"  {k}: {v}" for k, v in self.details.items()]
        lines += [f"  witness: {json.dumps(w, default=_plain)}" for w in self.witnesses]
        return "\n".join(lines)


def _plain(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def _state_dict(s) -> dict:
    if isinstance(s, SchedState):
        return {"aoi": list(s.aoi), "remote": list(s.remote.flat()), "edge": list(s.edge.flat())}
    return {"state": repr(s)}


# -- monotonicity ------------------------------------------------------------


def check_monotonicity(value, model: SchedModel | None = None, atol: float = 1e-6) -> CheckReport:
    """Count single-coordinate steps ``tau_k -> tau_k + 1`` that lower the value.

    ``value`` is either an array indexed like ``model`` or a mapping from
    :class:`SchedState` to value (pairs missing from the mapping are skipped).
    Steps between grid neighbours imply the full componentwise order.
    """
    if isinstance(value, Mapping):
        return _monotonicity_map(value, atol)
    if model is None:
        raise ValueError("an array value needs the model that indexes it")
    V = np.asarray(value, dtype=float).reshape(*model.sizes, model.n_pipes)
    violations = checked = 0
    found = []
    for k in range(model.n):
        drop = np.take(V, range(1, model.sizes[k]), axis=k) - \
            np.take(V, range(model.sizes[k] - 1), axis=k)
        checked += drop.size
        bad = np.argwhere(drop < -atol)
        violations += len(bad)
        for idx in bad:
            found.append((float(drop[tuple(idx)]), k, tuple(int(i) for i in idx)))
    found.sort()
    witnesses = []
    for d, k, idx in found[:MAX_WITNESSES]:
        low_grid = list(idx[:-1])
        high_grid = list(low_grid)
        high_grid[k] += 1
        lo = model.state_of(_flat(model, low_grid, idx[-1]))
        hi = model.state_of(_flat(model, high_grid, idx[-1]))
        witnesses.append({"lower": _state_dict(lo), "higher": _state_dict(hi), "drop": d})
    return CheckReport("monotonicity", violations, checked, witnesses)


def _flat(model: SchedModel, offsets, c: int) -> int:
    return sum(o * s for o, s in zip(offsets, model.strides)) * model.n_pipes + c


def _monotonicity_map(value: Mapping, atol: float) -> CheckReport:
    violations = checked = 0
    found = []
    for s, v in value.items():
        for k in range(len(s.aoi)):
            aoi = list(s.aoi)
            aoi[k] += 1
            up = s._replace(aoi=tuple(aoi))
            if up not in value:
                continue
            checked += 1
            drop = value[up] - v
            if drop < -atol:
                violations += 1
                found.append((drop, s, up))
    found.sort(key=lambda t: t[0])
    witnesses = [{"lower": _state_dict(lo), "higher": _state_dict(hi), "drop": float(d)}
                 for d, lo, hi in found[:MAX_WITNESSES]]
    return CheckReport("monotonicity", violations, checked, witnesses)


# -- threshold shift ---------------------------------------------------------


def _as_action(a, n: int) -> SchedAction:
    if isinstance(a, SchedAction):
        return a
    if isinstance(a, tuple):
        return SchedAction(*a)
    return action_from_id(int(a), n)


def check_threshold_shift(policy, model: SchedModel) -> CheckReport:
    """Idle-server shift invariance of two-process actions.

    For each idle-server state with ``pi(s) = (k1, k2)``, ``k1 != k2`` both
    nonzero, the state with ``tau_k1`` and ``tau_k2`` raised by one (within
    the caps) must carry the same action.  Chaining these unit shifts covers
    every shift ``z``, and a single flipped action breaks exactly the unit
    steps that enter or leave it.

    ``policy`` is an action-id array indexed like ``model``, a mapping from
    state to action, or a callable.
    """
    lookup = _policy_lookup(policy, model)
    idle = model.idle_pipe
    violations = checked = 0
    witnesses = []
    grid = model.aoi_grid()
    for g, aoi in enumerate(grid):
        s = SchedState(tuple(int(t) for t in aoi), *model.pipes[idle])
        a = lookup(s)
        if a is None or not (a.to_remote and a.to_edge) or a.to_remote == a.to_edge:
            continue
        k1, k2 = a.to_remote, a.to_edge
        shifted = list(s.aoi)
        shifted[k1 - 1] += 1
        shifted[k2 - 1] += 1
        if shifted[k1 - 1] > model.caps[k1 - 1] or shifted[k2 - 1] > model.caps[k2 - 1]:
            continue
        t = s._replace(aoi=tuple(shifted))
        b = lookup(t)
        if b is None:
            continue
        checked += 1
        if b != a:
            violations += 1
            if len(witnesses) < MAX_WITNESSES:
                witnesses.append({"state": _state_dict(s), "action": list(a),
                                  "shifted": _state_dict(t), "shifted_action": list(b)})
    return CheckReport("threshold_shift", violations, checked, witnesses)


def _policy_lookup(policy, model: SchedModel) -> Callable:
    if isinstance(policy, Mapping):
        return lambda s: (_as_action(policy[s], model.n) if s in policy else None)
    if callable(policy):
        return lambda s: _as_action(policy(s), model.n)
    table = np.asarray(policy)
    return lambda s: action_from_id(int(table[model.index_of(s)]), model.n)


# -- consistency under preemption --------------------------------------------


def _pattern(mdp) -> sp.csr_matrix:
    pat = mdp.kernel.copy()
    pat.data = (pat.data > 0).astype(np.int8)
    pat.eliminate_zeros()
    return pat


def _hits_within(mdp, policy: np.ndarray, bad: np.ndarray, steps: int) -> np.ndarray:
    """``H[s]``: a state where the policy is nonzero is reached from ``s``
    within ``steps`` transitions (``s`` itself counts) while following it."""
    rows = mdp.policy_rows(policy)
    adj = _pattern(mdp)[rows]
    H = bad.copy()
    for _ in range(steps):
        H = bad | (adj @ H.astype(np.int8) > 0)
    return H


def _consistency_tally(model: PreemptModel, policy: np.ndarray, p: float):
    mdp = model.mdp(p)
    rows = mdp.policy_rows(policy)
    adj = _pattern(mdp)[rows]
    bad = policy != 0
    starts = np.flatnonzero(bad)
    proc = model._P.proc
    flagged = np.zeros(model.num_states, dtype=bool)
    for k in range(1, model.n + 1):
        window = proc[k] - 1
        mine = starts[policy[starts] == k]
        if window < 1 or not len(mine):
            continue
        H = _hits_within(mdp, policy, bad, window - 1)
        flagged[mine] = (adj[mine] @ H.astype(np.int8)) > 0
    return np.flatnonzero(flagged), len(starts)


def _consistency_witness(model: PreemptModel, policy: np.ndarray, start: int, only_success: bool):
    s, arr = model.state_of(start)
    k = int(policy[start])
    p = 1.0 if only_success else 0.5
    frontier = [((s, arr), k, [])]
    for epoch in range(1, model._P.proc[k]):
        nxt = []
        for (st, ar), a, path in frontier:
            for _, st2, ar2 in preempt_transition_dist(st, ar, a, model.config, p):
                b = int(policy[model.index_of(st2, ar2)])
                step = path + [{"epoch": epoch, "aoi": list(st2.aoi),
                                "running": list(st2.running), "parked": list(st2.parked),
                                "arrivals": [int(x) for x in ar2], "action": b}]
                if b:
                    return step
                nxt.append(((st2, ar2), 0, step))
        frontier = nxt
    return []


def check_consistency(policy, model: PreemptModel) -> CheckReport:
    """An admitted task ``k`` is left alone for its next ``T_k - 1`` epochs.

    For every state with ``pi(s) = k != 0`` all link-outcome branches are
    followed for ``T_k - 1`` epochs; any nonzero action on the way is a
    violation of the start state.  ``details`` also reports the tally over
    the all-success branch alone.
    """
    table = policy if isinstance(policy, np.ndarray) else preempt_policy_table(model, policy)
    table = np.asarray(table, dtype=np.int64)
    p = model.config.p if model.config.p < 1.0 else 0.5
    flagged, n_starts = _consistency_tally(model, table, p)
    success, _ = _consistency_tally(model, table, 1.0)
    witnesses = []
    for i in flagged[:MAX_WITNESSES]:
        s, arr = model.state_of(i)
        witnesses.append({"start": {"aoi": list(s.aoi), "running": list(s.running),
                                    "parked": list(s.parked), "out": [s.out_id, s.out_extra],
                                    "arrivals": [int(x) for x in arr]},
                          "action": int(table[i]),
                          "path": _consistency_witness(model, table, i, False)})
    return CheckReport("consistency", len(flagged), n_starts, witnesses,
                       {"success_only_violations": int(len(success))})
