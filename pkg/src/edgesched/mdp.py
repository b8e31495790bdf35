"""Finite average-cost MDPs and their solvers.

A :class:`FiniteMdp` stores one sparse row per feasible (state, action) pair.
Rows are grouped by state in increasing state order, and within a state by
increasing action id, so "first minimiser" equals "lexicographically smallest
action id" everywhere below.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

PROB_ATOL = 1e-9


class KernelError(ValueError):
    """Malformed transition kernel or cost vector."""


class IterationLimitError(RuntimeError):
    """Raised when an iterative solver hits its sweep limit."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} sweeps)")
        self.residual = residual
        self.iterations = iterations


@dataclass
class FiniteMdp:
    kernel: sp.csr_matrix
    row_state: np.ndarray
    row_action: np.ndarray
    cost: np.ndarray
    validate: bool = True
    state_ptr: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.kernel = sp.csr_matrix(self.kernel, dtype=float)
        self.row_state = np.asarray(self.row_state, dtype=np.int64)
        self.row_action = np.asarray(self.row_action, dtype=np.int64)
        self.cost = np.asarray(self.cost, dtype=float)
        n = self.num_states
        if self.kernel.shape != (len(self.row_state), n):
            raise KernelError(
                f"kernel shape {self.kernel.shape} does not match "
                f"{len(self.row_state)} rows x {n} states"
            )
        if len(self.row_action) != len(self.row_state):
            raise KernelError("row_state and row_action lengths differ")
        if len(self.row_state) and np.any(np.diff(self.row_state) < 0):
            raise KernelError("rows must be grouped by non-decreasing state index")
        counts = np.bincount(self.row_state, minlength=n)
        if len(counts) > n or np.any(counts == 0):
            raise KernelError("every state needs at least one action row")
        self.state_ptr = np.concatenate(([0], np.cumsum(counts)))
        same = self.row_state[1:] == self.row_state[:-1]
        if np.any(self.row_action[1:][same] <= self.row_action[:-1][same]):
            raise KernelError("action ids must be strictly increasing within a state")
        if self.validate:
            self.check()

    @property
    def num_states(self) -> int:
        return len(self.cost)

    @property
    def num_rows(self) -> int:
        return len(self.row_state)

    def check(self):
        data = self.kernel.data
        if np.any(data < -PROB_ATOL) or np.any(data > 1 + PROB_ATOL):
            raise KernelError("transition probabilities must lie in [0, 1]")
        sums = np.asarray(self.kernel.sum(axis=1)).ravel()
        bad = np.flatnonzero(np.abs(sums - 1.0) > PROB_ATOL)
        if len(bad):
            r = bad[0]
            raise KernelError(
                f"row for state {self.row_state[r]}, action {self.row_action[r]} "
                f"sums to {sums[r]!r}"
            )
        if not np.all(np.isfinite(self.cost)) or np.any(self.cost < 0):
            raise KernelError("stage costs must be finite and non-negative")

    @classmethod
    def from_functions(cls, num_states: int,
                       actions_of: Callable[[int], Sequence[int]],
                       transition: Callable[[int, int], Iterable[tuple]],
                       stage_cost: Callable[[int], float]) -> "FiniteMdp":
        """Build from per-state callables; fine for small models."""
        rows, cols, vals, rs, ra = [], [], [], [], []
        r = 0
        for s in range(num_states):
            actions = sorted(actions_of(s))
            if not actions:
                raise KernelError(f"state {s} has no actions")
            for a in actions:
                for nxt, prob in transition(s, a):
                    rows.append(r)
                    cols.append(nxt)
                    vals.append(prob)
                rs.append(s)
                ra.append(a)
                r += 1
        kernel = sp.csr_matrix((vals, (rows, cols)), shape=(r, num_states))
        cost = np.array([stage_cost(s) for s in range(num_states)], dtype=float)
        return cls(kernel, np.array(rs), np.array(ra), cost)

    def actions_of(self, s: int) -> np.ndarray:
        return self.row_action[self.state_ptr[s]:self.state_ptr[s + 1]]

    def row_of(self, s: int, action: int) -> int:
        lo, hi = self.state_ptr[s], self.state_ptr[s + 1]
        hit = np.flatnonzero(self.row_action[lo:hi] == action)
        if not len(hit):
            raise KeyError(f"action {action} is not feasible in state {s}")
        return int(lo + hit[0])

    # -- vectorised helpers ------------------------------------------------

    def q_values(self, value: np.ndarray) -> np.ndarray:
        """Expected next-state value for every row (stage cost excluded)."""
        return self.kernel @ value

    def row_min(self, q: np.ndarray) -> np.ndarray:
        return np.minimum.reduceat(q, self.state_ptr[:-1])

    def row_argmin(self, q: np.ndarray) -> np.ndarray:
        """Row index of the first minimiser in each state."""
        best = self.row_min(q)
        hits = np.flatnonzero(q <= best[self.row_state])
        _, first = np.unique(self.row_state[hits], return_index=True)
        return hits[first]

    def policy_rows(self, policy) -> np.ndarray:
        """Translate a deterministic policy (action id per state) into rows."""
        actions = np.asarray(policy, dtype=np.int64)
        if actions.shape != (self.num_states,):
            raise ValueError("deterministic policy needs one action per state")
        match = self.row_action == actions[self.row_state]
        rows = np.flatnonzero(match)
        if len(rows) != self.num_states:
            missing = np.setdiff1d(np.arange(self.num_states), self.row_state[rows])
            raise ValueError(f"policy action infeasible in state {int(missing[0])}")
        return rows

    def policy_matrix(self, policy) -> sp.csr_matrix:
        """State-to-state kernel of a deterministic or randomised policy.

        ``policy`` is an int array (action id per state), a float array of
        per-row weights, or a mapping ``state -> action`` /
        ``state -> {action: prob}``.
        """
        weights = self.row_weights(policy)
        mix = sp.csr_matrix((weights, (self.row_state, np.arange(self.num_rows))),
                            shape=(self.num_states, self.num_rows))
        return sp.csr_matrix(mix @ self.kernel)

    def row_weights(self, policy) -> np.ndarray:
        if isinstance(policy, Mapping):
            weights = np.zeros(self.num_rows)
            for s in range(self.num_states):
                choice = policy[s]
                if isinstance(choice, Mapping):
                    for a, prob in choice.items():
                        weights[self.row_of(s, a)] += prob
                else:
                    weights[self.row_of(s, choice)] = 1.0
        else:
            arr = np.asarray(policy)
            if arr.shape == (self.num_rows,) and np.issubdtype(arr.dtype, np.floating):
                weights = arr.astype(float)
            else:
                weights = np.zeros(self.num_rows)
                weights[self.policy_rows(arr)] = 1.0
        per_state = np.bincount(self.row_state, weights=weights, minlength=self.num_states)
        if np.any(np.abs(per_state - 1.0) > PROB_ATOL) or np.any(weights < 0):
            raise ValueError("policy weights must form a distribution in every state")
        return weights

    def uniform_weights(self) -> np.ndarray:
        counts = np.diff(self.state_ptr)
        return 1.0 / counts[self.row_state]


@dataclass
class SolveResult:
    avg_cost: float
    value: np.ndarray
    policy: np.ndarray
    iterations: int
    residual: float
    ref_state: int = 0

    def to_json(self, path, state_keys: Sequence | None = None):
        """Debug dump of ``(theta, V, policy)`` keyed by serialised states."""
        keys = state_keys if state_keys is not None else range(len(self.value))
        payload = {
            "avg_cost": self.avg_cost,
            "iterations": self.iterations,
            "residual": self.residual,
            "ref_state": self.ref_state,
            "states": {
                json.dumps(_plain(k)): {"value": float(v), "action": _plain(a)}
                for k, v, a in zip(keys, self.value, self.policy)
            },
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1)


def _plain(obj):
    if isinstance(obj, (tuple, list)):
        return [_plain(o) for o in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _relative_iteration(step, n: int, ref_state: int, tol: float, max_sweeps: int,
                        damping: float, v0):
    """Shared loop of relative value iteration.

    ``step(V)`` returns ``T V``.  The damped update
    ``V <- V + damping (T V - V)`` has the same fixed point as ``T`` and
    removes the oscillation of periodic chains.
    """
    if not (0.0 < damping <= 1.0):
        raise ValueError("damping must lie in (0, 1]")
    if tol <= 0:
        raise ValueError("tol must be positive")
    V = np.zeros(n) if v0 is None else np.array(v0, dtype=float)
    V -= V[ref_state]
    span = np.inf
    for sweep in range(1, max_sweeps + 1):
        TV = step(V)
        diff = TV - V
        hi, lo = diff.max(), diff.min()
        span = hi - lo
        if span <= tol:
            return V, 0.5 * (hi + lo), sweep, span
        V = V + damping * diff
        V -= V[ref_state]
    raise IterationLimitError("relative value iteration did not converge", span, max_sweeps)


def rvia_solve(mdp: FiniteMdp, ref_state: int = 0, tol: float = 1e-7,
               max_sweeps: int = 100_000, damping: float = 0.5,
               v0=None) -> SolveResult:
    """Relative value iteration for the average-cost Bellman equation.

    Stops when the span of ``T V - V`` is at most ``tol``; the returned
    ``avg_cost`` is the midpoint of that range, so the Bellman residual
    ``max_s |c + min_a P V - V - theta|`` is at most ``tol / 2``.
    """
    cost = mdp.cost

    def step(V):
        return cost + mdp.row_min(mdp.q_values(V))

    V, theta, sweeps, span = _relative_iteration(step, mdp.num_states, ref_state, tol,
                                                 max_sweeps, damping, v0)
    policy = greedy_policy_from_value(mdp, V)
    return SolveResult(float(theta), V, policy, sweeps, float(span), ref_state)


def policy_evaluate(mdp: FiniteMdp, policy, ref_state: int = 0, tol: float = 1e-7,
                    max_sweeps: int = 100_000, damping: float = 0.5):
    """Average cost and relative value of a fixed (possibly randomised) policy."""
    P = mdp.policy_matrix(policy)
    cost = mdp.cost
    V, theta, _, _ = _relative_iteration(lambda V: cost + P @ V, mdp.num_states, ref_state,
                                         tol, max_sweeps, damping, None)
    return float(theta), V


def greedy_policy_from_value(mdp: FiniteMdp, value) -> np.ndarray:
    """Action id minimising expected next value in each state (first on ties)."""
    rows = mdp.row_argmin(mdp.q_values(np.asarray(value, dtype=float)))
    return mdp.row_action[rows].copy()


def bellman_residual(mdp: FiniteMdp, result: SolveResult) -> float:
    TV = mdp.cost + mdp.row_min(mdp.q_values(result.value))
    return float(np.max(np.abs(TV - result.value - result.avg_cost)))


def discounted_vi(mdp: FiniteMdp, alpha: float, tol: float = 1e-7,
                  max_sweeps: int = 1_000_000, return_history: bool = False):
    """Fixed point of ``T_a u = c + alpha min_a P u`` to within ``tol`` (sup norm).

    Stops once the sweep change is at most ``tol (1 - alpha) / alpha``, which
    bounds the distance to the fixed point by ``tol``.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    u = np.zeros(mdp.num_states)
    threshold = tol * (1.0 - alpha) / alpha
    history = []
    change = np.inf
    for _ in range(max_sweeps):
        new = mdp.cost + alpha * mdp.row_min(mdp.q_values(u))
        change = float(np.max(np.abs(new - u)))
        history.append(change)
        u = new
        if change <= threshold:
            return (u, history) if return_history else u
    raise IterationLimitError("discounted value iteration did not converge", change, max_sweeps)
