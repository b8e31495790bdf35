"""Decomposed (per-process) value functions and the one-step-improved policy.

Under a base policy that looks only at the server pipelines, each process's
``(AoI, pipelines)`` coordinates form a Markov chain on their own, because
pipelines and actions never depend on AoI.  Evaluating those chains gives
per-process average costs ``theta_k`` and relative values ``V_k``; their sum
approximates the joint relative value, and one greedy step against it gives
the suboptimal policy.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .mdp import FiniteMdp, greedy_policy_from_value, policy_evaluate
from .plant import EDGE, REMOTE, SystemConfig
from .sched import (ContractError, SchedAction, SchedModel, SchedState, StaticPolicy,
                    _age, _grid_sizes, _params, _pipe_actions, _pipe_branches,
                    action_id, enumerate_pipelines)


class BasePolicy:
    """Randomised policy that depends on the pipelines only.

    ``kind="uniform"`` spreads mass evenly over the feasible actions.
    ``kind="static"`` sends each server its assigned process whenever
    feasible; it needs at most one process per server, otherwise the choice
    would depend on AoI and the per-process chains would not be Markov.
    """

    def __init__(self, config: SystemConfig, kind: str = "uniform",
                 assignment: dict | None = None, allow_idle: bool = True):
        if kind not in ("uniform", "static"):
            raise ValueError(f"unknown base policy kind {kind!r}")
        self.config = config
        self.kind = kind
        self.allow_idle = allow_idle
        self._P = _params(config)
        self._static = None
        if kind == "static":
            self._static = StaticPolicy(config, assignment)
            servers = list(self._static.assignment.values())
            if servers.count(REMOTE) > 1 or servers.count(EDGE) > 1:
                raise ContractError("a static base policy needs at most one process per server")
        self._cache = {}

    def distribution(self, remote, edge) -> dict:
        """``{SchedAction: probability}`` for a pipeline pair."""
        key = (remote, edge)
        if key not in self._cache:
            acts = _pipe_actions(remote, edge, self._P, self.allow_idle)
            if self.kind == "uniform":
                dist = {a: 1.0 / len(acts) for a in acts}
            else:
                # AoI is irrelevant without server sharing; any valid vector will do
                dist = {self._static(SchedState(self.config.caps(), remote, edge)): 1.0}
            self._cache[key] = dist
        return self._cache[key]

    def __call__(self, s: SchedState) -> dict:
        return self.distribution(s.remote, s.edge)

    def row_weights(self, model: SchedModel, mdp: FiniteMdp) -> np.ndarray:
        """Per-row weights for a joint or marginal kernel built by ``model``."""
        template = []
        for c, (remote, edge) in enumerate(model.pipes):
            dist = self.distribution(remote, edge)
            acts = model.pipe_actions[c]
            if not set(dist) <= set(acts):
                raise ContractError("base policy uses actions outside the model's action set")
            template.extend(dist.get(a, 0.0) for a in acts)
        template = np.asarray(template)
        return np.tile(template, mdp.num_rows // len(template))


def base_policy(config: SystemConfig, kind: str = "uniform", assignment: dict | None = None,
                allow_idle: bool = True) -> BasePolicy:
    return BasePolicy(config, kind, assignment, allow_idle)


@dataclass
class PerProcessValues:
    """``values[k - 1][tau - floor_k, c]`` is ``V_k`` at AoI ``tau`` and pipeline pair ``c``."""

    model: SchedModel
    theta: tuple
    values: list
    base: BasePolicy
    tol: float

    @property
    def total_theta(self) -> float:
        return float(sum(self.theta))

    def value(self, k: int, tau: int, remote, edge) -> float:
        c = self.model.pipe_index[(remote, edge)]
        return float(self.values[k - 1][tau - self.model.floors[k - 1], c])

    def joint_value(self) -> np.ndarray:
        """``sum_k V_k`` on the joint state index of ``model``."""
        m = self.model
        total = np.zeros((m.n_grid, m.n_pipes))
        grid = m.aoi_grid()
        for k in range(m.n):
            total += self.values[k][grid[:, k] - m.floors[k]]
        return total.ravel()


def per_process_value(config: SystemConfig, k: int, base: BasePolicy | None = None,
                      tol: float = 1e-7, model: SchedModel | None = None, **kwargs):
    """``(theta_k, V_k)`` for process ``k``; ``V_k`` has shape ``(aoi values, pipeline pairs)``.

    The reference state (value 0) is the lowest AoI with both servers in the
    first enumerated pipeline pair.
    """
    model = model or SchedModel(config)
    base = base or BasePolicy(config, allow_idle=model.allow_idle)
    mdp = model.marginal_mdp(k)
    theta, V = policy_evaluate(mdp, base.row_weights(model, mdp), tol=tol, **kwargs)
    return theta, V.reshape(model.sizes[k - 1], model.n_pipes)


def per_process_values(config: SystemConfig, base: BasePolicy | None = None,
                       tol: float = 1e-7, model: SchedModel | None = None,
                       **kwargs) -> PerProcessValues:
    """Evaluate every process's chain (independently, in a thread pool)."""
    model = model or SchedModel(config)
    base = base or BasePolicy(config, allow_idle=model.allow_idle)
    ids = range(1, config.n_processes + 1)
    with ThreadPoolExecutor() as pool:
        out = list(pool.map(lambda k: per_process_value(config, k, base, tol, model, **kwargs), ids))
    return PerProcessValues(model, tuple(t for t, _ in out), [v for _, v in out], base, tol)


def _expected_values(s: SchedState, values: PerProcessValues) -> list:
    m = values.model
    P = m._P
    out = []
    for a in m.pipe_actions[m.pipe_index[(s.remote, s.edge)]]:
        q = 0.0
        for prob, nr, ne, resets in _pipe_branches(s.remote, s.edge, a, m.config.p, P):
            c2 = m.pipe_index[(nr, ne)]
            aoi = _age(s.aoi, resets, P.caps)
            q += prob * sum(float(values.values[k][t - m.floors[k], c2])
                            for k, t in enumerate(aoi))
        out.append((q, a))
    return out


def suboptimal_action(s: SchedState, values: PerProcessValues,
                      config: SystemConfig | None = None) -> SchedAction:
    """Feasible action minimising the expected sum of per-process values.

    Ties go to the smallest action id.
    """
    if config is not None and config is not values.model.config and config != values.model.config:
        raise ContractError("values were computed for a different configuration")
    n = values.model.n
    best = min(_expected_values(s, values), key=lambda qa: (qa[0], action_id(qa[1], n)))
    return best[1]


class SuboptimalPolicy:
    """State-feedback wrapper around :func:`suboptimal_action` with a cache."""

    def __init__(self, values: PerProcessValues):
        self.values = values
        self._cache = {}

    def __call__(self, s: SchedState) -> SchedAction:
        a = self._cache.get(s)
        if a is None:
            a = self._cache[s] = suboptimal_action(s, self.values)
        return a


def suboptimal_table(values: PerProcessValues, p: float | None = None) -> np.ndarray:
    """Vectorised suboptimal action id for every joint state of ``values.model``."""
    mdp = values.model.mdp(p)
    return greedy_policy_from_value(mdp, values.joint_value())


class ComplexityReport(NamedTuple):
    subopt_states: int
    full_states: int

    @property
    def ratio(self) -> float:
        return self.subopt_states / self.full_states


def complexity_report(config: SystemConfig, aoi_floor: int | None = 1) -> ComplexityReport:
    """State counts of the decomposed and the joint formulation.

    Both share the enumerated pipeline pairs; the decomposed one adds the
    per-process AoI ranges, the joint one multiplies them.  By default AoI
    ranges are the nominal ``[1, cap]``; ``aoi_floor=None`` counts only the
    reachable range starting at each process's shorter loop delay.
    """
    n_pipes = len(enumerate_pipelines(config))
    sizes = _grid_sizes(config, aoi_floor)
    return ComplexityReport(int(sum(sizes)) * n_pipes, int(np.prod(sizes, dtype=object)) * n_pipes)
