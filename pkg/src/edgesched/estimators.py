"""Scheduler objects with a scikit-learn style interface.

``fit(config)`` solves (or sets up) a policy for a :class:`SystemConfig`;
``predict(states)`` maps a list of states to actions.  Hyper-parameters are
constructor arguments, so ``get_params``/``set_params``/``clone`` work as in
scikit-learn, and fitted attributes carry a trailing underscore.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from .mdp import policy_evaluate
from .plant import ConfigError, SystemConfig
from .preempt import PreemptState, no_preempt_policy, solve_preempt_optimal
from .sched import (ContractError, SchedModel, SchedState, StaticPolicy, action_from_id,
                    greedy_action, policy_table, solve_optimal)
from .suboptimal import SuboptimalPolicy, base_policy, per_process_values


def check_config(config) -> SystemConfig:
    if not isinstance(config, SystemConfig):
        raise ConfigError(f"expected a SystemConfig, got {type(config).__name__}")
    return config


def check_states(states, kind=SchedState) -> list:
    """Accept one state or a sequence of states; always return a list."""
    if isinstance(states, kind):
        return [states]
    states = list(states)
    bad = [s for s in states if not isinstance(s, kind)]
    if bad:
        raise ContractError(f"expected {kind.__name__} items, got {type(bad[0]).__name__}")
    return states


class _SchedScheduler(BaseEstimator):
    """Shared predict/evaluate for the two-server schedulers."""

    def _policy(self, s):
        raise NotImplementedError

    def predict(self, states) -> list:
        check_is_fitted(self, "config_")
        return [self._policy(s) for s in check_states(states)]

    def average_cost(self, model: SchedModel | None = None, tol: float = 1e-7) -> float:
        """Exact long-run average MSE of the fitted policy (needs an enumerable model)."""
        check_is_fitted(self, "config_")
        model = model or SchedModel(self.config_)
        return policy_evaluate(model.mdp(), policy_table(model, self._policy), tol=tol)[0]


class OptimalScheduler(_SchedScheduler):
    """Average-cost optimal policy by relative value iteration."""

    def __init__(self, tol: float = 1e-7, max_states: int = 2_000_000, allow_idle: bool = True):
        self.tol = tol
        self.max_states = max_states
        self.allow_idle = allow_idle

    def fit(self, config, y=None):
        self.config_ = check_config(config)
        self.model_, self.result_ = solve_optimal(config, tol=self.tol, max_states=self.max_states,
                                                  allow_idle=self.allow_idle)
        self.average_cost_ = self.result_.avg_cost
        return self

    def _policy(self, s):
        return action_from_id(int(self.result_.policy[self.model_.index_of(s)]), self.model_.n)

    def average_cost(self, model=None, tol=1e-7) -> float:
        check_is_fitted(self, "config_")
        return self.average_cost_


class SuboptimalScheduler(_SchedScheduler):
    """One-step improvement over a decomposed base-policy value."""

    def __init__(self, base: str = "uniform", tol: float = 1e-7):
        self.base = base
        self.tol = tol

    def fit(self, config, y=None):
        self.config_ = check_config(config)
        self.model_ = SchedModel(config)
        self.values_ = per_process_values(config, base_policy(config, self.base), self.tol,
                                          self.model_)
        self.policy_ = SuboptimalPolicy(self.values_)
        return self

    def _policy(self, s):
        return self.policy_(s)


class GreedyScheduler(_SchedScheduler):
    """Largest current MSE first, each on its faster feasible server."""

    def fit(self, config, y=None):
        self.config_ = check_config(config)
        return self

    def _policy(self, s):
        return greedy_action(s, self.config_)


class StaticScheduler(_SchedScheduler):
    """Fixed process-to-server assignment (default: shorter loop delay)."""

    def __init__(self, assignment: dict | None = None):
        self.assignment = assignment

    def fit(self, config, y=None):
        self.config_ = check_config(config)
        self.policy_ = StaticPolicy(config, self.assignment)
        return self

    def _policy(self, s):
        return self.policy_(s)


class PreemptScheduler(BaseEstimator):
    """Single-server preemption: optimal (``strategy="optimal"``), optimal
    without interruptions (``"optimal-no-preempt"``) or the no-preemption
    rule (``"no-preempt"``)."""

    def __init__(self, strategy: str = "optimal", tol: float = 1e-7, max_states: int = 2_000_000):
        self.strategy = strategy
        self.tol = tol
        self.max_states = max_states

    def fit(self, config, y=None):
        self.config_ = check_config(config)
        if self.strategy == "no-preempt":
            self.rule_ = no_preempt_policy(config)
            self.model_ = self.result_ = None
        elif self.strategy in ("optimal", "optimal-no-preempt"):
            self.model_, self.result_ = solve_preempt_optimal(
                config, tol=self.tol, max_states=self.max_states,
                allow_preempt=self.strategy == "optimal")
            self.rule_ = None
            self.average_cost_ = self.result_.avg_cost
        else:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        return self

    def _act(self, s, arrivals) -> int:
        if self.rule_ is not None:
            return int(self.rule_(s, arrivals))
        return int(self.result_.policy[self.model_.index_of(s, arrivals)])

    def predict(self, states: Sequence, arrivals: Sequence) -> list:
        """Actions for paired ``states`` and arrival patterns."""
        check_is_fitted(self, "config_")
        states = check_states(states, PreemptState)
        arrivals = [tuple(arrivals)] if len(states) == 1 and len(arrivals) and \
            isinstance(arrivals[0], (bool, np.bool_, int)) else [tuple(a) for a in arrivals]
        if len(arrivals) != len(states):
            raise ContractError("states and arrivals must have the same length")
        return [self._act(s, a) for s, a in zip(states, arrivals)]

    def __call__(self, s, arrivals) -> int:
        return self._act(s, arrivals)


__all__ = ["OptimalScheduler", "SuboptimalScheduler", "GreedyScheduler", "StaticScheduler",
           "PreemptScheduler", "check_config", "check_states", "NotFittedError"]
