"""Estimator-style wrapper around the training harness."""

from __future__ import annotations

import tempfile

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .harness import TrainConfig, run_training
from .mdp import TabularMDP
from .oracle import expected_return
from .validation import check_states


class DiscreteSAC(BaseEstimator):
    """Discrete soft actor-critic agent for a tabular MDP.

    ``fit(mdp)`` trains with the harness; ``predict`` returns greedy actions
    and ``predict_proba`` the target-policy distribution. ``score`` is the
    exact expected undiscounted return of the sampling policy.

    Examples
    --------
    >>> from discrete_sac.mdp import build_gridworld
    >>> agent = DiscreteSAC(total_env_steps=3000, random_state=0).fit(build_gridworld(5, 5))
    >>> round(agent.score(build_gridworld(5, 5)), 2)  # doctest: +SKIP
    0.93
    """

    def __init__(self, total_env_steps: int = 3000, replay_ratio: float = 2.0, baseline: bool = True,
                 pg_mode: str = "sampled", learning_rate: float = 1e-3, beta0: float = 0.01,
                 reset_period: int = 2000, batch_size: int = 32, eval_episodes: int = 0,
                 random_state: int = 0, out_dir=None):
        self.total_env_steps = total_env_steps
        self.replay_ratio = replay_ratio
        self.baseline = baseline
        self.pg_mode = pg_mode
        self.learning_rate = learning_rate
        self.beta0 = beta0
        self.reset_period = reset_period
        self.batch_size = batch_size
        self.eval_episodes = eval_episodes
        self.random_state = random_state
        self.out_dir = out_dir

    def _config(self) -> TrainConfig:
        return TrainConfig().replace(**{
            "train.total_env_steps": self.total_env_steps,
            "train.replay_ratio": self.replay_ratio,
            "train.seed": self.random_state,
            "train.diagnostics_every": 100,
            "agent.baseline": self.baseline,
            "agent.pg_mode": self.pg_mode,
            "agent.learning_rate": self.learning_rate,
            "agent.batch_size": self.batch_size,
            "schedules.beta0": self.beta0,
            "schedules.reset_period": self.reset_period,
            "eval.episodes": self.eval_episodes,
        })

    def fit(self, mdp: TabularMDP, y=None):
        if not isinstance(mdp, TabularMDP):
            raise TypeError(f"fit expects a TabularMDP, got {type(mdp).__name__}")
        cfg = self._config()
        if self.out_dir is None:
            with tempfile.TemporaryDirectory() as tmp:
                art = run_training(cfg, self.random_state, tmp, mdp=mdp)
        else:
            art = run_training(cfg, self.random_state, self.out_dir, mdp=mdp)
        self.learner_ = art.learner
        self.n_states_ = mdp.n_states
        self.n_actions_ = mdp.n_actions
        self.n_updates_ = art.updates
        self.n_resets_ = art.resets
        self.eval_returns_ = list(art.eval_returns)
        return self

    def predict_proba(self, states) -> np.ndarray:
        check_is_fitted(self, "learner_")
        return self.learner_.policy_probs(check_states(states, self.n_states_), "target")

    def predict(self, states) -> np.ndarray:
        return np.argmax(self.predict_proba(states), axis=1)

    def score(self, mdp: TabularMDP, y=None) -> float:
        check_is_fitted(self, "learner_")
        pi = self.predict_proba(np.arange(mdp.n_states))
        return expected_return(mdp, pi)
