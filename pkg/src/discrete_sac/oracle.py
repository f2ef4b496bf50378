"""Exact dynamic programming on finite MDPs.

Iterative policy evaluation, greedy improvement, policy iteration, and value
iteration as an independent optimality oracle. The estimator classes wrap the
functional API in the scikit-learn ``fit``/``predict`` convention.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import ContractError, ConvergenceError
from .mdp import TabularMDP, check_mdp
from .validation import check_policy, check_states


def bellman_backup(mdp: TabularMDP, pi: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Apply the policy Bellman operator once: r + gamma * E_{s'~p, a'~pi} Q(s', a')."""
    v = np.einsum("sa,sa->s", pi, q)
    return mdp.reward + mdp.gamma * mdp.transition @ v


def optimality_backup(mdp: TabularMDP, q: np.ndarray) -> np.ndarray:
    return mdp.reward + mdp.gamma * mdp.transition @ q.max(axis=1)


def _iteration_budget(mdp: TabularMDP, tol: float) -> int:
    span = mdp.r_max - mdp.r_min
    if span <= 0.0:
        return 2
    return max(1, math.ceil(math.log(tol * (1.0 - mdp.gamma) / span) / math.log(mdp.gamma))) + 1


def _stop_threshold(mdp: TabularMDP, tol: float) -> float:
    # residual r certifies ||Q_k - Q_fixed|| <= gamma / (1 - gamma) * r
    return tol * (1.0 - mdp.gamma) / mdp.gamma


def _initial_q(mdp: TabularMDP) -> np.ndarray:
    # midpoint start bounds the first residual by (r_max - r_min) / 2
    c = 0.5 * (mdp.r_min + mdp.r_max) / (1.0 - mdp.gamma)
    return np.full((mdp.n_states, mdp.n_actions), c)


def policy_evaluation(mdp: TabularMDP, pi, tol: float = 1e-10, return_iterations: bool = False):
    """Fixed point of the policy Bellman operator to sup-norm accuracy ``tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    pi = check_policy(pi, mdp.n_states, mdp.n_actions)
    budget = _iteration_budget(mdp, tol)
    threshold = _stop_threshold(mdp, tol)
    q = _initial_q(mdp)
    for it in range(1, budget + 1):
        q_new = bellman_backup(mdp, pi, q)
        residual = np.max(np.abs(q_new - q))
        q = q_new
        if residual <= threshold:
            return (q, it) if return_iterations else q
    raise ConvergenceError(f"policy evaluation did not converge in {budget} sweeps; is the MDP valid?")


def greedy_policy(q: np.ndarray) -> np.ndarray:
    """One-hot argmax per row, lowest action index on ties."""
    q = np.asarray(q, dtype=np.float64)
    if not np.all(np.isfinite(q)):
        raise ContractError("Q table must be finite")
    pi = np.zeros_like(q)
    pi[np.arange(q.shape[0]), np.argmax(q, axis=1)] = 1.0
    return pi


def policy_improvement(mdp: TabularMDP, q) -> np.ndarray:
    # maximizing E_{a~pi'}[Q] over the full simplex is attained at a vertex
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (mdp.n_states, mdp.n_actions):
        raise ContractError(f"Q table shape {q.shape} does not match MDP")
    return greedy_policy(q)


def policy_iteration(mdp: TabularMDP, tol: float = 1e-10, pi0=None, history: list | None = None):
    """Alternate evaluation and greedy improvement until the greedy policy is stable.

    Returns ``(policy, q)``. When ``history`` is a list, each evaluated policy's
    ``(policy, q)`` pair is appended to it.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    check_mdp(mdp)
    S, A = mdp.n_states, mdp.n_actions
    pi = np.full((S, A), 1.0 / A) if pi0 is None else check_policy(pi0, S, A)
    budget = S * A + 10
    # approximate Q can flip near-ties; keep the incumbent action if within this slack
    slack = 4.0 * tol
    for _ in range(budget):
        q = policy_evaluation(mdp, pi, tol)
        if history is not None:
            history.append((pi.copy(), q.copy()))
        new_pi = policy_improvement(mdp, q)
        best = q.max(axis=1)
        incumbent = np.einsum("sa,sa->s", pi, q)
        if np.array_equal(new_pi, pi) or np.all(incumbent >= best - slack) and _is_deterministic(pi):
            return pi, q
        pi = new_pi
    raise ConvergenceError(f"policy iteration exceeded {budget} improvement rounds")


def _is_deterministic(pi: np.ndarray) -> bool:
    return bool(np.all((pi == 0.0) | (pi == 1.0)))


def value_iteration(mdp: TabularMDP, tol: float = 1e-10) -> np.ndarray:
    """Optimal Q to sup-norm accuracy ``tol`` via the Bellman optimality operator."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    check_mdp(mdp)
    budget = _iteration_budget(mdp, tol) + 1
    threshold = _stop_threshold(mdp, tol)
    q = _initial_q(mdp)
    for _ in range(budget):
        q_new = optimality_backup(mdp, q)
        residual = np.max(np.abs(q_new - q))
        q = q_new
        if residual <= threshold:
            return q
    raise ConvergenceError(f"value iteration did not converge in {budget} sweeps")


def expected_return(mdp: TabularMDP, pi, discount: float = 1.0, max_steps: int = 500) -> float:
    """Expected episode return from the initial distribution under ``pi``.

    Rewards are summed with ``discount`` over at most ``max_steps`` steps, which
    mirrors the episode cap used when rolling out the environment.
    """
    pi = check_policy(pi, mdp.n_states, mdp.n_actions)
    P_pi = np.einsum("sa,sat->st", pi, mdp.transition)
    r_pi = np.einsum("sa,sa->s", pi, mdp.reward)
    d = mdp.initial_dist.copy()
    total, scale = 0.0, 1.0
    for _ in range(max_steps):
        total += scale * float(d @ r_pi)
        d = d @ P_pi
        scale *= discount
    return total


def uniform_policy(mdp: TabularMDP) -> np.ndarray:
    return np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)


# -- estimator wrappers ------------------------------------------------------


class _TabularSolver(BaseEstimator):
    def predict(self, states):
        """Greedy action for each state index."""
        check_is_fitted(self, "policy_")
        states = check_states(states, self.policy_.shape[0])
        return np.argmax(self.policy_[states], axis=1)

    def predict_proba(self, states):
        check_is_fitted(self, "policy_")
        states = check_states(states, self.policy_.shape[0])
        return self.policy_[states]

    def score(self, mdp: TabularMDP, y=None) -> float:
        """Expected undiscounted episode return of the fitted policy."""
        check_is_fitted(self, "policy_")
        return expected_return(mdp, self.policy_)


class PolicyIteration(_TabularSolver):
    """Policy iteration with iterative (contraction) evaluation.

    Attributes after ``fit``: ``policy_``, ``q_``, ``n_iter_``, ``history_``.
    """

    def __init__(self, tol: float = 1e-10):
        self.tol = tol

    def fit(self, mdp: TabularMDP, y=None):
        history: list = []
        self.policy_, self.q_ = policy_iteration(mdp, self.tol, history=history)
        self.history_ = history
        self.n_iter_ = len(history)
        return self


class ValueIteration(_TabularSolver):
    def __init__(self, tol: float = 1e-10):
        self.tol = tol

    def fit(self, mdp: TabularMDP, y=None):
        self.q_ = value_iteration(mdp, self.tol)
        self.policy_ = greedy_policy(self.q_)
        return self


# -- text dump ----------------------------------------------------------------


def dumps_solution(policy: np.ndarray, q: np.ndarray) -> str:
    """Serialize a (policy, Q) pair in the same line format as MDP files."""
    from .mdp import _fmt

    S, A = q.shape
    lines = ["tabular-solution 1", f"n_states {S}", f"n_actions {A}"]
    lines += [f"policy {s} {_fmt(policy[s])}" for s in range(S)]
    lines += [f"q {s} {_fmt(q[s])}" for s in range(S)]
    return "\n".join(lines) + "\n"


def loads_solution(text: str):
    from .exceptions import MDPFormatError

    rows: dict = {"policy": {}, "q": {}}
    head: dict = {}
    lines = [(i + 1, ln.split()) for i, ln in enumerate(text.splitlines()) if ln.strip()]
    if not lines or lines[0][1] != ["tabular-solution", "1"]:
        raise MDPFormatError(lines[0][0] if lines else 1, "expected header 'tabular-solution 1'")
    for lineno, toks in lines[1:]:
        key = toks[0]
        try:
            if key in ("n_states", "n_actions"):
                head[key] = int(toks[1])
            elif key in rows:
                rows[key][int(toks[1])] = [float(t) for t in toks[2:]]
            else:
                raise MDPFormatError(lineno, f"unknown key '{key}'")
        except (ValueError, IndexError) as exc:
            if isinstance(exc, MDPFormatError):
                raise
            raise MDPFormatError(lineno, f"malformed line ({exc})") from None
    S, A = head["n_states"], head["n_actions"]
    policy = np.array([rows["policy"][s] for s in range(S)])
    q = np.array([rows["q"][s] for s in range(S)])
    if policy.shape != (S, A) or q.shape != (S, A):
        raise MDPFormatError(lines[-1][0], "row lengths do not match n_actions")
    return check_policy(policy, S, A), q
