from collections import deque

import numpy as np
import pytest
from sklearn.base import clone

from discrete_sac.exceptions import ContractError, MDPFormatError
from discrete_sac.mdp import TabularMDP, build_chain, build_gridworld, random_mdp
from discrete_sac.oracle import (PolicyIteration, ValueIteration, bellman_backup, dumps_solution,
                                 expected_return, greedy_policy, loads_solution, policy_evaluation,
                                 policy_improvement, policy_iteration, uniform_policy, value_iteration)


def _linear_solve_q(mdp, pi):
    # Q = r + gamma * P (pi Q)  =>  (I - gamma * P_pi_sa) Q = r over flattened (s, a)
    S, A = mdp.n_states, mdp.n_actions
    live = (~mdp.terminal).astype(float)
    P = mdp.transition * live[None, None, :]
    M = np.einsum("sat,tb->satb", P, pi).reshape(S * A, S * A)
    q = np.linalg.solve(np.eye(S * A) - mdp.gamma * M, mdp.reward.ravel())
    return q.reshape(S, A)


def _random_policy(rng, S, A):
    return rng.dirichlet(np.ones(A), size=S)


def _single_state(rewards, gamma):
    A = len(rewards)
    return TabularMDP(np.ones((1, A, 1)), np.array([rewards], dtype=float), np.ones(1), gamma,
                      np.zeros(1, dtype=bool), min(0.0, *rewards), max(0.0, *rewards))


class TestPolicyEvaluation:
    def test_geometric_series(self):
        q = policy_evaluation(_single_state([1.0], 0.5), np.ones((1, 1)))
        assert abs(q[0, 0] - 2.0) <= 1e-10

    def test_one_step_then_terminal(self):
        mdp = build_chain(2, right_reward=3.0)
        q = policy_evaluation(mdp, np.array([[0.0, 1.0], [0.5, 0.5]]))
        assert abs(q[0, 1] - 3.0) <= 1e-10

    def test_matches_linear_solve(self):
        rng = np.random.default_rng(0)
        mdp = random_mdp(10, 4, rng=rng)
        pi = _random_policy(rng, 10, 4)
        assert np.max(np.abs(policy_evaluation(mdp, pi) - _linear_solve_q(mdp, pi))) <= 1e-8

    def test_iteration_budget(self):
        rng = np.random.default_rng(1)
        mdp = random_mdp(8, 3, gamma=0.9, rng=rng)
        tol = 1e-8
        _, iters = policy_evaluation(mdp, uniform_policy(mdp), tol, return_iterations=True)
        bound = np.ceil(np.log(tol * (1 - 0.9) / (mdp.r_max - mdp.r_min)) / np.log(0.9)) + 1
        assert iters <= bound

    def test_value_bound(self):
        mdp = random_mdp(6, 3, rng=2, reward_range=(-1.0, 2.0))
        q = policy_evaluation(mdp, uniform_policy(mdp))
        assert np.all(np.abs(q) <= 2.0 / (1 - mdp.gamma) + 1e-9)

    def test_rejects_bad_policy(self):
        mdp = build_chain(3)
        with pytest.raises(ContractError):
            policy_evaluation(mdp, np.full((3, 2), 0.6))


class TestImprovement:
    def test_unique_argmax(self):
        assert greedy_policy(np.array([[0.0, 5.0, 1.0]])).tolist() == [[0.0, 1.0, 0.0]]

    def test_tie_goes_to_lowest_index(self):
        assert greedy_policy(np.array([[3.0, 3.0, 0.0]])).tolist() == [[1.0, 0.0, 0.0]]

    def test_non_finite_q(self):
        with pytest.raises(ContractError):
            greedy_policy(np.array([[np.nan, 1.0]]))

    def test_monotone_on_random_mdps(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            S, A = int(rng.integers(2, 10)), int(rng.integers(2, 5))
            mdp = random_mdp(S, A, rng=rng)
            pi_old = _random_policy(rng, S, A)
            q_old = _linear_solve_q(mdp, pi_old)
            pi_new = policy_improvement(mdp, q_old)
            assert np.all(_linear_solve_q(mdp, pi_new) >= q_old - 1e-9)


class TestPolicyIteration:
    def test_single_action(self):
        mdp = random_mdp(4, 1, rng=4)
        pi, q = policy_iteration(mdp)
        assert np.all(pi == 1.0)
        assert np.max(np.abs(q - policy_evaluation(mdp, pi))) <= 1e-9

    def test_gridworld_shortest_paths(self):
        mdp = build_gridworld(5, 5)
        pi, _ = policy_iteration(mdp)
        goal = int(np.flatnonzero(mdp.terminal)[0])
        # breadth-first distances on the grid graph
        dist = {goal: 0}
        queue = deque([goal])
        while queue:
            s = queue.popleft()
            for t in range(mdp.n_states):
                if t not in dist and np.any(mdp.transition[t, :, s] == 1.0) and t != s:
                    dist[t] = dist[s] + 1
                    queue.append(t)
        for start in range(mdp.n_states):
            s, steps = start, 0
            while s != goal and steps < 100:
                s = int(np.argmax(mdp.transition[s, int(np.argmax(pi[s]))]))
                steps += 1
            x, y = start % 5, start // 5
            assert steps == dist[start] == (4 - x) + (4 - y)

    def test_matches_value_iteration(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            mdp = random_mdp(int(rng.integers(2, 15)), int(rng.integers(2, 5)), rng=rng)
            tol = 1e-10
            _, q = policy_iteration(mdp, tol)
            assert np.max(np.abs(q - value_iteration(mdp, tol))) <= tol * 2 / (1 - mdp.gamma)

    def test_history_is_monotone(self):
        history = []
        policy_iteration(random_mdp(12, 4, rng=6), history=history)
        assert len(history) >= 1
        for (_, a), (_, b) in zip(history, history[1:]):
            assert np.all(b >= a - 1e-9)


class TestValueIteration:
    def test_single_state_two_actions(self):
        q = value_iteration(_single_state([0.0, 1.0], 0.9))
        assert np.allclose(q, [[9.0, 10.0]], atol=1e-8)

    def test_chain(self):
        q = value_iteration(build_chain(4, gamma=0.9))
        assert abs(q[0, 1] - 0.81) <= 1e-9

    def test_reward_shift(self):
        mdp = random_mdp(7, 3, rng=8)
        c = 0.37
        shifted = mdp.with_rewards(mdp.reward + c, mdp.r_min + c, mdp.r_max + c)
        assert np.max(np.abs(value_iteration(shifted) - value_iteration(mdp) - c / (1 - mdp.gamma))) <= 1e-8

    def test_rejects_bad_tol(self):
        with pytest.raises(ValueError):
            value_iteration(build_chain(3), tol=0.0)


def test_bellman_contraction():
    rng = np.random.default_rng(9)
    for _ in range(100):
        mdp = random_mdp(int(rng.integers(2, 10)), int(rng.integers(1, 5)), rng=rng)
        pi = _random_policy(rng, mdp.n_states, mdp.n_actions)
        q1 = rng.normal(size=mdp.reward.shape) * 10
        q2 = rng.normal(size=mdp.reward.shape) * 10
        lhs = np.max(np.abs(bellman_backup(mdp, pi, q1) - bellman_backup(mdp, pi, q2)))
        assert lhs <= mdp.gamma * np.max(np.abs(q1 - q2)) + 1e-12


def test_expected_return_gridworld():
    mdp = build_gridworld(5, 5)
    pi, _ = policy_iteration(mdp)
    assert abs(expected_return(mdp, pi) - 0.93) <= 1e-12


class TestEstimators:
    def test_policy_iteration_estimator(self):
        mdp = build_gridworld(4, 4)
        est = PolicyIteration(tol=1e-9).fit(mdp)
        assert est.predict([0, 1]).shape == (2,)
        assert est.predict_proba([0]).shape == (1, 4)
        assert est.get_params() == {"tol": 1e-9}
        assert est.n_iter_ == len(est.history_)
        assert est.score(mdp) == pytest.approx(1.0 - 5 * 0.01)

    def test_value_iteration_agrees(self):
        # several shortest paths tie, so compare returns rather than actions
        mdp = build_gridworld(4, 4)
        assert ValueIteration().fit(mdp).score(mdp) == pytest.approx(PolicyIteration().fit(mdp).score(mdp),
                                                                     abs=1e-12)

    def test_clone_and_unfitted(self):
        est = clone(PolicyIteration(tol=1e-6))
        with pytest.raises(Exception):
            est.predict([0])

    def test_state_out_of_range(self):
        est = PolicyIteration().fit(build_chain(3))
        with pytest.raises(ContractError):
            est.predict([5])


class TestSolutionText:
    def test_round_trip(self):
        pi, q = policy_iteration(random_mdp(5, 3, rng=10))
        pi2, q2 = loads_solution(dumps_solution(pi, q))
        assert np.array_equal(pi, pi2) and np.array_equal(q, q2)

    def test_bad_line(self):
        text = dumps_solution(np.eye(2), np.zeros((2, 2))).replace("q 1 0.0 0.0", "q 1 zero 0.0")
        with pytest.raises(MDPFormatError, match="line"):
            loads_solution(text)
