import numpy as np
import pytest
from scipy import stats

from discrete_sac import autodiff as ad
from discrete_sac.exceptions import ContractError, NonFiniteError
from discrete_sac.replay import NStepBatch, ReplayBuffer, replay_sample_nstep
from discrete_sac.sac import (EXACT, SAMPLED, critic_loss, nstep_target, policy_gradient,
                              policy_surrogate, select_action)
from discrete_sac.schedules import beta_schedule, exp_schedule, nstep_schedule


def _episode(buf, rewards, start=0):
    for i, r in enumerate(rewards):
        buf.add(start + i, i % 2, r, start + i + 1, i == len(rewards) - 1)


class TestReplay:
    def test_one_step_window(self):
        buf = ReplayBuffer(10)
        _episode(buf, [0.5, 1.0, 2.0])
        b = NStepBatch.from_windows(buf.windows(np.array([1]), 1), 1)
        assert b.rewards.tolist() == [[1.0]]
        assert b.bootstrap_states.tolist() == [2] and b.effective_n.tolist() == [1]
        assert not b.done_mask[0]

    def test_short_episode_truncates_window(self):
        buf = ReplayBuffer(10)
        _episode(buf, [1.0, 2.0])
        _episode(buf, [5.0, 5.0, 5.0], start=10)
        b = NStepBatch.from_windows(buf.windows(np.array([0]), 3), 3)
        assert b.effective_n.tolist() == [2] and b.done_mask.tolist() == [True]
        assert b.rewards.tolist() == [[1.0, 2.0, 0.0]]

    def test_truncation_bootstraps(self):
        buf = ReplayBuffer(10)
        buf.add(0, 0, 1.0, 1, True, truncated=True)
        buf.add(5, 0, 9.0, 6, False)
        b = NStepBatch.from_windows(buf.windows(np.array([0]), 3), 3)
        assert b.effective_n.tolist() == [1] and not b.done_mask[0]

    def test_data_end_cuts_window(self):
        buf = ReplayBuffer(10)
        _episode(buf, [1.0, 1.0, 1.0, 1.0])
        buf.add(20, 0, 0.0, 21, False)
        w = buf.windows(np.array([4]), 3)
        assert w.valid.tolist() == [[True, False, False]]

    def test_ring_overwrites_oldest(self):
        buf = ReplayBuffer(3)
        for i in range(5):
            buf.add(i, 0, float(i), i + 1, False)
        assert len(buf) == 3
        assert buf.windows(np.array([0]), 1).states.tolist() == [2]

    def test_uniform_sampling(self):
        buf = ReplayBuffer(100)
        for i in range(20):
            buf.add(i, 0, 0.0, i + 1, False)
        n = 200_000
        counts = np.bincount(buf.sample_indices(n, np.random.default_rng(0)), minlength=20)
        p = 1 / 20
        assert np.all(np.abs(counts - n * p) <= 3 * np.sqrt(n * p * (1 - p)) + 1)

    def test_empty_buffer(self):
        with pytest.raises(ContractError):
            replay_sample_nstep(ReplayBuffer(5), 4, 3, np.random.default_rng(0))

    def test_rejects_non_finite_reward(self):
        with pytest.raises(ContractError):
            ReplayBuffer(5).add(0, 0, np.inf, 1, False)


def _batch(rewards, eff, done, boot=None):
    rewards = np.atleast_2d(np.asarray(rewards, dtype=float))
    B = len(rewards)
    return NStepBatch(np.zeros(B, int), np.zeros(B, int), rewards,
                      np.zeros(B, int) if boot is None else np.asarray(boot),
                      np.asarray(done), np.asarray(eff))


class TestNStepTarget:
    q_const = staticmethod(lambda s: np.full((len(s), 2), 7.0))
    pi_unif = staticmethod(lambda s: np.full((len(s), 2), 0.5))

    def test_gamma_zero_is_first_reward(self):
        t = nstep_target(_batch([[1.5, 9.0, 9.0]], [3], [False]), self.q_const, self.pi_unif, 0.0,
                         np.random.default_rng(0))
        assert t.tolist() == [1.5]

    def test_done_drops_bootstrap(self):
        t = nstep_target(_batch([[1.0, 1.0, 0.0]], [2], [True]), self.q_const, self.pi_unif, 0.5,
                         np.random.default_rng(0))
        assert t[0] == pytest.approx(1.5)

    def test_bootstrap_discount(self):
        t = nstep_target(_batch([[1.0, 0.0, 0.0]], [3], [False]), self.q_const, self.pi_unif, 0.5,
                         np.random.default_rng(0))
        assert t[0] == pytest.approx(1.0 + 0.125 * 7.0)

    def test_matches_enumeration_for_one_hot_policy(self):
        rng = np.random.default_rng(1)
        B, A, n, gamma = 50, 4, 3, 0.9
        q_table = rng.normal(size=(10, A))
        pick = rng.integers(A, size=10)
        pi = np.eye(A)[pick]
        batch = _batch(rng.normal(size=(B, n)), np.full(B, n), np.zeros(B, bool), rng.integers(10, size=B))
        t = nstep_target(batch, lambda s: q_table[s], lambda s: pi[s], gamma, rng)
        s = batch.bootstrap_states
        oracle = batch.rewards @ gamma ** np.arange(n) + gamma**n * q_table[s, pick[s]]
        assert np.max(np.abs(t - oracle)) <= 1e-12

    def test_non_finite(self):
        with pytest.raises(NonFiniteError):
            nstep_target(_batch([[np.nan]], [1], [True]), self.q_const, self.pi_unif, 0.9,
                         np.random.default_rng(0))


class TestCriticLoss:
    @pytest.mark.parametrize("residual,expected", [(0.5, 0.125), (2.0, 1.5), (-2.0, 1.5)])
    def test_huber_values(self, residual, expected):
        loss = critic_loss(np.array([[residual, 0.0]]), np.array([0]), np.array([0.0]))
        assert float(loss) == pytest.approx(expected)

    def test_rejects_non_finite_targets(self):
        with pytest.raises(NonFiniteError):
            critic_loss(np.zeros((1, 2)), np.array([0]), np.array([np.inf]))

    def test_gradient_only_on_taken_action(self):
        g = ad.Graph()
        q = g.param("q", np.array([[1.0, 2.0, 3.0]]))
        grad = g.backward(critic_loss(q, np.array([1]), np.array([1.5])))["q"]
        assert grad.tolist() == [[0.0, 0.5, 0.0]]


def _logits_fn(p, states):
    return ad.matmul(np.eye(3)[states], p("w"))


class TestPolicyGradient:
    def test_constant_q_gives_zero_gradient(self):
        w = np.random.default_rng(0).normal(size=(3, 4))
        est = policy_gradient(np.array([0, 1, 2]), np.full((3, 4), 2.5), _logits_fn, {"w": w}, 0.0,
                              SAMPLED, np.random.default_rng(1))
        assert np.max(np.abs(est.gradient["w"])) <= 1e-15

    def test_uniform_policy_has_zero_entropy_gradient(self):
        g = ad.Graph()
        x = g.param("x", np.zeros((2, 5)))
        assert np.max(np.abs(g.backward(ad.sum(ad.entropy_from_logits(x)))["x"])) <= 1e-15

    def test_exact_matches_enumeration(self):
        rng = np.random.default_rng(2)
        w = rng.normal(size=(3, 4))
        q = rng.normal(size=(3, 4))
        est = policy_gradient(np.arange(3), q, _logits_fn, {"w": w}, 0.0, EXACT)
        # d/dw of mean_s sum_a softmax(w_s)_a q_sa
        p = ad.softmax(w)
        oracle = p * (q - (p * q).sum(axis=1, keepdims=True)) / 3
        assert np.max(np.abs(est.gradient["w"] - oracle)) <= 1e-12

    def test_sampled_mean_within_three_standard_errors(self):
        rng = np.random.default_rng(3)
        w = rng.normal(size=(3, 4))
        q = rng.normal(size=(3, 4))
        exact = policy_gradient(np.arange(3), q, _logits_fn, {"w": w}, 0.0, EXACT).gradient["w"]
        draws = np.array([policy_gradient(np.arange(3), q, _logits_fn, {"w": w}, 0.0, SAMPLED, rng)
                          .gradient["w"] for _ in range(4000)])
        se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
        assert np.all(np.abs(draws.mean(axis=0) - exact) <= 3 * se + 1e-12)

    def test_entropy_bonus_pushes_toward_uniform(self):
        w = np.array([[3.0, 0.0, 0.0, 0.0]] * 3)
        est = policy_gradient(np.arange(3), np.zeros((3, 4)), _logits_fn, {"w": w}, 0.1, EXACT)
        assert np.all(est.gradient["w"][:, 0] < 0)

    def test_replay_action_is_not_used(self):
        # the surrogate only sees states and Q; two calls with the same rng agree
        rng_a, rng_b = np.random.default_rng(4), np.random.default_rng(4)
        w = np.random.default_rng(5).normal(size=(3, 4))
        q = np.random.default_rng(6).normal(size=(3, 4))
        a = policy_gradient(np.arange(3), q, _logits_fn, {"w": w}, 0.01, SAMPLED, rng_a)
        b = policy_gradient(np.arange(3), q, _logits_fn, {"w": w}, 0.01, SAMPLED, rng_b)
        assert np.array_equal(a.gradient["w"], b.gradient["w"])

    def test_entropy_diagnostic_in_range(self):
        w = np.random.default_rng(7).normal(scale=3, size=(3, 4))
        est = policy_gradient(np.arange(3), np.zeros((3, 4)), _logits_fn, {"w": w}, 0.0, EXACT)
        assert 0.0 <= est.entropy <= np.log(4)

    def test_baseline_off_still_unbiased(self):
        rng = np.random.default_rng(8)
        w = rng.normal(size=(3, 4))
        q = rng.normal(size=(3, 4)) + 5.0
        a = policy_gradient(np.arange(3), q, _logits_fn, {"w": w}, 0.0, EXACT, baseline=True)
        b = policy_gradient(np.arange(3), q, _logits_fn, {"w": w}, 0.0, EXACT, baseline=False)
        assert np.max(np.abs(a.gradient["w"] - b.gradient["w"])) <= 1e-12

    def test_non_finite_q(self):
        with pytest.raises(NonFiniteError):
            policy_surrogate(np.zeros((1, 2)), np.array([[np.nan, 0.0]]), 0.0, EXACT)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            policy_surrogate(np.zeros((1, 2)), np.zeros((1, 2)), 0.0, "bogus")


class TestActionSelection:
    def test_greedy(self):
        assert select_action(np.array([0.2, 0.5, 0.3]), "greedy") == 1

    def test_greedy_tie_lowest(self):
        assert select_action(np.array([0.4, 0.4, 0.2]), "greedy") == 0

    def test_sample_uniformity(self):
        rng = np.random.default_rng(9)
        draws = select_action(np.full((60_000, 4), 0.25), "sample", rng)
        res = stats.chisquare(np.bincount(draws, minlength=4))
        assert res.pvalue > 0.01

    def test_sample_never_picks_zero_mass(self):
        draws = select_action(np.tile([0.0, 0.7, 0.0, 0.3], (5000, 1)), "sample", np.random.default_rng(1))
        assert set(np.unique(draws)) == {1, 3}


class TestSchedules:
    def test_beta_linear_then_zero(self):
        assert beta_schedule(0.01, 100, 200, 20, 0) == 0.01
        assert beta_schedule(0.01, 100, 200, 20, 50) == pytest.approx(0.005)
        assert beta_schedule(0.01, 100, 200, 20, 100) == 0.0
        assert beta_schedule(0.01, 180, 200, 20, 180) == 0.0

    def test_beta_bounds(self):
        with pytest.raises(ValueError):
            beta_schedule(0.01, 190, 200, 20, 0)

    def test_exp_endpoints_and_monotone(self):
        vals = [exp_schedule(0.97, 0.997, t, 2500) for t in range(0, 3000, 50)]
        assert vals[0] == 0.97 and vals[-1] == 0.997
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_nstep_decreases(self):
        ns = [nstep_schedule(10, 3, t, 2500) for t in range(0, 3000, 10)]
        assert ns[0] == 10 and ns[-1] == 3
        assert all(b <= a for a, b in zip(ns, ns[1:]))
