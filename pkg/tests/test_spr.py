import numpy as np
import pytest

from discrete_sac import autodiff as ad
from discrete_sac.exceptions import ContractError
from discrete_sac.spr import LatentRollout, rollout_latent, spr_loss


def _rollout(x_hat, y_hat, x_tilde, y_tilde, k=1, mask=None):
    return LatentRollout(horizon=k, latents=[], x_hat=x_hat, y_hat=y_hat, x_tilde=x_tilde, y_tilde=y_tilde,
                         mask=mask)


class TestRollout:
    def test_single_step(self):
        r = rollout_latent(lambda s: s * 1.0, lambda z, a: z + a[:, :1], np.zeros((2, 1)), np.array([0, 1]), 2)
        assert r.horizon == 1 and len(r.latents) == 1
        assert r.latents[0].ravel().tolist() == [1.0, 0.0]

    def test_identity_stub_keeps_latent(self):
        z0 = np.random.default_rng(0).normal(size=(3, 4))
        r = rollout_latent(lambda s: s, lambda z, a: z, z0, np.zeros((3, 5), int), 2)
        assert all(np.array_equal(z, z0) for z in r.latents)

    def test_horizon_beyond_window(self):
        with pytest.raises(ContractError):
            rollout_latent(lambda s: s, lambda z, a: z, np.zeros((1, 2)), np.zeros((1, 4), int), 2,
                           window_length=3)


class TestLoss:
    rng = np.random.default_rng(1)

    def test_perfect_prediction_is_minus_one(self):
        v = self.rng.normal(size=(6, 5))
        assert float(spr_loss(_rollout(v, v, v, v))) == pytest.approx(-1.0, abs=1e-14)

    def test_orthogonal_is_zero(self):
        a = np.array([[1.0, 0.0]])
        b = np.array([[0.0, 1.0]])
        assert float(spr_loss(_rollout(a, a, b, b))) == 0.0

    def test_scale_by_five(self):
        x, t = self.rng.normal(size=(4, 3)), self.rng.normal(size=(4, 3))
        base = float(spr_loss(_rollout(x, x, t, t)))
        assert abs(float(spr_loss(_rollout(5 * x, x, t, 5 * t))) - base) <= 1e-15

    def test_bounded(self):
        for _ in range(50):
            v = [self.rng.normal(size=(5, 3)) for _ in range(4)]
            assert -1.0 - 1e-12 <= float(spr_loss(_rollout(*v))) <= 1.0 + 1e-12

    def test_mask_drops_steps(self):
        a = np.array([[1.0, 0.0], [1.0, 0.0]])
        t = np.array([[1.0, 0.0], [-1.0, 0.0]])
        assert float(spr_loss(_rollout(a, a, t, t, mask=np.array([1.0, 0.0])))) == -1.0

    def test_empty_mask(self):
        a = np.ones((2, 2))
        with pytest.raises(ContractError):
            spr_loss(_rollout(a, a, a, a, mask=np.zeros(2)))

    def test_branch_diagnostics(self):
        a = np.array([[1.0, 0.0]])
        _, (cx, cy) = spr_loss(_rollout(a, a, a, -a), return_branches=True)
        assert (cx, cy) == (1.0, -1.0)

    def test_targets_get_no_gradient(self):
        g = ad.Graph()
        x = g.param("x", self.rng.normal(size=(3, 4)))
        tgt = self.rng.normal(size=(3, 4))
        grads = g.backward(spr_loss(_rollout(x, x, tgt, tgt)))
        assert set(grads) == {"x"} and np.any(grads["x"] != 0)

    def test_gradient_matches_finite_differences(self):
        x0 = self.rng.normal(size=(3, 4))
        tgt = self.rng.normal(size=(3, 4))
        g = ad.Graph()
        x = g.param("x", x0)
        analytic = g.backward(spr_loss(_rollout(x, x0, tgt, tgt)))["x"]
        h = 1e-5
        numeric = np.zeros_like(x0)
        for i in np.ndindex(x0.shape):
            xp, xm = x0.copy(), x0.copy()
            xp[i] += h
            xm[i] -= h
            numeric[i] = (float(spr_loss(_rollout(xp, x0, tgt, tgt)))
                          - float(spr_loss(_rollout(xm, x0, tgt, tgt)))) / (2 * h)
        assert np.linalg.norm(analytic - numeric) <= 1e-4 * np.linalg.norm(numeric)
