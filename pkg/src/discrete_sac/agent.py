"""Learner state and the combined critic / policy / SPR gradient update."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import networks as net
from .exceptions import NonFiniteError
from .params import OptimState, ParamSet, adamw_step, ema_update, shrink_and_perturb
from .replay import NStepBatch, Windows
from .sac import SAMPLED, critic_loss, nstep_target, policy_surrogate, select_action
from .spr import rollout_latent, spr_loss


@dataclass
class LearnerSettings:
    n_states: int
    n_actions: int
    hidden: int = 128
    latent_dim: int = 64
    projection_dim: int = 32
    learning_rate: float = 1e-4
    weight_decay: float = 0.1
    adam_eps: float = 1.5e-4
    decay_policy: bool = True
    tau: float = 0.995
    spr_weight: float = 2.0
    spr_horizon: int = 5
    baseline: bool = True
    pg_mode: str = SAMPLED
    huber_delta: float = 1.0
    reset_keep_encoder: float = 0.5
    reset_keep_heads: float = 0.0
    # zero drops a term from the update (e.g. auxiliary-only training)
    critic_weight: float = 1.0
    policy_weight: float = 1.0


class SACLearner:
    """Online and EMA-target parameters for the discrete actor-critic.

    States are integer indices, featurized as one-hot vectors.
    """

    def __init__(self, settings: LearnerSettings, rng):
        self.settings = settings
        self.rng = rng
        specs = net.network_specs(settings.n_states, settings.n_actions, settings.hidden,
                                  settings.latent_dim, settings.projection_dim)
        self.params = ParamSet.initialize(specs, rng)
        self.target = self.params.copy()
        mask = None
        if not settings.decay_policy:
            mask = ~self.params.mask(list(net.POLICY_GROUPS))
        self.opt = OptimState.for_params(
            self.params, learning_rate=settings.learning_rate, weight_decay=settings.weight_decay,
            epsilon=settings.adam_eps, decay_mask=mask,
        )
        self._eye = np.eye(settings.n_states)

    # -- plain forward passes -------------------------------------------------------

    def features(self, states) -> np.ndarray:
        return self._eye[np.asarray(states, dtype=np.int64)]

    def policy_probs(self, states, which: str = "target") -> np.ndarray:
        ps = self.target if which == "target" else self.params
        z = net.encode(ps.__getitem__, self.features(states))
        return ad.softmax(net.policy_logits(ps.__getitem__, z))

    def q_table(self, states, which: str = "online") -> np.ndarray:
        ps = self.target if which == "target" else self.params
        return net.q_values(ps.__getitem__, net.encode(ps.__getitem__, self.features(states)))

    def act(self, states, mode: str = "sample", rng=None):
        """Actions from the target policy, as used for both acting and evaluation."""
        single = np.ndim(states) == 0
        probs = self.policy_probs(np.atleast_1d(states), "target")
        a = select_action(probs, mode, self.rng if rng is None else rng)
        return int(a[0]) if single else a

    # -- update ---------------------------------------------------------------------

    def losses(self, windows: Windows, n: int, gamma: float, beta: float, rng=None):
        """Build the graph for one update and return ``(graph, total, parts)``."""
        s = self.settings
        rng = self.rng if rng is None else rng
        P, T = self.params, self.target
        batch = NStepBatch.from_windows(windows, n)

        use_rl = bool(s.critic_weight or s.policy_weight)
        use_spr = bool(s.spr_weight)
        if not (use_rl or use_spr):
            raise ValueError("every loss weight is zero")

        # no-gradient passes only need each distinct state once
        k = s.spr_horizon
        future = windows.next_states[:, :k].T.ravel() if use_spr else np.empty(0, dtype=np.int64)
        boot = batch.bootstrap_states if use_rl else np.empty(0, dtype=np.int64)
        uniq = np.unique(np.concatenate([boot, future]))
        zt = net.encode(T.__getitem__, self.features(uniq))
        parts = {}

        graph = ad.Graph()
        p = net.graph_accessor(graph, P)
        z = net.encode(p, self.features(batch.states))
        terms = []
        if use_rl:
            q_targ = net.q_values(T.__getitem__, zt)
            probs = ad.softmax(net.policy_logits(P.__getitem__, net.encode(P.__getitem__, self.features(uniq))))

            def rows(table):
                return lambda st: table[np.searchsorted(uniq, st)]

            targets = nstep_target(batch, q_target=rows(q_targ), policy=rows(probs), gamma=gamma, rng=rng)
            q = net.q_values(p, z)
            critic = critic_loss(q, batch.actions, targets, s.huber_delta)
            # the policy reads a detached latent: only the policy-path tensors get its gradient
            logits = net.policy_logits(p, ad.stop_gradient(z))
            policy, pdiag = policy_surrogate(logits, ad.value(q), beta, s.pg_mode, rng, s.baseline)
            terms += [(critic, s.critic_weight), (policy, s.policy_weight)]
            parts.update({
                "critic_loss": float(ad.value(critic)),
                "policy_loss": float(ad.value(policy)),
                "entropy": pdiag["entropy"],
                "mean_advantage": pdiag["mean_advantage"],
                "baseline_mean": pdiag["baseline"],
                "target_mean": float(np.mean(targets)),
            })
        if use_spr:
            fut_idx = np.searchsorted(uniq, future)
            rollout = rollout_latent(lambda x: z, lambda zz, a: net.transition(p, zz, a),
                                     None, windows.actions[:, :k], s.n_actions)
            zhat = rollout.stacked_latents()
            rollout.x_hat = net.q_prediction(p, zhat)
            rollout.y_hat = net.pi_prediction(p, zhat)
            rollout.x_tilde = net.q_projection(T.__getitem__, zt)[fut_idx]
            rollout.y_tilde = net.pi_projection(T.__getitem__, zt)[fut_idx]
            rollout.mask = windows.valid[:, :k].T.ravel()
            spr, (cos_x, cos_y) = spr_loss(rollout, return_branches=True)
            terms.append((spr, s.spr_weight))
            parts.update({"spr_loss": float(ad.value(spr)), "spr_cos_x": cos_x, "spr_cos_y": cos_y})

        total = None
        for term, weight in terms:
            if weight:
                scaled = term if weight == 1.0 else ad.mul(term, weight)
                total = scaled if total is None else ad.add(total, scaled)
        return graph, total, parts

    def update(self, windows: Windows, n: int, gamma: float, beta: float) -> dict:
        graph, total, parts = self.losses(windows, n, gamma, beta)
        value = float(ad.value(total))
        if not np.isfinite(value):
            raise NonFiniteError(f"non-finite loss {value}")
        grads = graph.backward(total)
        flat = np.zeros(self.params.size)
        for name, g in grads.items():
            flat[self.params.slices[name]] = g.ravel()
        adamw_step(self.params, flat, self.opt)
        ema_update(self.target, self.params, self.settings.tau)
        parts["total_loss"] = value
        parts["grad_norm"] = float(np.sqrt(flat @ flat))
        return parts

    def reset(self, rng=None) -> None:
        """Shrink-and-perturb the encoder, fully re-initialize the heads.

        The target network takes the reset values and the optimizer moments of
        reset tensors are cleared.
        """
        rng = self.rng if rng is None else rng
        s = self.settings
        shrink_and_perturb(self.params, s.reset_keep_encoder, list(net.ENCODER_GROUPS), rng)
        shrink_and_perturb(self.params, s.reset_keep_heads, list(net.HEAD_GROUPS), rng)
        touched = self.params.mask(list(net.ENCODER_GROUPS) + list(net.HEAD_GROUPS))
        self.target.flat[touched] = self.params.flat[touched]
        self.opt.first_moment[touched] = 0.0
        self.opt.second_moment[touched] = 0.0
