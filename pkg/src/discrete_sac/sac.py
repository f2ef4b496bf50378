"""Critic targets, critic loss, and the baselined score-function policy gradient."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .exceptions import NonFiniteError
from .replay import NStepBatch

SAMPLED, EXACT = "sampled", "exact"


def sample_categorical(probs: np.ndarray, rng) -> np.ndarray:
    """One draw per row of ``probs`` by inverse CDF."""
    probs = np.atleast_2d(probs)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0])[:, None] * cdf[:, -1:]
    idx = (cdf <= u).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def select_action(probs, mode: str, rng=None):
    """Sample from (``"sample"``) or take the argmax of (``"greedy"``) each row.

    Greedy ties go to the lowest index.
    """
    probs = np.asarray(probs, dtype=np.float64)
    single = probs.ndim == 1
    probs = np.atleast_2d(probs)
    if mode == "greedy":
        a = np.argmax(probs, axis=1)
    elif mode == "sample":
        a = sample_categorical(probs, rng)
    else:
        raise ValueError(f"unknown action-selection mode {mode!r}")
    return int(a[0]) if single else a


def nstep_target(batch: NStepBatch, q_target, policy, gamma: float, rng) -> np.ndarray:
    """n-step return bootstrapped with ``Q_targ(s_{t+n}, a')``, ``a' ~ policy(.|s_{t+n})``.

    ``q_target`` and ``policy`` map an array of state indices to (B, A) arrays
    of target Q-values and online-policy probabilities. The result is a plain
    array, so no gradient can reach the target networks.
    """
    n_max = batch.rewards.shape[1]
    discounts = gamma ** np.arange(n_max)
    ret = batch.rewards @ discounts
    alive = ~batch.done_mask
    boot = np.zeros_like(ret)
    if alive.any():
        states = batch.bootstrap_states[alive]
        a_next = sample_categorical(policy(states), rng)
        q_next = q_target(states)[np.arange(len(states)), a_next]
        boot[alive] = gamma ** batch.effective_n[alive] * q_next
    target = ret + boot
    if not np.all(np.isfinite(target)):
        raise NonFiniteError("non-finite critic target")
    return target


def critic_loss(q_online, actions, targets, delta: float = 1.0):
    """Mean Huber loss between ``Q(s_t, a_t)`` and fixed targets."""
    targets = np.asarray(targets, dtype=np.float64)
    if not np.all(np.isfinite(targets)):
        raise NonFiniteError("non-finite critic target")
    q_sa = ad.gather(q_online, actions)
    return ad.mean(ad.huber(ad.sub(q_sa, targets), delta))


@dataclass
class PolicyGradEstimate:
    """Ascent direction for the policy parameters plus diagnostics."""

    gradient: dict
    mean_advantage: float
    entropy: float
    baseline: float
    objective: float = 0.0
    actions: np.ndarray | None = field(default=None, repr=False)


def policy_surrogate(logits, q_ref, beta: float, mode: str = SAMPLED, rng=None, baseline: bool = True):
    """Scalar loss whose negative gradient is the policy-gradient estimate.

    ``q_ref`` holds ``Q_old(s, .)`` as a plain array. Sampled mode draws a
    fresh action per state from the current policy; exact mode enumerates all
    actions. The baseline is ``sum_a pi_old(a|s) Q_old(s, a)`` with ``pi_old``
    the current policy, held constant. The entropy bonus is differentiated in
    closed form.

    Returns ``(loss_node, diagnostics)``.
    """
    q_ref = np.asarray(q_ref, dtype=np.float64)
    if not np.all(np.isfinite(q_ref)):
        raise NonFiniteError("non-finite Q values in policy gradient")
    logp = ad.log_softmax(logits)
    probs = np.exp(ad.value(logp))
    b = (probs * q_ref).sum(axis=1) if baseline else np.zeros(len(q_ref))
    adv_table = q_ref - b[:, None]
    rows = np.arange(len(q_ref))
    if mode == SAMPLED:
        actions = sample_categorical(probs, rng)
        adv = adv_table[rows, actions]
        score_term = ad.mean(ad.mul(ad.gather(logp, actions), adv))
    elif mode == EXACT:
        actions = None
        weights = probs * adv_table
        adv = weights.sum(axis=1)
        score_term = ad.mul(ad.sum(ad.mul(logp, weights)), 1.0 / len(q_ref))
    else:
        raise ValueError(f"unknown policy-gradient mode {mode!r}")
    ent = ad.entropy_from_logits(logits)
    objective = score_term if beta == 0 else ad.add(score_term, ad.mul(ad.mean(ent), beta))
    diagnostics = {
        "mean_advantage": float(np.mean(adv)),
        "entropy": float(np.mean(ad.value(ent))),
        "baseline": float(np.mean(b)),
        "actions": actions,
    }
    return ad.mul(objective, -1.0), diagnostics


def policy_gradient(states, q_ref, logits_fn, params, beta: float, mode: str = SAMPLED, rng=None,
                    baseline: bool = True, names=None) -> PolicyGradEstimate:
    """Estimate the ascent direction for the policy parameters.

    ``logits_fn(p, states)`` builds the logits from an accessor ``p``;
    ``params`` is a :class:`ParamSet` or a plain name-keyed dict. Only
    ``names`` (default: every tensor) are differentiated.
    """
    graph = ad.Graph()
    names = set(params.names() if hasattr(params, "names") else params) if names is None else set(names)

    def p(name):
        return graph.param(name, params[name]) if name in names else np.asarray(params[name])

    logits = logits_fn(p, states)
    loss, diag = policy_surrogate(logits, q_ref, beta, mode, rng, baseline)
    grads = graph.backward(loss)
    ascent = {k: -g for k, g in grads.items()}
    return PolicyGradEstimate(ascent, diag["mean_advantage"], diag["entropy"], diag["baseline"],
                              -float(ad.value(loss)), diag["actions"])
