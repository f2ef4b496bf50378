"""Self-predictive auxiliary loss over a latent rollout."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .exceptions import ContractError
from .networks import one_hot

NORM_EPS = 1e-8


@dataclass
class LatentRollout:
    """Predicted latents and the online/target vectors compared at each step.

    Vector fields are stacked step-major: rows ``j*B:(j+1)*B`` belong to
    step ``t+j+1``. Target fields are plain arrays (no gradient).
    """

    horizon: int
    latents: list
    x_hat: object = None
    y_hat: object = None
    x_tilde: np.ndarray | None = None
    y_tilde: np.ndarray | None = None
    mask: np.ndarray | None = field(default=None, repr=False)

    def stacked_latents(self):
        return ad.concat(self.latents, axis=0)


def rollout_latent(encoder, model, s_t, actions, n_actions: int, window_length: int | None = None) -> LatentRollout:
    """Unroll ``model`` from ``encoder(s_t)`` through ``actions`` (shape (B, k)).

    ``encoder`` maps a feature batch to latents; ``model(z, onehot_a)`` maps a
    latent and one-hot actions to the next latent.
    """
    actions = np.asarray(actions)
    if actions.ndim == 1:
        actions = actions[:, None]
    k = actions.shape[1]
    if k < 1:
        raise ContractError("rollout horizon must be >= 1")
    if window_length is not None and k > window_length:
        raise ContractError(f"horizon {k} exceeds stored window length {window_length}")
    z = encoder(s_t)
    latents = []
    for j in range(k):
        z = model(z, one_hot(actions[:, j], n_actions))
        latents.append(z)
    return LatentRollout(horizon=k, latents=latents)


def _cosines(online, target):
    target = np.asarray(target, dtype=np.float64)
    norm = np.sqrt((target * target).sum(axis=-1, keepdims=True))
    target_unit = target / np.maximum(norm, NORM_EPS)
    return ad.sum(ad.mul(ad.l2_normalize(online, NORM_EPS), target_unit), axis=-1)


def spr_loss(rollout: LatentRollout, return_branches: bool = False):
    """Negative mean cosine similarity over both branches and all steps.

    With every step valid this is ``-(1/2k) * sum_{j, v in {x, y}} cos(v_hat, v_tilde)``
    averaged over the batch. ``mask`` drops steps past an episode end. With
    ``return_branches`` the masked mean cosine of each branch is returned too.
    """
    cx = _cosines(rollout.x_hat, rollout.x_tilde)
    cy = _cosines(rollout.y_hat, rollout.y_tilde)
    n = ad.value(cx).shape[0]
    mask = np.ones(n) if rollout.mask is None else np.asarray(rollout.mask, dtype=np.float64)
    count = mask.sum()
    if count == 0:
        raise ContractError("SPR loss needs at least one valid step")
    total = ad.add(ad.sum(ad.mul(cx, mask)), ad.sum(ad.mul(cy, mask)))
    loss = ad.mul(total, -1.0 / (2.0 * count))
    if not return_branches:
        return loss
    branches = (float(ad.value(cx) @ mask / count), float(ad.value(cy) @ mask / count))
    return loss, branches
