"""MLP-scale actor-critic with self-predictive heads.

Parameters are read through an accessor ``p(name)``; pass ``graph_accessor``
to build a differentiable pass or ``params.__getitem__`` for a plain forward.

Module map (prefix -> role):

* ``encoder`` (3 dense layers, ReLU) state features -> latent
* ``transition`` latent + one-hot action -> next latent
* ``q_projection`` / ``q_head`` / ``q_predictor`` critic path
* ``pi_projection`` / ``policy_head`` / ``pi_predictor`` policy path
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .params import ParamSet, TensorSpec, dense_specs

CRITIC_GROUPS = ("encoder", "transition", "q_projection", "q_head", "q_predictor")
POLICY_GROUPS = ("pi_projection", "policy_head", "pi_predictor")
ENCODER_GROUPS = ("encoder", "transition")
HEAD_GROUPS = ("q_projection", "q_head", "q_predictor", "pi_projection", "policy_head", "pi_predictor")


def network_specs(n_inputs: int, n_actions: int, hidden: int = 128, latent_dim: int = 64,
                  projection_dim: int = 32) -> dict[str, TensorSpec]:
    specs: dict[str, TensorSpec] = {}
    specs.update(dense_specs("encoder.l1", n_inputs, hidden))
    specs.update(dense_specs("encoder.l2", hidden, hidden))
    specs.update(dense_specs("encoder.out", hidden, latent_dim))
    specs.update(dense_specs("transition", latent_dim + n_actions, latent_dim))
    specs.update(dense_specs("q_projection", latent_dim, projection_dim))
    specs.update(dense_specs("q_head", projection_dim, n_actions))
    specs.update(dense_specs("q_predictor", projection_dim, projection_dim))
    specs.update(dense_specs("pi_projection", latent_dim, projection_dim))
    specs.update(dense_specs("policy_head", projection_dim, n_actions))
    specs.update(dense_specs("pi_predictor", projection_dim, projection_dim))
    return specs


def graph_accessor(graph: ad.Graph, params: ParamSet):
    return lambda name: graph.param(name, params[name])


def dense(p, prefix, x):
    return ad.affine(x, p(prefix + ".w"), p(prefix + ".b"))


def encode(p, x):
    h = ad.relu(dense(p, "encoder.l1", x))
    h = ad.relu(dense(p, "encoder.l2", h))
    return ad.relu(dense(p, "encoder.out", h))


def transition(p, z, action_onehot):
    return ad.relu(dense(p, "transition", ad.concat([z, action_onehot], axis=1)))


def q_values(p, z):
    return dense(p, "q_head", ad.relu(dense(p, "q_projection", z)))


def policy_logits(p, z):
    return dense(p, "policy_head", ad.relu(dense(p, "pi_projection", z)))


def q_projection(p, z):
    return dense(p, "q_projection", z)


def pi_projection(p, z):
    return dense(p, "pi_projection", z)


def q_prediction(p, z):
    return dense(p, "q_predictor", q_projection(p, z))


def pi_prediction(p, z):
    return dense(p, "pi_predictor", pi_projection(p, z))


def one_hot(indices, n: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros(indices.shape + (n,))
    np.put_along_axis(out, indices[..., None], 1.0, axis=-1)
    return out
