"""Input validation helpers shared by the estimators and metric functions."""

from __future__ import annotations

import numpy as np

from .exceptions import ContractError

SIMPLEX_ATOL = 1e-12


def check_policy(pi, n_states: int, n_actions: int, atol: float = SIMPLEX_ATOL) -> np.ndarray:
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (n_states, n_actions):
        raise ContractError(f"policy shape {pi.shape} does not match ({n_states}, {n_actions})")
    if np.any(pi < 0) or not np.all(np.isfinite(pi)):
        raise ContractError("policy entries must be finite and nonnegative")
    if np.any(np.abs(pi.sum(axis=1) - 1.0) > atol):
        raise ContractError("policy rows must sum to 1")
    return pi


def check_states(states, n_states: int) -> np.ndarray:
    """Coerce to a 1-D int array of valid state indices."""
    arr = np.atleast_1d(np.asarray(states))
    if arr.ndim != 1 or not np.issubdtype(arr.dtype, np.integer):
        raise ContractError("states must be a 1-D sequence of integer indices")
    if arr.size and (arr.min() < 0 or arr.max() >= n_states):
        raise ContractError(f"state index out of range [0, {n_states})")
    return arr.astype(np.int64)


def check_scores(values, name: str = "values") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError(f"{name} must be nonempty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
