"""Ring replay buffer with contiguous multi-step window sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ContractError


@dataclass(frozen=True)
class Transition:
    state: int
    action: int
    reward: float
    next_state: int
    done: bool
    # episode ended by the step cap; the next state still bootstraps
    truncated: bool = False


@dataclass
class Windows:
    """Contiguous replay windows of up to ``length`` steps starting at sampled indices.

    Step ``j`` of row ``i`` holds transition ``t + j``; ``valid[i, j]`` is False
    once the episode has ended or the data runs out. Valid steps form a prefix.
    """

    index: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminal: np.ndarray
    valid: np.ndarray


@dataclass
class NStepBatch:
    states: np.ndarray
    actions: np.ndarray
    # rewards r_{t+1..t+n}, zero beyond effective_n
    rewards: np.ndarray
    bootstrap_states: np.ndarray
    done_mask: np.ndarray
    effective_n: np.ndarray

    @classmethod
    def from_windows(cls, w: Windows, n: int) -> "NStepBatch":
        valid = w.valid[:, :n]
        eff = valid.sum(axis=1)
        rows = np.arange(len(eff))
        last = eff - 1
        return cls(
            states=w.states,
            actions=w.actions[:, 0],
            rewards=np.where(valid, w.rewards[:, :n], 0.0),
            bootstrap_states=w.next_states[rows, last],
            done_mask=w.terminal[rows, last],
            effective_n=eff,
        )


class ReplayBuffer:
    """Fixed-capacity FIFO store of tabular transitions (state indices)."""

    def __init__(self, capacity: int = 100_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._state = np.zeros(capacity, dtype=np.int64)
        self._action = np.zeros(capacity, dtype=np.int64)
        self._reward = np.zeros(capacity)
        self._next = np.zeros(capacity, dtype=np.int64)
        self._terminal = np.zeros(capacity, dtype=bool)
        # terminal or truncated: windows never continue past this step
        self._boundary = np.zeros(capacity, dtype=bool)
        self._cursor = 0
        self.size = 0
        self.total_added = 0

    def __len__(self) -> int:
        return self.size

    def add(self, state, action, reward, next_state, done, truncated=False) -> None:
        if not np.isfinite(reward):
            raise ContractError("reward must be finite")
        i = self._cursor
        self._state[i] = state
        self._action[i] = action
        self._reward[i] = reward
        self._next[i] = next_state
        self._terminal[i] = bool(done) and not truncated
        self._boundary[i] = bool(done) or bool(truncated)
        self._cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.total_added += 1

    def add_transition(self, tr: Transition) -> None:
        self.add(tr.state, tr.action, tr.reward, tr.next_state, tr.done, tr.truncated)

    def _oldest(self) -> int:
        return (self._cursor - self.size) % self.capacity

    def sample_indices(self, batch: int, rng) -> np.ndarray:
        """Uniform logical indices (0 = oldest stored transition)."""
        if self.size == 0:
            raise ContractError("cannot sample from an empty replay buffer")
        return rng.integers(0, self.size, size=batch)

    def windows(self, logical: np.ndarray, length: int) -> Windows:
        logical = np.asarray(logical, dtype=np.int64)
        offsets = np.arange(length)
        pos = logical[:, None] + offsets[None, :]
        available = pos < self.size
        phys = (self._oldest() + np.minimum(pos, self.size - 1)) % self.capacity
        boundary = self._boundary[phys] & available
        # a step is valid if no earlier step in the window closed the episode
        ended_before = np.zeros_like(boundary)
        ended_before[:, 1:] = np.cumsum(boundary, axis=1)[:, :-1] > 0
        valid = available & ~ended_before
        return Windows(
            index=logical,
            states=self._state[phys[:, 0]],
            actions=np.where(valid, self._action[phys], 0),
            rewards=np.where(valid, self._reward[phys], 0.0),
            next_states=self._next[phys],
            terminal=self._terminal[phys] & valid,
            valid=valid,
        )

    def sample_windows(self, batch: int, length: int, rng) -> Windows:
        return self.windows(self.sample_indices(batch, rng), length)


def replay_sample_nstep(buf: ReplayBuffer, batch: int, n: int, rng) -> NStepBatch:
    """Sample ``batch`` n-step windows, truncated at episode ends."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return NStepBatch.from_windows(buf.sample_windows(batch, n, rng), n)
