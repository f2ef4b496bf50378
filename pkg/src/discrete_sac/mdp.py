"""Finite MDPs, seeded stepping, and the toy environments used for experiments."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ContractError, InvalidDimensionError, InvalidProbabilityError, MDPFormatError

STOCHASTIC_ATOL = 1e-12
EPISODE_CAP = 500

# gridworld action order
UP, RIGHT, DOWN, LEFT = range(4)
_MOVES = {UP: (0, -1), RIGHT: (1, 0), DOWN: (0, 1), LEFT: (-1, 0)}


@dataclass
class TabularMDP:
    """Explicit finite MDP.

    ``transition[s, a, s']`` is the next-state distribution and ``reward[s, a]``
    the expected reward. Terminal states self-loop with zero reward.
    """

    transition: np.ndarray
    reward: np.ndarray
    initial_dist: np.ndarray
    gamma: float
    terminal: np.ndarray
    r_min: float
    r_max: float

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.reward = np.asarray(self.reward, dtype=np.float64)
        self.initial_dist = np.asarray(self.initial_dist, dtype=np.float64)
        self.terminal = np.asarray(self.terminal, dtype=bool)
        self.gamma = float(self.gamma)
        self.r_min = float(self.r_min)
        self.r_max = float(self.r_max)
        check_mdp(self)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def with_rewards(self, reward, r_min=None, r_max=None) -> "TabularMDP":
        reward = np.asarray(reward, dtype=np.float64)
        return TabularMDP(
            self.transition.copy(), reward, self.initial_dist.copy(), self.gamma,
            self.terminal.copy(),
            reward.min() if r_min is None else r_min,
            reward.max() if r_max is None else r_max,
        )


def check_mdp(mdp: TabularMDP) -> TabularMDP:
    """Validate every structural invariant; raise ``ValueError`` subclasses."""
    P, R = mdp.transition, mdp.reward
    if P.ndim != 3 or P.shape[0] != P.shape[2] or P.shape[0] < 1 or P.shape[1] < 1:
        raise InvalidDimensionError(f"transition must have shape (S, A, S), got {P.shape}")
    S, A, _ = P.shape
    if R.shape != (S, A):
        raise InvalidDimensionError(f"reward must have shape {(S, A)}, got {R.shape}")
    if mdp.initial_dist.shape != (S,):
        raise InvalidDimensionError(f"initial_dist must have shape {(S,)}, got {mdp.initial_dist.shape}")
    if mdp.terminal.shape != (S,):
        raise InvalidDimensionError(f"terminal must have shape {(S,)}, got {mdp.terminal.shape}")
    if not np.all(np.isfinite(P)) or np.any(P < 0):
        raise InvalidProbabilityError("transition entries must be finite and nonnegative")
    bad = np.abs(P.sum(axis=2) - 1.0) > STOCHASTIC_ATOL
    if bad.any():
        s, a = map(int, np.argwhere(bad)[0])
        raise InvalidProbabilityError(f"transition row ({s}, {a}) sums to {P[s, a].sum()!r}")
    rho = mdp.initial_dist
    if np.any(rho < 0) or abs(rho.sum() - 1.0) > STOCHASTIC_ATOL:
        raise InvalidProbabilityError("initial_dist must be a probability vector")
    if not 0.0 < mdp.gamma < 1.0:
        raise InvalidProbabilityError(f"gamma must lie in (0, 1), got {mdp.gamma}")
    if not (np.isfinite(mdp.r_min) and np.isfinite(mdp.r_max)) or mdp.r_min > mdp.r_max:
        raise ValueError(f"invalid reward bounds [{mdp.r_min}, {mdp.r_max}]")
    if not np.all(np.isfinite(R)) or R.min() < mdp.r_min or R.max() > mdp.r_max:
        raise ValueError(f"rewards must lie within [{mdp.r_min}, {mdp.r_max}]")
    for s in np.flatnonzero(mdp.terminal):
        if np.any(P[s, :, s] != 1.0) or np.any(R[s] != 0.0):
            raise ValueError(f"terminal state {s} must self-loop with reward 0")
    return mdp


@dataclass
class EnvState:
    state_id: int
    step_count: int = 0
    done: bool = False


@dataclass(frozen=True)
class StepResult:
    next_state: int
    reward: float
    done: bool
    # episode ended by the step cap rather than a terminal state
    truncated: bool = False


def env_reset(mdp: TabularMDP, rng: np.random.Generator) -> EnvState:
    s = int(rng.choice(mdp.n_states, p=mdp.initial_dist))
    return EnvState(s, 0, bool(mdp.terminal[s]))


def env_step(mdp: TabularMDP, st: EnvState, action: int, rng: np.random.Generator,
             episode_cap: int = EPISODE_CAP) -> StepResult:
    """Sample one transition and advance ``st`` in place."""
    if st.done:
        raise ContractError("cannot step an environment whose episode is done")
    if not 0 <= action < mdp.n_actions:
        raise ContractError(f"action {action} out of range for {mdp.n_actions} actions")
    row = mdp.transition[st.state_id, action]
    # inverse-CDF draw: one uniform per step keeps streams replayable
    s_next = int(np.searchsorted(np.cumsum(row), rng.random(), side="right"))
    s_next = min(s_next, mdp.n_states - 1)
    while row[s_next] == 0.0:
        s_next -= 1
    reward = float(mdp.reward[st.state_id, action])
    st.state_id = s_next
    st.step_count += 1
    terminal = bool(mdp.terminal[s_next])
    truncated = not terminal and st.step_count >= episode_cap
    st.done = terminal or truncated
    return StepResult(s_next, reward, st.done, truncated)


def cell_index(width: int, x: int, y: int) -> int:
    return y * width + x


def build_gridworld(width: int, height: int, goal=(None, None), step_reward: float = -0.01,
                    goal_reward: float = 1.0, slip_prob: float = 0.0, start=(0, 0),
                    gamma: float = 0.99) -> TabularMDP:
    """Four-action gridworld; walls leave the agent in place.

    With probability ``slip_prob`` the executed action is replaced by one drawn
    uniformly from all four. ``reward[s, a]`` is the expected reward, so slips
    that reach the goal contribute ``goal_reward`` in proportion. ``start=None``
    spreads the initial distribution over every non-goal cell.
    """
    if width < 1 or height < 1 or width * height < 2:
        raise InvalidDimensionError(f"grid {width}x{height} needs at least two cells")
    if not 0.0 <= slip_prob < 1.0:
        raise InvalidProbabilityError(f"slip_prob must lie in [0, 1), got {slip_prob}")
    gx, gy = goal
    if gx is None:
        gx, gy = width - 1, height - 1
    if not (0 <= gx < width and 0 <= gy < height):
        raise InvalidDimensionError(f"goal {(gx, gy)} outside {width}x{height} grid")
    S, A = width * height, 4
    g = cell_index(width, gx, gy)

    def move(s, a):
        x, y = s % width, s // width
        dx, dy = _MOVES[a]
        nx, ny = x + dx, y + dy
        if 0 <= nx < width and 0 <= ny < height:
            return cell_index(width, nx, ny)
        return s

    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    for s in range(S):
        for a in range(A):
            if s == g:
                P[s, a, s] = 1.0
                continue
            for executed in range(A):
                w = (1.0 - slip_prob) * (executed == a) + slip_prob / A
                if w == 0.0:
                    continue
                s2 = move(s, executed)
                P[s, a, s2] += w
                R[s, a] += w * (goal_reward if s2 == g else step_reward)
    P /= P.sum(axis=2, keepdims=True)
    rho = np.zeros(S)
    if start is None:
        rho[:] = 1.0
        rho[g] = 0.0
    else:
        sx, sy = start
        if not (0 <= sx < width and 0 <= sy < height) or cell_index(width, sx, sy) == g:
            raise InvalidDimensionError(f"start {start} must be a non-goal cell")
        rho[cell_index(width, sx, sy)] = 1.0
    rho /= rho.sum()
    terminal = np.zeros(S, dtype=bool)
    terminal[g] = True
    lo = min(step_reward, goal_reward, 0.0)
    hi = max(step_reward, goal_reward, 0.0)
    # expectations of bounded rewards; clip away last-ulp accumulation error
    np.clip(R, lo, hi, out=R)
    return TabularMDP(P, R, rho, gamma, terminal, lo, hi)


def build_chain(length: int, right_reward: float = 1.0, gamma: float = 0.9) -> TabularMDP:
    """Deterministic chain: action 0 moves left (clamped), action 1 moves right.

    Stepping right into the last state pays ``right_reward`` and terminates.
    """
    if length < 2:
        raise InvalidDimensionError(f"chain length must be >= 2, got {length}")
    S, A = length, 2
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    last = S - 1
    for s in range(S):
        if s == last:
            P[s, :, s] = 1.0
            continue
        P[s, 0, max(s - 1, 0)] = 1.0
        P[s, 1, s + 1] = 1.0
        if s + 1 == last:
            R[s, 1] = right_reward
    rho = np.zeros(S)
    rho[0] = 1.0
    terminal = np.zeros(S, dtype=bool)
    terminal[last] = True
    return TabularMDP(P, R, rho, gamma, terminal, min(0.0, right_reward), max(0.0, right_reward))


def random_mdp(n_states: int, n_actions: int, gamma: float = 0.9, rng=None,
               reward_range=(0.0, 1.0)) -> TabularMDP:
    """Dense random MDP without terminal states (Dirichlet rows, uniform rewards)."""
    if n_states < 1 or n_actions < 1:
        raise InvalidDimensionError("random MDP needs at least one state and one action")
    rng = np.random.default_rng(rng)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    P /= P.sum(axis=2, keepdims=True)
    lo, hi = reward_range
    R = rng.uniform(lo, hi, size=(n_states, n_actions))
    rho = np.full(n_states, 1.0 / n_states)
    return TabularMDP(P, R, rho, gamma, np.zeros(n_states, dtype=bool), lo, hi)


# -- text serialization ------------------------------------------------------

_HEADER = "tabular-mdp 1"


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def dumps_mdp(mdp: TabularMDP) -> str:
    lines = [
        _HEADER,
        f"n_states {mdp.n_states}",
        f"n_actions {mdp.n_actions}",
        f"gamma {mdp.gamma!r}",
        f"reward_bounds {mdp.r_min!r} {mdp.r_max!r}",
        f"initial {_fmt(mdp.initial_dist)}",
        "terminal " + " ".join(str(int(t)) for t in mdp.terminal),
    ]
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            lines.append(f"transition {s} {a} {_fmt(mdp.transition[s, a])}")
    for s in range(mdp.n_states):
        lines.append(f"reward {s} {_fmt(mdp.reward[s])}")
    return "\n".join(lines) + "\n"


@dataclass
class _Parsed:
    fields: dict = field(default_factory=dict)
    where: dict = field(default_factory=dict)


def _floats(tokens, lineno):
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise MDPFormatError(lineno, f"expected numbers ({exc})") from None


def loads_mdp(text: str) -> TabularMDP:
    """Parse and validate; every failure names the offending line."""
    lines = text.splitlines()
    content = [(i + 1, ln.split("#", 1)[0].split()) for i, ln in enumerate(lines)]
    content = [(i, toks) for i, toks in content if toks]
    if not content or " ".join(content[0][1]) != _HEADER:
        raise MDPFormatError(content[0][0] if content else 1, f"expected header '{_HEADER}'")
    head: dict = {}
    where: dict = {}
    trans: dict = {}
    rew: dict = {}
    for lineno, toks in content[1:]:
        key, rest = toks[0], toks[1:]
        if key in ("n_states", "n_actions"):
            if len(rest) != 1 or not rest[0].isdigit():
                raise MDPFormatError(lineno, f"{key} needs one nonnegative integer")
            head[key] = int(rest[0])
        elif key == "gamma":
            if len(rest) != 1:
                raise MDPFormatError(lineno, "gamma needs one number")
            head[key] = _floats(rest, lineno)[0]
        elif key == "reward_bounds":
            if len(rest) != 2:
                raise MDPFormatError(lineno, "reward_bounds needs two numbers")
            head[key] = _floats(rest, lineno)
        elif key in ("initial", "terminal"):
            head[key] = _floats(rest, lineno)
        elif key == "transition":
            if len(rest) < 2 or not (rest[0].isdigit() and rest[1].isdigit()):
                raise MDPFormatError(lineno, "transition needs 's a p...'")
            trans[(int(rest[0]), int(rest[1]))] = (lineno, _floats(rest[2:], lineno))
        elif key == "reward":
            if not rest or not rest[0].isdigit():
                raise MDPFormatError(lineno, "reward needs 's r...'")
            rew[int(rest[0])] = (lineno, _floats(rest[1:], lineno))
        else:
            raise MDPFormatError(lineno, f"unknown key '{key}'")
        where.setdefault(key, lineno)
    last = content[-1][0]
    for key in ("n_states", "n_actions", "gamma", "reward_bounds", "initial", "terminal"):
        if key not in head:
            raise MDPFormatError(last, f"missing '{key}' line")
    S, A = head["n_states"], head["n_actions"]
    if S < 1 or A < 1:
        raise MDPFormatError(where["n_states"], "n_states and n_actions must be positive")
    for key in ("initial", "terminal"):
        if len(head[key]) != S:
            raise MDPFormatError(where[key], f"{key} needs {S} entries, got {len(head[key])}")
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    for s in range(S):
        for a in range(A):
            if (s, a) not in trans:
                raise MDPFormatError(last, f"missing transition row ({s}, {a})")
    for (s, a), (lineno, row) in trans.items():
        if s >= S or a >= A:
            raise MDPFormatError(lineno, f"transition index ({s}, {a}) out of range")
        if len(row) != S:
            raise MDPFormatError(lineno, f"transition row needs {S} entries, got {len(row)}")
        arr = np.asarray(row)
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise MDPFormatError(lineno, "transition entries must be finite and nonnegative")
        if abs(arr.sum() - 1.0) > STOCHASTIC_ATOL:
            raise MDPFormatError(lineno, f"transition row sums to {arr.sum()!r}, not 1")
        P[s, a] = arr
    for s in range(S):
        if s not in rew:
            raise MDPFormatError(last, f"missing reward row {s}")
    lo, hi = head["reward_bounds"]
    for s, (lineno, row) in rew.items():
        if s >= S:
            raise MDPFormatError(lineno, f"reward index {s} out of range")
        if len(row) != A:
            raise MDPFormatError(lineno, f"reward row needs {A} entries, got {len(row)}")
        if min(row) < lo or max(row) > hi:
            raise MDPFormatError(lineno, f"reward outside bounds [{lo}, {hi}]")
        R[s] = row
    rho = np.asarray(head["initial"])
    if np.any(rho < 0) or abs(rho.sum() - 1.0) > STOCHASTIC_ATOL:
        raise MDPFormatError(where["initial"], "initial distribution must be nonnegative and sum to 1")
    if not 0.0 < head["gamma"] < 1.0:
        raise MDPFormatError(where["gamma"], "gamma must lie in (0, 1)")
    terminal = np.asarray(head["terminal"]) != 0
    try:
        return TabularMDP(P, R, rho, head["gamma"], terminal, lo, hi)
    except ValueError as exc:
        raise MDPFormatError(where.get("terminal", last), str(exc)) from None


def save_mdp(mdp: TabularMDP, path) -> None:
    Path(path).write_text(dumps_mdp(mdp))


def load_mdp(path) -> TabularMDP:
    return loads_mdp(Path(path).read_text())
