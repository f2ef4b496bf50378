"""Training loop, run configuration, logging, checkpoints and evaluation."""

from __future__ import annotations

import copy
import csv
import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .agent import LearnerSettings, SACLearner
from .exceptions import CheckpointVersionError, ConfigError, NonFiniteError
from .mdp import (EPISODE_CAP, TabularMDP, build_chain, build_gridworld, dumps_mdp, env_reset, env_step,
                  load_mdp, loads_mdp)
from .params import load_checkpoint, save_checkpoint
from .replay import ReplayBuffer
from .sac import EXACT, SAMPLED
from .schedules import beta_schedule, check_beta_bounds, exp_schedule, nstep_schedule

OUT_ENV_VAR = "DISCRETE_SAC_OUT"
SCORE_FIELDS = ("run_id", "seed", "phase", "episode", "return")


# -- configuration -------------------------------------------------------------------


@dataclass
class EnvSection:
    # gridworld | chain | file
    kind: str = "gridworld"
    width: int = 5
    height: int = 5
    slip_prob: float = 0.0
    step_reward: float = -0.01
    goal_reward: float = 1.0
    length: int = 8
    gamma: float = 0.99
    path: str | None = None
    episode_cap: int = EPISODE_CAP


@dataclass
class AgentSection:
    hidden: int = 64
    latent_dim: int = 32
    projection_dim: int = 16
    learning_rate: float = 1e-3
    weight_decay: float = 0.1
    adam_eps: float = 1.5e-4
    tau: float = 0.995
    spr_weight: float = 2.0
    spr_horizon: int = 5
    baseline: bool = True
    pg_mode: str = SAMPLED
    huber_delta: float = 1.0
    batch_size: int = 32
    buffer_capacity: int = 100_000
    keep_encoder: float = 0.5
    keep_heads: float = 0.0


@dataclass
class ScheduleSection:
    beta0: float = 0.01
    # "anneal" (linear to 0, then 0 for the final phase) | "constant" (beta0 throughout)
    beta_mode: str = "anneal"
    # None: anneal until the final-freeze phase starts
    anneal_end: int | None = None
    # None: 10% of the total update count
    final_freeze: int | None = None
    n_start: int = 10
    n_end: int = 3
    gamma_start: float = 0.97
    gamma_end: float = 0.997
    horizon: int = 2500
    reset_period: int = 2000


@dataclass
class EvalSection:
    episodes: int = 20
    mode: str = "sample"


@dataclass
class TrainSection:
    total_env_steps: int = 30_000
    replay_ratio: float = 2.0
    seed: int = 0
    seeds: list = field(default_factory=lambda: [0])
    # write a diagnostics record every this many updates
    diagnostics_every: int = 1
    # extra checkpoints every this many updates; 0 keeps only the final one
    checkpoint_every: int = 0
    run_id: str = "run"


SECTIONS = {
    "env": EnvSection,
    "agent": AgentSection,
    "schedules": ScheduleSection,
    "eval": EvalSection,
    "train": TrainSection,
}

# short names accepted by --set
ALIASES = {
    "rr": "train.replay_ratio",
    "steps": "train.total_env_steps",
    "seed": "train.seed",
    "seeds": "train.seeds",
    "lr": "agent.learning_rate",
    "beta0": "schedules.beta0",
    "baseline": "agent.baseline",
    "episodes": "eval.episodes",
    "eval_mode": "eval.mode",
}


@dataclass
class TrainConfig:
    env: EnvSection = field(default_factory=EnvSection)
    agent: AgentSection = field(default_factory=AgentSection)
    schedules: ScheduleSection = field(default_factory=ScheduleSection)
    eval: EvalSection = field(default_factory=EvalSection)
    train: TrainSection = field(default_factory=TrainSection)

    # derived counts ------------------------------------------------------------

    @property
    def total_updates(self) -> int:
        return updates_due(self.train.total_env_steps, self.train.replay_ratio)

    @property
    def final_freeze(self) -> int:
        f = self.schedules.final_freeze
        return int(0.1 * self.total_updates) if f is None else int(f)

    @property
    def anneal_end(self) -> int:
        a = self.schedules.anneal_end
        return self.total_updates - self.final_freeze if a is None else int(a)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **overrides) -> "TrainConfig":
        """Copy with dotted-key overrides, e.g. ``replace(**{"train.replay_ratio": 4})``."""
        cfg = copy.deepcopy(self)
        for key, value in overrides.items():
            set_key(cfg, key, value)
        validate_config(cfg)
        return cfg

    @classmethod
    def from_dict(cls, data: dict | None) -> "TrainConfig":
        cfg = cls()
        for section, values in (data or {}).items():
            if section not in SECTIONS:
                raise ConfigError(section, f"unknown section (expected one of {sorted(SECTIONS)})")
            if values is None:
                continue
            if not isinstance(values, dict):
                raise ConfigError(section, "section must be a mapping")
            for key, value in values.items():
                set_key(cfg, f"{section}.{key}", value)
        validate_config(cfg)
        return cfg


def updates_due(env_steps: int, replay_ratio: float) -> int:
    """Gradient updates owed after ``env_steps`` steps (exact for integer ratios)."""
    return int(math.floor(env_steps * replay_ratio + 1e-9))


def _coerce(key: str, current, value):
    if isinstance(value, str) and not isinstance(current, str):
        try:
            value = yaml.safe_load(value)
        except yaml.YAMLError as exc:
            raise ConfigError(key, f"cannot parse {value!r}: {exc}") from None
    if current is None or value is None:
        return value
    if isinstance(value, str) and isinstance(current, (int, float)) and not isinstance(current, bool):
        # YAML 1.1 reads "1e-3" as a string
        try:
            value = float(value)
        except ValueError:
            pass
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(current, list):
        if isinstance(value, int) and not isinstance(value, bool):
            value = [value]
        if not isinstance(value, list):
            raise ConfigError(key, f"expected a list, got {value!r}")
        return value
    if isinstance(current, str):
        return str(value)
    return value


def set_key(cfg: TrainConfig, key: str, value) -> None:
    """Assign one dotted ``section.field`` (or alias) on ``cfg``."""
    key = ALIASES.get(key, key)
    parts = key.split(".")
    if len(parts) != 2 or parts[0] not in SECTIONS:
        raise ConfigError(key, "unknown config key")
    section = getattr(cfg, parts[0])
    if parts[1] not in {f.name for f in dataclasses.fields(section)}:
        raise ConfigError(key, "unknown config key")
    setattr(section, parts[1], _coerce(key, getattr(section, parts[1]), value))


def validate_config(cfg: TrainConfig) -> TrainConfig:
    e, a, s, v, t = cfg.env, cfg.agent, cfg.schedules, cfg.eval, cfg.train
    if e.kind not in ("gridworld", "chain", "file"):
        raise ConfigError("env.kind", f"unknown environment kind {e.kind!r}")
    if e.kind == "file" and not e.path:
        raise ConfigError("env.path", "required when env.kind is 'file'")
    if e.episode_cap < 1:
        raise ConfigError("env.episode_cap", "must be >= 1")
    if not t.replay_ratio > 0:
        raise ConfigError("train.replay_ratio", "must be > 0")
    if t.total_env_steps < 1:
        raise ConfigError("train.total_env_steps", "must be >= 1")
    if t.diagnostics_every < 1:
        raise ConfigError("train.diagnostics_every", "must be >= 1")
    if t.checkpoint_every < 0:
        raise ConfigError("train.checkpoint_every", "must be >= 0")
    if not t.seeds or not all(isinstance(x, int) for x in t.seeds):
        raise ConfigError("train.seeds", "must be a nonempty list of integers")
    if not s.n_start >= s.n_end >= 1:
        raise ConfigError("schedules.n_start", "need n_start >= n_end >= 1")
    if not 0 < s.gamma_start <= s.gamma_end < 1:
        raise ConfigError("schedules.gamma_start", "need 0 < gamma_start <= gamma_end < 1")
    if s.horizon < 1:
        raise ConfigError("schedules.horizon", "must be >= 1")
    if s.reset_period < 0:
        raise ConfigError("schedules.reset_period", "must be >= 0 (0 disables resets)")
    if s.beta0 < 0:
        raise ConfigError("schedules.beta0", "must be >= 0")
    if s.beta_mode not in ("anneal", "constant"):
        raise ConfigError("schedules.beta_mode", "expected 'anneal' or 'constant'")
    total = cfg.total_updates
    if total < 1:
        raise ConfigError("train.total_env_steps", "run performs no gradient updates")
    if not 0 <= cfg.final_freeze < total:
        raise ConfigError("schedules.final_freeze", f"must lie in [0, {total}) total updates")
    try:
        check_beta_bounds(cfg.anneal_end, total, cfg.final_freeze)
    except ValueError as exc:
        raise ConfigError("schedules.anneal_end", str(exc)) from None
    if a.pg_mode not in (SAMPLED, EXACT):
        raise ConfigError("agent.pg_mode", f"expected {SAMPLED!r} or {EXACT!r}")
    if a.batch_size < 1:
        raise ConfigError("agent.batch_size", "must be >= 1")
    if a.spr_horizon < 1:
        raise ConfigError("agent.spr_horizon", "must be >= 1")
    if not 0 <= a.tau <= 1:
        raise ConfigError("agent.tau", "must lie in [0, 1]")
    for name in ("keep_encoder", "keep_heads"):
        if not 0 <= getattr(a, name) <= 1:
            raise ConfigError(f"agent.{name}", "must lie in [0, 1]")
    if a.learning_rate <= 0:
        raise ConfigError("agent.learning_rate", "must be > 0")
    if v.episodes < 0:
        raise ConfigError("eval.episodes", "must be >= 0")
    if v.mode not in ("sample", "greedy"):
        raise ConfigError("eval.mode", "expected 'sample' or 'greedy'")
    return cfg


def load_config(path, overrides=()) -> TrainConfig:
    """Read a YAML config file and apply ``key=value`` overrides."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(str(path), "config file not found")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"not valid YAML: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError(str(path), "top level must be a mapping of sections")
    cfg = TrainConfig.from_dict(data)
    return apply_overrides(cfg, overrides)


def apply_overrides(cfg: TrainConfig, overrides) -> TrainConfig:
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, value = item.split("=", 1)
        set_key(cfg, key.strip(), value.strip())
    return validate_config(cfg)


def make_env(env: EnvSection) -> TabularMDP:
    if env.kind == "gridworld":
        return build_gridworld(env.width, env.height, step_reward=env.step_reward,
                               goal_reward=env.goal_reward, slip_prob=env.slip_prob, gamma=env.gamma)
    if env.kind == "chain":
        return build_chain(env.length, right_reward=env.goal_reward, gamma=min(env.gamma, 0.999))
    return load_mdp(env.path)


def learner_settings(cfg: TrainConfig, mdp: TabularMDP) -> LearnerSettings:
    a = cfg.agent
    return LearnerSettings(
        n_states=mdp.n_states, n_actions=mdp.n_actions, hidden=a.hidden, latent_dim=a.latent_dim,
        projection_dim=a.projection_dim, learning_rate=a.learning_rate, weight_decay=a.weight_decay,
        adam_eps=a.adam_eps, tau=a.tau, spr_weight=a.spr_weight, spr_horizon=a.spr_horizon,
        baseline=a.baseline, pg_mode=a.pg_mode, huber_delta=a.huber_delta,
        reset_keep_encoder=a.keep_encoder, reset_keep_heads=a.keep_heads,
    )


# -- training ------------------------------------------------------------------------


@dataclass
class RunArtifacts:
    checkpoints: list
    score_log: Path
    diagnostics_log: Path
    config: dict
    seed: int
    out_dir: Path
    env_steps: int = 0
    updates: int = 0
    resets: int = 0
    eval_returns: list = field(default_factory=list)
    learner: object = field(default=None, repr=False)

    @property
    def final_checkpoint(self) -> Path:
        return self.checkpoints[-1]

    @property
    def mean_return(self) -> float:
        return float(np.mean(self.eval_returns)) if self.eval_returns else float("nan")


class TrainingAborted(RuntimeError):
    """Training stopped on a non-finite loss; ``snapshot`` holds the saved state."""

    def __init__(self, message: str, snapshot: Path | None = None):
        self.snapshot = snapshot
        super().__init__(message)


def default_out_root() -> Path:
    return Path(os.environ.get(OUT_ENV_VAR, "runs"))


def _streams(seed: int):
    env_ss, agent_ss, eval_ss = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(env_ss), np.random.default_rng(agent_ss),
            np.random.default_rng(eval_ss))


def _checkpoint(path, learner: SACLearner, cfg: TrainConfig, seed: int, counters: dict,
                mdp: TabularMDP) -> Path:
    meta = {"config": cfg.to_dict(), "seed": seed, "settings": dataclasses.asdict(learner.settings),
            "counters": counters, "mdp": dumps_mdp(mdp)}
    return save_checkpoint(path, {"online": learner.params, "target": learner.target}, learner.opt, meta)


def run_training(config: TrainConfig, rng=None, out_dir=None, mdp: TabularMDP | None = None) -> RunArtifacts:
    """Train one agent and evaluate it; ``rng`` is a seed (default ``train.seed``).

    ``mdp`` overrides the environment described by ``config.env``.

    Each env step is followed by the updates owed under the replay ratio, so
    ``updates == floor(env_steps * RR)`` holds after every step. The n-step
    length and discount restart their schedules after each reset; the entropy
    coefficient follows the global update count.
    """
    cfg = validate_config(copy.deepcopy(config))
    seed = cfg.train.seed if rng is None else int(rng)
    out = Path(out_dir) if out_dir is not None else default_out_root() / f"{cfg.train.run_id}-seed{seed}"
    out.mkdir(parents=True, exist_ok=True)
    env_rng, agent_rng, eval_rng = _streams(seed)

    mdp = make_env(cfg.env) if mdp is None else mdp
    learner = SACLearner(learner_settings(cfg, mdp), agent_rng)
    a, s = cfg.agent, cfg.schedules
    buf = ReplayBuffer(a.buffer_capacity)
    window = max(s.n_start, a.spr_horizon)
    total_updates, freeze, anneal_end = cfg.total_updates, cfg.final_freeze, cfg.anneal_end

    (out / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
    diag_path = out / "diagnostics.jsonl"
    score_path = out / "scores.csv"
    checkpoints = []
    updates = resets = since_reset = episode = 0
    episode_return = 0.0
    st = env_reset(mdp, env_rng)

    with open(diag_path, "w") as diag:
        for step in range(1, cfg.train.total_env_steps + 1):
            state = st.state_id
            action = learner.act(state, "sample", agent_rng)
            res = env_step(mdp, st, action, env_rng, cfg.env.episode_cap)
            buf.add(state, action, res.reward, res.next_state, res.done, res.truncated)
            episode_return += res.reward
            if st.done:
                diag.write(json.dumps({"event": "episode", "env_step": step, "episode": episode,
                                       "return": episode_return}) + "\n")
                episode += 1
                episode_return = 0.0
                st = env_reset(mdp, env_rng)

            while updates < updates_due(step, cfg.train.replay_ratio):
                if s.reset_period and since_reset >= s.reset_period and updates < total_updates - freeze:
                    learner.reset(agent_rng)
                    resets += 1
                    since_reset = 0
                    diag.write(json.dumps({"event": "reset", "update": updates, "env_step": step}) + "\n")
                n = nstep_schedule(s.n_start, s.n_end, since_reset, s.horizon)
                gamma = exp_schedule(s.gamma_start, s.gamma_end, since_reset, s.horizon)
                if s.beta_mode == "constant":
                    beta = s.beta0
                else:
                    beta = beta_schedule(s.beta0, anneal_end, total_updates, freeze, updates)
                batch = buf.sample_windows(a.batch_size, window, agent_rng)
                try:
                    parts = learner.update(batch, n, gamma, beta)
                except (NonFiniteError, FloatingPointError) as exc:
                    counters = {"env_steps": step, "updates": updates, "resets": resets}
                    snap = _checkpoint(out / "abort_snapshot.npz", learner, cfg, seed, counters, mdp)
                    diag.write(json.dumps({"event": "abort", "update": updates, "env_step": step,
                                           "error": str(exc)}) + "\n")
                    raise TrainingAborted(f"update {updates}: {exc}", snap) from exc
                updates += 1
                since_reset += 1
                if (updates - 1) % cfg.train.diagnostics_every == 0:
                    rec = {"event": "update", "update": updates, "env_step": step, "n": n,
                           "gamma": gamma, "beta": beta}
                    rec.update({k: v for k, v in parts.items() if isinstance(v, (int, float))})
                    diag.write(json.dumps(rec) + "\n")
                if cfg.train.checkpoint_every and updates % cfg.train.checkpoint_every == 0:
                    counters = {"env_steps": step, "updates": updates, "resets": resets}
                    checkpoints.append(_checkpoint(out / f"checkpoint_{updates:08d}.npz",
                                                   learner, cfg, seed, counters, mdp))

    counters = {"env_steps": cfg.train.total_env_steps, "updates": updates, "resets": resets}
    final = _checkpoint(out / "checkpoint_final.npz", learner, cfg, seed, counters, mdp)
    checkpoints.append(final)
    returns = evaluate(final, cfg.eval.episodes, cfg.eval.mode, eval_rng)
    with open(score_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCORE_FIELDS)
        for i, r in enumerate(returns):
            w.writerow([cfg.train.run_id, seed, f"eval-{cfg.eval.mode}", i, repr(float(r))])
    return RunArtifacts(checkpoints, score_path, diag_path, cfg.to_dict(), seed, out,
                        cfg.train.total_env_steps, updates, resets, returns, learner)


# -- evaluation ----------------------------------------------------------------------


def load_agent(checkpoint):
    """Rebuild ``(learner, mdp, config)`` from a checkpoint written by :func:`run_training`."""
    tensors, opt, meta = load_checkpoint(checkpoint)
    if "config" not in meta or "settings" not in meta:
        raise CheckpointVersionError(f"{checkpoint}: missing run metadata")
    cfg = TrainConfig.from_dict(meta["config"])
    mdp = loads_mdp(meta["mdp"]) if "mdp" in meta else make_env(cfg.env)
    learner = SACLearner(LearnerSettings(**meta["settings"]), np.random.default_rng(0))
    learner.params = tensors["online"]
    learner.target = tensors["target"]
    if opt is not None:
        learner.opt = opt
    return learner, mdp, cfg


def run_episodes(learner: SACLearner, mdp: TabularMDP, episodes: int, mode: str, rng,
                 episode_cap: int = EPISODE_CAP) -> list:
    """Undiscounted returns of ``episodes`` rollouts acting with the target policy."""
    if mode not in ("sample", "greedy"):
        raise ValueError(f"unknown evaluation mode {mode!r}")
    probs = learner.policy_probs(np.arange(mdp.n_states), "target")
    returns = []
    for _ in range(episodes):
        st = env_reset(mdp, rng)
        total = 0.0
        while not st.done:
            a = learner_action(probs[st.state_id], mode, rng)
            total += env_step(mdp, st, a, rng, episode_cap).reward
        returns.append(total)
    return returns


def learner_action(p: np.ndarray, mode: str, rng) -> int:
    if mode == "greedy":
        return int(np.argmax(p))
    cdf = np.cumsum(p)
    return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), len(p) - 1))


def evaluate(checkpoint, episodes: int, mode: str = "sample", rng=None) -> list:
    """Returns of ``episodes`` episodes under frozen checkpoint parameters."""
    if episodes < 0:
        raise ValueError("episodes must be >= 0")
    learner, mdp, cfg = load_agent(checkpoint)
    if episodes == 0:
        return []
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    return run_episodes(learner, mdp, episodes, mode, rng, cfg.env.episode_cap)
