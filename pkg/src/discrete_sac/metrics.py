"""Human-normalized aggregate metrics, stratified bootstrap intervals, subset sampling."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .exceptions import DegenerateAnchorError, FixtureChecksumError, MissingAnchorsError
from .validation import as_generator, check_scores

BENCHMARK_COLUMNS = ("sac_discrete", "sr_spr", "efficientzero", "bbf_rr2", "bbf_rr8", "sac_bbf_rr2")


def normalize(score, random, human):
    """``(score - random) / (human - random)``; works elementwise on arrays."""
    random = np.asarray(random, dtype=np.float64)
    human = np.asarray(human, dtype=np.float64)
    if np.any(human == random):
        raise DegenerateAnchorError("human and random anchors are equal")
    out = (np.asarray(score, dtype=np.float64) - random) / (human - random)
    return float(out) if out.ndim == 0 else out


# -- point metrics -------------------------------------------------------------------


def _trim_weights(n: int) -> np.ndarray:
    # overlap of [i, i+1) with the middle half [n/4, 3n/4) of the sorted positions
    lo, hi = n / 4.0, 3.0 * n / 4.0
    left = np.arange(n, dtype=np.float64)
    w = np.clip(np.minimum(left + 1.0, hi) - np.maximum(left, lo), 0.0, 1.0)
    return w / (n / 2.0)


def _iqm_rows(x: np.ndarray) -> np.ndarray:
    x = np.sort(x, axis=-1)
    out = x @ _trim_weights(x.shape[-1])
    flat = x[..., 0] == x[..., -1]
    return np.where(flat, x[..., 0], out)


def iqm(values) -> float:
    """Interquartile mean: the 25% trimmed mean, with boundary samples weighted
    by the fraction of them that falls inside the middle half."""
    return float(_iqm_rows(check_scores(values)))


def optimality_gap(normalized, threshold: float = 1.0) -> float:
    """Mean shortfall below ``threshold``, with scores above it capped."""
    x = check_scores(normalized, "normalized")
    return float(np.mean(threshold - np.minimum(x, threshold)))


def median(values) -> float:
    return float(np.median(check_scores(values)))


def mean(values) -> float:
    return float(np.mean(check_scores(values)))


def _gap_rows(x):
    return np.mean(1.0 - np.minimum(x, 1.0), axis=-1)


_ROW_METRICS = {
    "iqm": _iqm_rows,
    "optimality_gap": _gap_rows,
    "median": lambda x: np.median(x, axis=-1),
    "mean": lambda x: np.mean(x, axis=-1),
}
METRICS = tuple(_ROW_METRICS)
_METRIC_ALIASES = {"gap": "optimality_gap"}


def _metric_name(metric: str) -> str:
    name = _METRIC_ALIASES.get(metric, metric)
    if name not in _ROW_METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    return name


# -- score containers ----------------------------------------------------------------


@dataclass
class ScoreMatrix:
    """Raw per-run scores for each game plus ``(random, human)`` anchors.

    Games are kept sorted by name, so results do not depend on input order.
    """

    games: list
    scores: list
    anchors: dict

    def __post_init__(self):
        if len(self.games) != len(self.scores):
            raise ValueError("one score list per game is required")
        if not self.games:
            raise ValueError("score matrix has no games")
        missing = [g for g in self.games if g not in self.anchors]
        if missing:
            raise MissingAnchorsError(missing)
        order = sorted(range(len(self.games)), key=lambda i: self.games[i])
        self.games = [self.games[i] for i in order]
        self.scores = [check_scores(self.scores[i], f"scores[{self.games[j]}]")
                       for j, i in enumerate(order)]
        for g in self.games:
            r, h = self.anchors[g]
            if r == h:
                raise DegenerateAnchorError(f"{g}: human and random anchors are equal")

    @classmethod
    def from_dict(cls, scores: dict, anchors: dict) -> "ScoreMatrix":
        games = list(scores)
        return cls(games, [scores[g] for g in games], dict(anchors))

    @property
    def runs_per_game(self) -> list:
        return [len(s) for s in self.scores]

    def normalized(self) -> list:
        return [normalize(s, *self.anchors[g]) for g, s in zip(self.games, self.scores)]

    def pooled(self) -> np.ndarray:
        return np.concatenate(self.normalized())

    def game_means(self) -> np.ndarray:
        return np.array([s.mean() for s in self.normalized()])


@dataclass
class AggregateReport:
    iqm: float
    optimality_gap: float
    median: float
    mean: float
    # metric -> (low, high, confidence); empty when intervals were not computed
    ci: dict = field(default_factory=dict)
    games_above_human: int | None = None
    n_games: int = 0
    n_runs: int = 0

    def point(self, metric: str) -> float:
        return getattr(self, _metric_name(metric))

    def to_dict(self) -> dict:
        return {
            "iqm": self.iqm, "optimality_gap": self.optimality_gap, "median": self.median,
            "mean": self.mean, "games_above_human": self.games_above_human,
            "n_games": self.n_games, "n_runs": self.n_runs,
            "ci": {k: {"low": lo, "high": hi, "confidence": c} for k, (lo, hi, c) in self.ci.items()},
        }


# -- bootstrap -----------------------------------------------------------------------


def stratified_bootstrap_ci(matrix: ScoreMatrix, metric: str = "iqm", resamples: int = 2000,
                            confidence: float = 0.95, rng=None) -> tuple:
    """Percentile interval for ``metric`` over pooled normalized scores.

    Each resample draws every game's runs with replacement from that game
    alone, then recomputes the metric on the pooled result. Identical seeds
    give bitwise-identical intervals.
    """
    fn = _ROW_METRICS[_metric_name(metric)]
    if resamples < 1:
        raise ValueError("resamples must be >= 1")
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    rng = as_generator(rng)
    blocks = []
    for runs in matrix.normalized():
        idx = rng.integers(0, len(runs), size=(resamples, len(runs)))
        blocks.append(runs[idx])
    stats = fn(np.concatenate(blocks, axis=1))
    alpha = 1.0 - confidence
    low, high = np.percentile(stats, [100.0 * alpha / 2.0, 100.0 * (1.0 - alpha / 2.0)])
    return float(low), float(max(low, high))


def aggregate(matrix: ScoreMatrix, resamples: int = 2000, confidence: float = 0.95, rng=None,
              with_ci: bool = True) -> AggregateReport:
    """All point metrics over pooled normalized runs, optionally with bootstrap intervals.

    Every metric's interval uses its own child stream of ``rng``.
    """
    pooled = matrix.pooled()
    means = matrix.game_means()
    report = AggregateReport(
        iqm=iqm(pooled), optimality_gap=optimality_gap(pooled), median=median(pooled),
        mean=mean(pooled), games_above_human=int(np.sum(means > 1.0)),
        n_games=len(matrix.games), n_runs=int(pooled.size),
    )
    if with_ci:
        seed_seq = np.random.SeedSequence(rng) if not isinstance(rng, np.random.SeedSequence) else rng
        for name, child in zip(METRICS, seed_seq.spawn(len(METRICS))):
            lo, hi = stratified_bootstrap_ci(matrix, name, resamples, confidence, np.random.default_rng(child))
            report.ci[name] = (lo, hi, confidence)
    return report


# -- subset sampling -----------------------------------------------------------------


def random_subset(games, seed: int, count: int = 5) -> list:
    """Seeded shuffle of ``games`` (legacy NumPy Mersenne Twister), first ``count`` kept."""
    games = list(games)
    if count > len(games):
        raise ValueError(f"count {count} exceeds the {len(games)} available games")
    if count < 0:
        raise ValueError("count must be >= 0")
    order = np.asarray(games)
    np.random.RandomState(seed).shuffle(order)
    return [str(g) for g in order[:count]]


# -- files ---------------------------------------------------------------------------


def _fixture_path(name: str) -> Path:
    return Path(str(resources.files("discrete_sac") / "data" / name))


def verify_checksum(path, expected: str | None = None) -> str:
    """Compare a file's SHA-256 against ``expected`` or its ``.sha256`` sidecar."""
    path = Path(path)
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    if expected is None:
        sidecar = path.with_name(path.name + ".sha256")
        if not sidecar.is_file():
            raise FixtureChecksumError(f"{path}: checksum file {sidecar.name} missing")
        expected = sidecar.read_text().split()[0]
    if digest != expected:
        raise FixtureChecksumError(f"{path}: sha256 {digest} does not match {expected}")
    return digest


def load_benchmark(column: str = "sac_bbf_rr2", path=None, checksum: str | None = None) -> ScoreMatrix:
    """Per-game averages from the per-game benchmark table as a one-run-per-game matrix.

    Games without a value in ``column`` are skipped.
    """
    if column not in BENCHMARK_COLUMNS:
        raise ValueError(f"unknown column {column!r}; expected one of {BENCHMARK_COLUMNS}")
    path = _fixture_path("atari100k.csv") if path is None else Path(path)
    verify_checksum(path, checksum)
    scores, anchors = {}, {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            anchors[row["game"]] = (float(row["random"]), float(row["human"]))
            if row[column].strip():
                scores[row["game"]] = [float(row[column])]
    return ScoreMatrix.from_dict(scores, anchors)


def benchmark_regression(column: str = "sac_bbf_rr2", path=None, checksum: str | None = None) -> AggregateReport:
    """Aggregate metrics of the shipped per-game averages (no intervals)."""
    return aggregate(load_benchmark(column, path, checksum), with_ci=False)


def read_scores(path) -> dict:
    """``game,run_id,score`` rows to ``{game: [scores ordered by run_id]}``."""
    rows = {}
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.DictReader(fh), start=2):
            try:
                game, run, score = row["game"].strip(), row["run_id"].strip(), float(row["score"])
            except (KeyError, TypeError, ValueError, AttributeError):
                raise ValueError(f"{path}: line {i}: expected game,run_id,score") from None
            rows.setdefault(game, []).append((run, score))
    out = {}
    for game, runs in rows.items():
        runs.sort(key=lambda t: (len(t[0]), t[0]))
        out[game] = [s for _, s in runs]
    return out


def read_anchors(path) -> dict:
    """``game,random,human`` rows to ``{game: (random, human)}``."""
    out = {}
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.DictReader(fh), start=2):
            try:
                out[row["game"].strip()] = (float(row["random"]), float(row["human"]))
            except (KeyError, TypeError, ValueError, AttributeError):
                raise ValueError(f"{path}: line {i}: expected game,random,human") from None
    return out


def write_benchmark_inputs(column: str, scores_path, anchors_path) -> None:
    """Export a fixture column as score and anchor files for the metrics command."""
    m = load_benchmark(column)
    with open(scores_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["game", "run_id", "score"])
        for g, s in zip(m.games, m.scores):
            for j, v in enumerate(s):
                w.writerow([g, j, repr(float(v))])
    with open(anchors_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["game", "random", "human"])
        for g in m.games:
            w.writerow([g, *m.anchors[g]])
