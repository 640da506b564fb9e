"""Scorer interface and deterministic synthetic followers.

A scorer produces, at each node, unnormalized action logits, their
log-softmax and a progress estimate in [-1, 1], plus a trajectory-level
speaker score. The synthetic scorers here shape those signals by graph
distance to the goal and perturb them with Gaussian noise keyed on the
query itself, so a confused scorer stays confused at the same node.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Protocol, Sequence

from .nav_graph import Episode, GraphError

_STD_NORMAL = NormalDist()

# noise stream tags
_MOVE, _STOP, _PM, _SPEAKER = 0, 1, 2, 3


@dataclass(frozen=True)
class Action:
    """``Action(target)`` moves to an adjacent node; ``Action(None)`` is Stop."""

    target: int | None = None

    @staticmethod
    def move(target: int) -> Action:
        return Action(int(target))

    @property
    def is_stop(self) -> bool:
        return self.target is None

    def sort_key(self) -> tuple[int, int]:
        return (0, -1) if self.target is None else (1, self.target)

    def __repr__(self) -> str:
        return "Stop" if self.target is None else f"Move({self.target})"


STOP = Action(None)


def logsumexp(values: Sequence[float]) -> float:
    m = max(values)
    return m + math.log(math.fsum(math.exp(v - m) for v in values))


@dataclass(frozen=True)
class StepSignals:
    """Signals observed at one node. ``actions`` is in canonical order: Stop, then moves by target."""

    actions: tuple[Action, ...]
    logits: dict[Action, float]
    log_probs: dict[Action, float]
    pm: float

    @classmethod
    def from_logits(cls, logits: dict[Action, float], pm: float) -> StepSignals:
        actions = tuple(sorted(logits, key=Action.sort_key))
        lse = logsumexp([logits[a] for a in actions])
        log_probs = {a: logits[a] - lse for a in actions}
        return cls(actions, dict(logits), log_probs, max(-1.0, min(1.0, pm)))

    def ranked(self) -> list[Action]:
        """Actions by descending logit; ties keep canonical order."""
        return sorted(self.actions, key=lambda a: -self.logits[a])

    def best(self) -> Action:
        best = self.actions[0]
        for a in self.actions[1:]:
            if self.logits[a] > self.logits[best]:
                best = a
        return best


@dataclass(frozen=True)
class SignalTrace:
    """Per-step signals of a trajectory.

    ``steps[i]`` pairs the action chosen at the i-th node with the signals seen
    there. ``terminal`` holds the signals at the endpoint of a completed
    trajectory and ``speaker`` its speaker score.
    """

    steps: tuple[tuple[Action, StepSignals], ...] = ()
    speaker: float | None = None
    terminal: StepSignals | None = None

    def __len__(self) -> int:
        return len(self.steps)

    def extend(self, action: Action, signals: StepSignals) -> SignalTrace:
        return SignalTrace(self.steps + ((action, signals),))

    def complete(self, terminal: StepSignals, speaker: float) -> SignalTrace:
        return SignalTrace(self.steps, speaker, terminal)

    @property
    def chosen_logits(self) -> list[float]:
        return [s.logits[a] for a, s in self.steps]

    @property
    def chosen_log_probs(self) -> list[float]:
        return [s.log_probs[a] for a, s in self.steps]

    @property
    def final_pm(self) -> float:
        if self.terminal is not None:
            return self.terminal.pm
        if not self.steps:
            raise ValueError("empty trace has no progress estimate")
        return self.steps[-1][1].pm


@dataclass(frozen=True)
class ScorerParams:
    noise_sigma: float = 0.0
    alignment_weight: float = 1.0
    stop_gain: float = 1.0
    pm_noise: float = 0.0
    speaker_noise: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("noise_sigma", "pm_noise", "speaker_noise"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {val!r}")
        for name in ("alignment_weight", "stop_gain"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


def keyed_normal(*key: object) -> float:
    """Standard normal deviate that is a pure function of ``key``."""
    digest = hashlib.blake2b(repr(key).encode(), digest_size=8).digest()
    bits = int.from_bytes(digest, "little") >> 11
    return _STD_NORMAL.inv_cdf((bits + 0.5) / 2.0**53)


def action_logits(
    episode: Episode, path: Sequence[int], current: int, params: ScorerParams
) -> StepSignals:
    """Signals at ``current``, the endpoint of the partial trajectory ``path``.

    Move logits are the alignment weight times the distance-to-goal drop per
    metre of edge, so every shortest-path edge scores exactly the weight and
    every other edge scores less. Stop scores positive only inside the
    success radius.
    """
    g = episode.graph
    if not 0 <= current < g.node_count:
        raise GraphError(f"node {current} not in graph")
    if not path or path[-1] != current or path[0] != episode.start:
        raise GraphError("partial trajectory is detached from the queried node")

    to_goal = g.distances(episode.goal).dist
    here = to_goal[current]
    sigma = params.noise_sigma
    keybase = (params.seed, episode.seed)
    logits: dict[Action, float] = {}
    for v, length in g.adjacency[current]:
        val = params.alignment_weight * (here - to_goal[v]) / length
        if sigma:
            val += sigma * keyed_normal(*keybase, _MOVE, current, v)
        logits[Action(v)] = val
    stop = params.stop_gain * (episode.success_radius - here)
    if sigma:
        stop += sigma * keyed_normal(*keybase, _STOP, current)
    logits[STOP] = stop

    pm = max(-1.0, min(1.0, 1.0 - here / episode.shortest_length))
    if params.pm_noise:
        pm += params.pm_noise * keyed_normal(*keybase, _PM, current)
    return StepSignals.from_logits(logits, pm)


def edit_distance(a: Sequence[int], b: Sequence[int]) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def speaker_score(episode: Episode, path: Sequence[int], params: ScorerParams) -> float:
    """Negative normalized edit distance between ``path`` and the reference route.

    ``path`` is the node sequence of a completed (stopped) trajectory.
    """
    if not path or path[0] != episode.start:
        raise ValueError("speaker needs a completed trajectory starting at the episode start")
    ref = episode.reference_path
    score = -edit_distance(path, ref) / (1 + len(ref))
    if params.speaker_noise:
        score += params.speaker_noise * keyed_normal(
            params.seed, episode.seed, _SPEAKER, tuple(path)
        )
    return score


class Scorer(Protocol):
    def step(self, episode: Episode, path: Sequence[int], current: int) -> StepSignals: ...

    def speaker(self, episode: Episode, path: Sequence[int]) -> float: ...


@dataclass(frozen=True)
class SyntheticScorer:
    params: ScorerParams

    def step(self, episode: Episode, path: Sequence[int], current: int) -> StepSignals:
        return action_logits(episode, path, current, self.params)

    def speaker(self, episode: Episode, path: Sequence[int]) -> float:
        return speaker_score(episode, path, self.params)


def perfect_scorer(episode: Episode) -> SyntheticScorer:
    """Noise-free scorer under which greedy decoding walks a shortest path to the goal.

    Stop gain is set so that ``stop_gain * radius`` is half the move weight:
    a shortest-path move (logit 1) beats Stop everywhere except at the goal,
    where every move has a negative logit.
    """
    return SyntheticScorer(
        ScorerParams(alignment_weight=1.0, stop_gain=0.5 / episode.success_radius)
    )
