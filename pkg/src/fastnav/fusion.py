"""Local (partial-trajectory) and global (completed-trajectory) scoring."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

from .nav_graph import Episode
from .signals import SignalTrace

if TYPE_CHECKING:
    from .reranker import RerankerModel

PM_EPS = 1e-6


class DegeneratePMError(ArithmeticError):
    pass


@dataclass(frozen=True)
class LocalFusion:
    base: str  # "logit" | "log_prob"
    aggregate: str  # "sum" | "mean"
    pm_combine: str = "none"  # "none" | "div" | "mul"

    def __post_init__(self) -> None:
        if self.base not in ("logit", "log_prob"):
            raise ValueError(f"unknown base {self.base!r}")
        if self.aggregate not in ("sum", "mean"):
            raise ValueError(f"unknown aggregate {self.aggregate!r}")
        if self.pm_combine not in ("none", "div", "mul"):
            raise ValueError(f"unknown pm_combine {self.pm_combine!r}")
        if self.aggregate == "sum" and self.pm_combine == "div":
            raise ValueError("sum / pm is not one of the local fusion methods")

    @property
    def name(self) -> str:
        out = f"{self.base}_{self.aggregate}"
        return out if self.pm_combine == "none" else f"{out}_{self.pm_combine}_pm"

    @classmethod
    def from_name(cls, name: str) -> LocalFusion:
        for m in LOCAL_FUSIONS:
            if m.name == name:
                return m
        raise ValueError(f"unknown local fusion {name!r}")


LOCAL_FUSIONS: tuple[LocalFusion, ...] = (
    LocalFusion("logit", "mean"),
    LocalFusion("log_prob", "mean"),
    LocalFusion("logit", "sum"),
    LocalFusion("log_prob", "sum"),
    LocalFusion("logit", "mean", "div"),
    LocalFusion("log_prob", "mean", "div"),
    LocalFusion("logit", "mean", "mul"),
    LocalFusion("log_prob", "mean", "mul"),
    LocalFusion("logit", "sum", "mul"),
    LocalFusion("log_prob", "sum", "mul"),
)

LOGIT_SUM = LocalFusion("logit", "sum")


def _aggregate(values: Sequence[float], how: str) -> float:
    total = 0.0
    for v in values:
        total += v
    return total if how == "sum" else total / len(values)


def local_score(method: LocalFusion, trace: SignalTrace) -> float:
    if not trace.steps:
        raise ValueError("local score of an empty trace")
    values = trace.chosen_logits if method.base == "logit" else trace.chosen_log_probs
    score = _aggregate(values, method.aggregate)
    if method.pm_combine == "none":
        return score
    pm = trace.steps[-1][1].pm
    if method.pm_combine == "mul":
        return score * pm
    if abs(pm) < PM_EPS:
        raise DegeneratePMError(f"progress estimate {pm!r} too close to zero to divide by")
    return score / pm


def safe_local_score(method: LocalFusion, trace: SignalTrace) -> float:
    """``local_score`` with a degenerate progress divisor mapped to -inf."""
    try:
        return local_score(method, trace)
    except DegeneratePMError:
        return -math.inf


class GlobalFusion(str, enum.Enum):
    SUM_LOGIT = "g_sum_logit"
    MEAN_LOGIT = "g_mean_logit"
    SUM_LOG_PROB = "g_sum_log_prob"
    MEAN_LOG_PROB = "g_mean_log_prob"
    PM_FINAL = "g_pm_final"
    SPEAKER = "g_speaker"
    MLP_ALL = "g_mlp_all"
    ORACLE = "g_oracle"


TRACE_FUSIONS = (
    GlobalFusion.SUM_LOGIT,
    GlobalFusion.MEAN_LOGIT,
    GlobalFusion.SUM_LOG_PROB,
    GlobalFusion.MEAN_LOG_PROB,
    GlobalFusion.PM_FINAL,
    GlobalFusion.SPEAKER,
    GlobalFusion.MLP_ALL,
)


@dataclass(frozen=True)
class Candidate:
    """A completed trajectory: the node route it took and its signal trace."""

    path: tuple[int, ...]
    trace: SignalTrace
    local: float = 0.0

    @property
    def endpoint(self) -> int:
        return self.path[-1]


def global_score(
    method: GlobalFusion,
    candidate: Candidate,
    episode: Episode,
    reranker: RerankerModel | None = None,
) -> float:
    method = GlobalFusion(method)
    if method is GlobalFusion.ORACLE:
        return -episode.dist_to_goal(candidate.endpoint)
    if method is GlobalFusion.MLP_ALL and reranker is None:
        raise ValueError("g_mlp_all needs a trained reranker")
    trace = candidate.trace
    if not trace.steps:
        # The zero-step start candidate carries no statistics to rank by.
        return -math.inf
    if method is GlobalFusion.SUM_LOGIT:
        return _aggregate(trace.chosen_logits, "sum")
    if method is GlobalFusion.MEAN_LOGIT:
        return _aggregate(trace.chosen_logits, "mean")
    if method is GlobalFusion.SUM_LOG_PROB:
        return _aggregate(trace.chosen_log_probs, "sum")
    if method is GlobalFusion.MEAN_LOG_PROB:
        return _aggregate(trace.chosen_log_probs, "mean")
    if method is GlobalFusion.PM_FINAL:
        return trace.final_pm
    if method is GlobalFusion.SPEAKER:
        if trace.speaker is None:
            raise ValueError("candidate has no speaker score")
        return trace.speaker
    from .reranker import extract_features, forward

    return float(forward(reranker, [extract_features(trace)], mode="eval")[0])


def candidate_scores(
    method: GlobalFusion,
    candidates: Sequence[Candidate],
    episode: Episode,
    reranker: RerankerModel | None = None,
) -> list[float]:
    method = GlobalFusion(method)
    if method is not GlobalFusion.MLP_ALL:
        return [global_score(method, c, episode, reranker) for c in candidates]
    if reranker is None:
        raise ValueError("g_mlp_all needs a trained reranker")
    from .reranker import extract_features, forward

    scores = [-math.inf] * len(candidates)
    idx = [i for i, c in enumerate(candidates) if c.trace.steps]
    if idx:
        out = forward(reranker, [extract_features(candidates[i].trace) for i in idx], mode="eval")
        for i, s in zip(idx, out):
            scores[i] = float(s)
    return scores


def rank_candidates(
    method: GlobalFusion,
    candidates: Sequence[Candidate],
    episode: Episode,
    reranker: RerankerModel | None = None,
) -> list[int]:
    """Indices of ``candidates`` best first; ties go to the shorter route, then to insertion order."""
    if not candidates:
        return []
    scores = candidate_scores(method, candidates, episode, reranker)
    return sorted(range(len(candidates)), key=lambda i: (-scores[i], len(candidates[i].path), i))
