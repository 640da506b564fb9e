"""TL / NE / SR / SPL per episode and over runs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .nav_graph import Episode, GraphError

# TL within this (relative) slack of the shortest length counts as shortest;
# it absorbs summation-order rounding between a walked path and Dijkstra.
SPL_SLACK = 1e-9


@dataclass(frozen=True)
class EpisodeMetrics:
    tl: float
    ne: float
    success: bool
    spl_term: float


def episode_metrics(episode: Episode, physical_path: Sequence[int], final_node: int) -> EpisodeMetrics:
    g = episode.graph
    if not physical_path or physical_path[0] != episode.start:
        raise GraphError("physical path must start at the episode start")
    for a, b in zip(physical_path, physical_path[1:]):
        if not g.has_edge(a, b):
            raise GraphError(f"physical path step {a}->{b} is not an edge")
    tl = g.path_length(physical_path)
    ne = episode.dist_to_goal(final_node)
    success = ne < episode.success_radius
    ell = episode.shortest_length
    p = max(tl, ell)
    if p - ell <= SPL_SLACK * max(1.0, ell):
        p = ell
    spl = ell / p if success else 0.0
    return EpisodeMetrics(tl, ne, success, spl)


def divergence_step(reference: Sequence[int], physical_path: Sequence[int]) -> int | None:
    """First step index at which the walked path leaves the reference route.

    Stopping short counts as diverging at the step where the next reference
    node was not reached; walking on past the goal diverges at the step after
    the goal.
    """
    n = min(len(reference), len(physical_path))
    for i in range(1, n):
        if physical_path[i] != reference[i]:
            return i
    if len(physical_path) == len(reference):
        return None
    return n


@dataclass(frozen=True)
class MetricSummary:
    tl_mean: float
    ne_mean: float
    sr: float
    spl: float
    n_episodes: int


def aggregate(metrics: Iterable[EpisodeMetrics]) -> MetricSummary:
    rows = list(metrics)
    if not rows:
        raise ValueError("cannot aggregate zero episodes")
    n = len(rows)
    return MetricSummary(
        tl_mean=math.fsum(r.tl for r in rows) / n,
        ne_mean=math.fsum(r.ne for r in rows) / n,
        sr=sum(1 for r in rows if r.success) / n,
        spl=math.fsum(r.spl_term for r in rows) / n,
        n_episodes=n,
    )


TABLE_COLUMNS = ("TL", "NE", "SR", "SPL")


def format_table(rows: Sequence[tuple[str, MetricSummary]]) -> str:
    """Plain-text summary in TL, NE, SR, SPL column order."""
    width = max([len("decoder")] + [len(name) for name, _ in rows])
    head = f"{'decoder':<{width}}  {'TL':>8}  {'NE':>7}  {'SR':>6}  {'SPL':>6}  {'n':>5}"
    lines = [head, "-" * len(head)]
    for name, s in rows:
        lines.append(
            f"{name:<{width}}  {s.tl_mean:8.2f}  {s.ne_mean:7.2f}  {s.sr:6.3f}  {s.spl:6.3f}  {s.n_episodes:5d}"
        )
    return "\n".join(lines)
