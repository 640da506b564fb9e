"""Frontier-aware search with backtracking, plus greedy, beam and random decoders.

Every decoder accounts for physical motion: the agent only moves along graph
edges, and jumping between branches costs a walk through the part of the
graph it has already traversed.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterator, Sequence

import numpy as np

from .fusion import LOGIT_SUM, Candidate, GlobalFusion, LocalFusion, rank_candidates, safe_local_score
from .metrics import divergence_step, episode_metrics
from .nav_graph import Episode, NavGraph
from .signals import STOP, Action, Scorer, SignalTrace, StepSignals

if TYPE_CHECKING:
    from .reranker import RerankerModel

DEFAULT_MAX_STEPS = 80


class SearchAuditError(RuntimeError):
    """An internal bookkeeping invariant of a search was violated."""


# ---------------------------------------------------------------------------
# physical motion


class Walker:
    """Physical agent: its position, the walked node sequence and the traversed subgraph."""

    def __init__(self, graph: NavGraph, start: int):
        self.graph = graph
        self.position = start
        self.path = [start]
        self.explored: dict[int, dict[int, float]] = {start: {}}

    def step(self, v: int) -> None:
        u = self.position
        if not self.graph.has_edge(u, v):
            raise SearchAuditError(f"attempted move {u}->{v} along a non-edge")
        length = self.graph.edge_length(u, v)
        self.explored.setdefault(u, {})[v] = length
        self.explored.setdefault(v, {})[u] = length
        self.position = v
        self.path.append(v)

    def travel_to(self, node: int) -> float:
        route, meters = backtrack_travel(self.explored, self.position, node)
        for v in route:
            self.position = v
            self.path.append(v)
        return meters


def backtrack_travel(
    explored: dict[int, dict[int, float]], start: int, goal: int
) -> tuple[list[int], float]:
    """Shortest walk from ``start`` to ``goal`` inside the explored subgraph.

    Returns the nodes after ``start`` (empty when already there) and the
    metres walked.
    """
    if start not in explored or goal not in explored:
        raise SearchAuditError(f"travel {start}->{goal} leaves the explored subgraph")
    if start == goal:
        return [], 0.0
    dist = {start: 0.0}
    pred: dict[int, int] = {}
    heap = [(0.0, start)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        if u == goal:
            break
        done.add(u)
        for v, w in sorted(explored[u].items()):
            nd = d + w
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, v))
    if goal not in dist:
        raise SearchAuditError(f"node {goal} unreachable from {start} in the explored subgraph")
    route = [goal]
    while route[-1] != start:
        route.append(pred[route[-1]])
    route.pop()
    route.reverse()
    return route, dist[goal]


class MentalMap:
    """Cache of executed ``(node, Move)`` outcomes on top of a walker.

    Asking for an outcome already in the cache costs no motion; otherwise the
    agent walks to the node through explored space and executes the move.
    """

    def __init__(self, graph: NavGraph, start: int):
        self.walker = Walker(graph, start)
        self.outcomes: dict[tuple[int, int], int] = {}
        self.visited: dict[int, None] = {start: None}

    def __contains__(self, key: tuple[int, int]) -> bool:
        return key in self.outcomes

    def resolve(self, u: int, action: Action) -> int:
        key = (u, action.target)
        hit = self.outcomes.get(key)
        if hit is not None:
            return hit
        if u not in self.visited:
            raise SearchAuditError(f"proposal from unvisited node {u}")
        self.walker.travel_to(u)
        self.walker.step(action.target)
        self.outcomes[key] = action.target
        self.visited[action.target] = None
        return action.target


# ---------------------------------------------------------------------------
# queues


@dataclass(eq=False)
class PartialTrajectory:
    """Route ``path`` plus an action proposed (not executed) at its last node.

    ``trace`` covers every chosen action including the proposed one; the
    initial proposal has ``action=None`` and an empty trace.
    """

    path: tuple[int, ...]
    action: Action | None
    trace: SignalTrace
    score: float
    alive: bool = field(default=True, repr=False)

    @property
    def pairs(self) -> list[tuple[int, Action | None]]:
        acts: list[Action | None] = [Action(v) for v in self.path[1:]]
        return list(zip(self.path, acts + [self.action]))

    @property
    def steps(self) -> int:
        return len(self.path)


class FrontierQueue:
    """Max-queue on local score; ties go to fewer steps, then first in."""

    def __init__(self, audit: bool = False):
        self._heap: list[tuple[float, int, int, PartialTrajectory]] = []
        self._counter = itertools.count()
        self._live = 0
        self.audit = audit

    def __len__(self) -> int:
        return self._live

    def push(self, entry: PartialTrajectory) -> None:
        if math.isnan(entry.score):
            raise SearchAuditError("NaN local score entered the frontier")
        heapq.heappush(self._heap, (-entry.score, entry.steps, next(self._counter), entry))
        self._live += 1

    def discard(self, entry: PartialTrajectory) -> None:
        if entry.alive:
            entry.alive = False
            self._live -= 1

    def pop(self) -> PartialTrajectory:
        while self._heap:
            key = heapq.heappop(self._heap)
            entry = key[3]
            if not entry.alive:
                continue
            entry.alive = False
            self._live -= 1
            if self.audit:
                for other in self._heap:
                    if other[3].alive and other[:3] < key[:3]:
                        raise SearchAuditError("frontier pop was not maximal")
            return entry
        raise IndexError("pop from empty frontier")

    def entries(self) -> Iterator[PartialTrajectory]:
        return (k[3] for k in self._heap if k[3].alive)


class CandidateQueue:
    """Best-L completed trajectory per visited node, in first-visit order."""

    def __init__(self) -> None:
        self._by_node: dict[int, Candidate] = {}

    def offer(self, cand: Candidate) -> None:
        node = cand.endpoint
        cur = self._by_node.get(node)
        if cur is None or cand.local > cur.local:
            self._by_node[node] = cand

    def __len__(self) -> int:
        return len(self._by_node)

    def __contains__(self, node: int) -> bool:
        return node in self._by_node

    def get(self, node: int) -> Candidate:
        return self._by_node[node]

    def candidates(self) -> list[Candidate]:
        return list(self._by_node.values())


# ---------------------------------------------------------------------------
# configuration and results


@dataclass(frozen=True)
class SearchConfig:
    strategy: str = "exploit"  # "explore" | "exploit"
    local: LocalFusion = LOGIT_SUM
    global_fusion: GlobalFusion | None = None  # None: keep the trajectory the search ended on
    stop: str = "stop_action"  # "stop_action" | "max_expansions"
    max_expansions: int | None = None  # None = unbounded
    enqueue_k: int | None = None  # None = every feasible action
    backtrack: bool = True  # False pins exploit to its first trajectory (greedy reduction)
    max_steps: int | None = DEFAULT_MAX_STEPS
    audit: bool = False

    def __post_init__(self) -> None:
        if self.strategy not in ("explore", "exploit"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.stop not in ("stop_action", "max_expansions"):
            raise ValueError(f"unknown stop criterion {self.stop!r}")
        if self.max_expansions is not None and self.max_expansions < 1:
            raise ValueError("max_expansions must be >= 1")
        if self.enqueue_k is not None and self.enqueue_k < 1:
            raise ValueError("enqueue_k must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.global_fusion is not None:
            object.__setattr__(self, "global_fusion", GlobalFusion(self.global_fusion))


def fast_short(**kw) -> SearchConfig:
    return SearchConfig(strategy="exploit", stop="stop_action", **kw)


def fast_long(max_expansions: int = 40, global_fusion: GlobalFusion = GlobalFusion.MLP_ALL, **kw) -> SearchConfig:
    return SearchConfig(
        strategy="explore", stop="max_expansions", max_expansions=max_expansions,
        global_fusion=global_fusion, **kw,
    )


@dataclass
class EpisodeResult:
    final_trajectory: tuple[int, ...]
    physical_path: tuple[int, ...]
    tl: float
    ne: float
    success: bool
    spl_term: float
    expansions: int
    divergence_step: int | None
    truncated: bool = False
    visited: tuple[int, ...] = ()
    candidates: list[Candidate] = field(default_factory=list, repr=False)
    expansion_log: list[tuple[int, float]] = field(default_factory=list, repr=False)

    @property
    def final_node(self) -> int:
        return self.final_trajectory[-1]


def _finish(
    episode: Episode,
    final: Sequence[int],
    physical: Sequence[int],
    expansions: int,
    truncated: bool,
    **extra,
) -> EpisodeResult:
    m = episode_metrics(episode, physical, final[-1])
    success = m.success and not truncated
    return EpisodeResult(
        final_trajectory=tuple(final),
        physical_path=tuple(physical),
        tl=m.tl,
        ne=m.ne,
        success=success,
        spl_term=m.spl_term if success else 0.0,
        expansions=expansions,
        divergence_step=divergence_step(episode.reference_path, physical),
        truncated=truncated,
        **extra,
    )


# ---------------------------------------------------------------------------
# FAST


def fast_navigate(
    episode: Episode,
    scorer: Scorer,
    config: SearchConfig,
    reranker: RerankerModel | None = None,
) -> EpisodeResult:
    """Best-first search over partial trajectories with a mental map of executed moves.

    Each iteration resolves one proposed action to a node (by executing it or
    by mental-map lookup), pushes that node's feasible next proposals to the
    frontier, records the node as a candidate destination and then either
    extends the current trajectory with its best action (exploit) or jumps to
    the best proposal in the frontier (explore, or exploit after a loop).
    Proposals never lead back onto their own route. At termination the
    candidate pool is ranked by the global score, or, with no global score,
    the trajectory the search ended on is kept.
    """
    if config.global_fusion is GlobalFusion.MLP_ALL and reranker is None:
        raise ValueError("g_mlp_all needs a trained reranker")
    start = episode.start
    mmap = MentalMap(episode.graph, start)
    frontier = FrontierQueue(audit=config.audit)
    pool = CandidateQueue()
    budget = config.max_expansions if config.stop == "max_expansions" else None

    frontier.push(PartialTrajectory((start,), None, SignalTrace(), 0.0))
    active: PartialTrajectory | None = None
    need_backtrack = False
    expansions = moves = 0
    truncated = False
    ended_on: Candidate | None = None
    log: list[tuple[int, float]] = []

    while True:
        if budget is not None and expansions >= budget:
            break
        if active is None or need_backtrack:
            if not frontier:
                break
            active = frontier.pop()
            need_backtrack = False
        else:
            frontier.discard(active)
        u_prev, proposal = active.path[-1], active.action

        if proposal is not None and proposal.is_stop:
            sig = active.trace.steps[-1][1]
            cand = Candidate(active.path, active.trace.complete(sig, scorer.speaker(episode, active.path)), active.score)
            pool.offer(cand)
            if config.stop == "stop_action":
                ended_on = cand
                break
            active = None
            continue

        if proposal is None:
            node, path = u_prev, active.path
        else:
            if config.max_steps is not None and moves >= config.max_steps:
                truncated = True
                break
            node = mmap.resolve(u_prev, proposal)
            moves += 1
            path = active.path + (node,)
        executed = active.trace if proposal is not None else SignalTrace()
        sig = scorer.step(episode, path, node)
        expansions += 1
        log.append((node, active.score))

        on_route = set(path)
        feasible = [a for a in sig.ranked() if a.is_stop or a.target not in on_route]
        if config.enqueue_k is not None:
            feasible = feasible[: config.enqueue_k]
        children: dict[Action, PartialTrajectory] = {}
        for a in feasible:
            tr = executed.extend(a, sig)
            child = PartialTrajectory(path, a, tr, safe_local_score(config.local, tr))
            frontier.push(child)
            children[a] = child

        cand = Candidate(path, executed.complete(sig, scorer.speaker(episode, path)), active.score)
        pool.offer(cand)
        ended_on = cand

        best = sig.best()
        if config.strategy == "explore":
            need_backtrack = True
        elif best in children:
            active = children[best]
        elif not config.backtrack:
            tr = executed.extend(best, sig)
            active = PartialTrajectory(path, best, tr, safe_local_score(config.local, tr), alive=False)
        else:
            # best action loops back onto the route, or was cut by enqueue_k
            need_backtrack = True

    _audit_pool(mmap, pool)
    candidates = pool.candidates()
    if config.global_fusion is not None:
        order = rank_candidates(config.global_fusion, candidates, episode, reranker)
        final = candidates[order[0]]
    else:
        assert ended_on is not None
        final = ended_on
    mmap.walker.travel_to(final.endpoint)
    return _finish(
        episode,
        final.path,
        mmap.walker.path,
        expansions,
        truncated,
        visited=tuple(mmap.visited),
        candidates=candidates,
        expansion_log=log,
    )


def _audit_pool(mmap: MentalMap, pool: CandidateQueue) -> None:
    missing = [v for v in mmap.visited if v not in pool]
    if missing:
        raise SearchAuditError(f"visited nodes without a candidate: {missing}")


# ---------------------------------------------------------------------------
# baselines


def greedy_navigate(episode: Episode, scorer: Scorer, max_steps: int = DEFAULT_MAX_STEPS) -> EpisodeResult:
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    path = [episode.start]
    truncated = False
    while True:
        best = scorer.step(episode, path, path[-1]).best()
        if best.is_stop:
            break
        if len(path) - 1 >= max_steps:
            truncated = True
            break
        path.append(best.target)
    return _finish(episode, path, path, len(path), truncated, visited=tuple(dict.fromkeys(path)))


@dataclass(frozen=True)
class _Hyp:
    path: tuple[int, ...]
    score: float
    order: int


def beam_navigate(
    episode: Episode,
    scorer: Scorer,
    beam_width: int = 8,
    rescore_lambda: float = 0.5,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> EpisodeResult:
    """State-factored beam search over summed log-probabilities.

    At each depth at most one hypothesis survives per node. Hypotheses that
    choose Stop leave the beam as finished; search ends once ``beam_width``
    have finished. Finished routes are reranked by
    ``lambda * speaker + (1 - lambda) * follower log-prob``. Every leaf of the
    search is then rolled out physically from the start, in the order it was
    settled, returning to the start through explored space between rollouts.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    if not 0.0 <= rescore_lambda <= 1.0:
        raise ValueError("rescore_lambda must lie in [0, 1]")
    counter = itertools.count()
    beam = [_Hyp((episode.start,), 0.0, next(counter))]
    finished: list[_Hyp] = []
    cut: list[_Hyp] = []
    leaves: list[tuple[int, ...]] = []
    expansions = 0
    while beam and len(finished) < beam_width:
        pool = []
        for h in beam:
            sig = scorer.step(episode, h.path, h.path[-1])
            expansions += 1
            for a in sig.actions:
                pool.append((h.score + sig.log_probs[a], h.order, a.sort_key(), h, a))
        pool.sort(key=lambda t: (-t[0], t[1], t[2]))
        taken: list[tuple[float, _Hyp, Action]] = []
        seen: set[int] = set()
        for score, _, _, h, a in pool:
            if len(taken) >= beam_width:
                break
            if not a.is_stop:
                if a.target in seen:
                    continue
                seen.add(a.target)
            taken.append((score, h, a))
        survivors = {id(h) for _, h, _ in taken}
        for h in beam:
            if id(h) not in survivors:
                leaves.append(h.path)
        beam = []
        for score, h, a in taken:
            if a.is_stop:
                finished.append(_Hyp(h.path, score, next(counter)))
                leaves.append(h.path)
            elif len(h.path) - 1 >= max_steps:
                cut.append(h)
                leaves.append(h.path)
            else:
                beam.append(_Hyp(h.path + (a.target,), score, next(counter)))
    leaves.extend(h.path for h in beam)

    truncated = not finished
    if finished:
        lam = rescore_lambda

        def key(h: _Hyp) -> float:
            follower = (1.0 - lam) * h.score
            return follower if lam == 0.0 else lam * scorer.speaker(episode, h.path) + follower

        chosen = max(finished, key=key)
    else:
        chosen = max(cut + beam, key=lambda h: (h.score, -h.order))

    walker = Walker(episode.graph, episode.start)
    for leaf in dict.fromkeys(leaves):
        _realize(walker, leaf)
    walker.travel_to(chosen.path[-1])
    return _finish(
        episode, chosen.path, walker.path, expansions, truncated,
        visited=tuple(dict.fromkeys(walker.path)),
    )


def _realize(walker: Walker, path: Sequence[int]) -> None:
    # each beam is a separate rollout from the start
    walker.travel_to(path[0])
    for v in path[1:]:
        walker.step(v)


def random_navigate(episode: Episode, steps: int = 5, seed: int = 0) -> EpisodeResult:
    if steps < 0:
        raise ValueError("steps must be >= 0")
    rng = np.random.default_rng(seed)
    path = [episode.start]
    for _ in range(steps):
        nbrs = episode.graph.neighbors(path[-1])
        path.append(nbrs[int(rng.integers(len(nbrs)))])
    return _finish(episode, path, path, len(path), False, visited=tuple(dict.fromkeys(path)))


__all__ = [
    "STOP",
    "CandidateQueue",
    "EpisodeResult",
    "FrontierQueue",
    "MentalMap",
    "PartialTrajectory",
    "SearchAuditError",
    "SearchConfig",
    "StepSignals",
    "Walker",
    "backtrack_travel",
    "beam_navigate",
    "fast_long",
    "fast_navigate",
    "fast_short",
    "greedy_navigate",
    "random_navigate",
]
