"""Recovery-from-divergence, exploration-budget sweep and fusion ablations."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

from ..fusion import LOCAL_FUSIONS, TRACE_FUSIONS, GlobalFusion, rank_candidates
from ..metrics import aggregate
from ..reranker import RerankerModel
from ..search import SearchConfig, fast_long, fast_navigate
from .config import RunConfig
from .runner import ResultRow, World, build_world, run_episodes, scorer_for, to_row

log = logging.getLogger(__name__)

RECOVERY_COLUMNS = ("decoder", "divergence_step", "n", "frequency", "success_rate")
PARETO_COLUMNS = ("max_expansions", "sr", "spl", "tl", "oracle_inclusion")
LOCAL_COLUMNS = ("local_fusion", "sr", "spl", "tl")
GLOBAL_COLUMNS = ("global_fusion", "sr", "ne")


# ---------------------------------------------------------------------------
# recovery


@dataclass(frozen=True)
class RecoveryRow:
    decoder: str
    divergence_step: int | None  # None: never left the reference route
    n: int
    frequency: float
    success_rate: float


def analyze_recovery(rows: Sequence[ResultRow]) -> list[RecoveryRow]:
    """Success rate conditioned on the step of first divergence, per decoder."""
    decoders = list(dict.fromkeys(r.decoder for r in rows))
    out = []
    for d in decoders:
        mine = [r for r in rows if r.decoder == d]
        groups: dict[int | None, list[ResultRow]] = {}
        for r in mine:
            groups.setdefault(r.divergence_step, []).append(r)
        for step in sorted(groups, key=lambda s: (s is None, s or 0)):
            g = groups[step]
            out.append(RecoveryRow(d, step, len(g), len(g) / len(mine), sum(r.success for r in g) / len(g)))
    return out


def recovery_rate(table: Sequence[RecoveryRow], decoder: str, step: int) -> float:
    for r in table:
        if r.decoder == decoder and r.divergence_step == step:
            return r.success_rate
    return math.nan


# ---------------------------------------------------------------------------
# exploration budget sweep


@dataclass(frozen=True)
class ParetoRow:
    max_expansions: int
    sr: float
    spl: float
    tl: float
    oracle_inclusion: float


def analyze_pareto(
    cfg: RunConfig,
    m_list: Sequence[int] | None = None,
    world: World | None = None,
    reranker: RerankerModel | None = None,
) -> list[ParetoRow]:
    m_list = tuple(cfg.analysis.pareto if m_list is None else m_list)
    world = world or build_world(cfg.world)
    scorer = scorer_for(cfg)
    g = GlobalFusion(cfg.analysis.pareto_global)
    if g is GlobalFusion.MLP_ALL and reranker is None:
        from .rerank import obtain_reranker

        reranker = obtain_reranker(cfg)
    by_id = dict(world.episodes)
    out = []
    for m in m_list:
        sc = fast_long(m, global_fusion=g, max_steps=None)
        results = run_episodes(lambda e, sc=sc: fast_navigate(e, scorer(e), sc, reranker), world.episodes, cfg.workers)
        rows = [to_row(eid, f"M={m}", by_id[eid], r) for eid, r in results]
        s = aggregate(r.metrics() for r in rows)
        out.append(ParetoRow(m, s.sr, s.spl, s.tl_mean, sum(r.visited_goal for r in rows) / len(rows)))
    return out


# ---------------------------------------------------------------------------
# fusion ablations


@dataclass(frozen=True)
class LocalRow:
    local_fusion: str
    sr: float
    spl: float
    tl: float


@dataclass(frozen=True)
class GlobalRow:
    global_fusion: str
    sr: float
    ne: float


def local_ablation(cfg: RunConfig, world: World) -> list[LocalRow]:
    scorer = scorer_for(cfg)
    steps = cfg.analysis.ablation_max_steps
    out = []
    for method in LOCAL_FUSIONS:
        sc = SearchConfig(strategy="exploit", stop="stop_action", local=method, max_steps=steps)
        results = run_episodes(lambda e, sc=sc: fast_navigate(e, scorer(e), sc), world.episodes, cfg.workers)
        s = aggregate(to_row(eid, method.name, dict(world.episodes)[eid], r).metrics() for eid, r in results)
        out.append(LocalRow(method.name, s.sr, s.spl, s.tl_mean))
    return out


def global_ablation(cfg: RunConfig, world: World, reranker: RerankerModel | None = None) -> list[GlobalRow]:
    """Pick a destination from each cached candidate pool with every global score."""
    scorer = scorer_for(cfg)
    sc = fast_long(cfg.analysis.ablation_budget, global_fusion=None, max_steps=None)
    pools = run_episodes(lambda e: fast_navigate(e, scorer(e), sc), world.episodes, cfg.workers)
    by_id = dict(world.episodes)
    methods = [m for m in TRACE_FUSIONS if m is not GlobalFusion.MLP_ALL or reranker is not None]
    if reranker is None:
        log.warning("no trained reranker supplied; skipping the %s row", GlobalFusion.MLP_ALL.value)
    out = []
    for m in [*methods, GlobalFusion.ORACLE]:
        hits, errs = 0, []
        for eid, r in pools:
            ep = by_id[eid]
            pick = r.candidates[rank_candidates(m, r.candidates, ep, reranker)[0]]
            ne = ep.dist_to_goal(pick.endpoint)
            hits += ne < ep.success_radius
            errs.append(ne)
        out.append(GlobalRow(m.value, hits / len(pools), math.fsum(errs) / len(errs)))
    return out


def run_fusion_ablation(
    cfg: RunConfig, world: World | None = None, reranker: RerankerModel | None = None
) -> tuple[list[LocalRow], list[GlobalRow]]:
    world = world or build_world(cfg.world)
    return local_ablation(cfg, world), global_ablation(cfg, world, reranker)
