"""World construction, decoder dispatch and the benchmark runner."""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from ..fusion import GlobalFusion, LocalFusion
from ..metrics import EpisodeMetrics, MetricSummary, aggregate, format_table
from ..nav_graph import Episode, EpisodeParams, GraphParams, NavGraph, generate_episode, generate_graph, save_world
from ..reranker import RerankerModel
from ..search import EpisodeResult, SearchConfig, beam_navigate, fast_navigate, greedy_navigate, random_navigate
from ..signals import Scorer, ScorerParams, SyntheticScorer, perfect_scorer
from .config import ConfigError, DecoderConfig, RunConfig, WorldConfig

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("episode_id", "decoder", "sr", "spl", "tl", "ne", "expansions", "divergence_step")
SUMMARY_COLUMNS = ("decoder", "tl", "ne", "sr", "spl", "n_episodes")


def fmt(x: float) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# worlds


@dataclass(frozen=True)
class World:
    graphs: tuple[NavGraph, ...]
    episodes: tuple[tuple[int, Episode], ...]  # (episode_id, episode), ids ascending


def build_world(cfg: WorldConfig) -> World:
    gp = GraphParams(cfg.node_count, cfg.mean_degree, cfg.area_side)
    ep = EpisodeParams(cfg.min_path_hops, cfg.success_radius, cfg.max_path_hops)
    graphs, episodes = [], []
    for gi in range(cfg.n_graphs):
        g = generate_graph(gp, cfg.graph_seed(gi))
        graphs.append(g)
        for ei in range(cfg.episodes_per_graph):
            episodes.append((gi * cfg.episodes_per_graph + ei, generate_episode(g, ep, cfg.episode_seed(gi, ei))))
    return World(tuple(graphs), tuple(episodes))


def write_world(world: World, cfg: WorldConfig, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for gi, g in enumerate(world.graphs):
        eps = [e for eid, e in world.episodes if eid // cfg.episodes_per_graph == gi]
        p = out / f"graph_{gi:03d}.json"
        save_world(g, eps, p)
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# decoders

Decoder = Callable[[Episode], EpisodeResult]


def scorer_for(cfg: RunConfig) -> Callable[[Episode], Scorer]:
    s = cfg.scorer
    if s.perfect:
        return perfect_scorer
    shared = SyntheticScorer(ScorerParams(
        noise_sigma=s.noise_sigma, alignment_weight=s.alignment_weight, stop_gain=s.stop_gain,
        pm_noise=s.pm_noise, speaker_noise=s.speaker_noise, seed=s.seed,
    ))
    return lambda _episode: shared


def search_config(d: DecoderConfig) -> SearchConfig:
    kw = {} if d.max_steps is None else {"max_steps": d.max_steps}
    return SearchConfig(
        strategy=d.strategy, local=LocalFusion.from_name(d.local),
        global_fusion=None if d.global_fusion is None else GlobalFusion(d.global_fusion),
        stop=d.stop, max_expansions=d.max_expansions, enqueue_k=d.enqueue_k,
        backtrack=d.backtrack, **kw,
    )


def make_decoder(
    d: DecoderConfig, scorer: Callable[[Episode], Scorer], reranker: RerankerModel | None = None
) -> Decoder:
    if d.needs_reranker and reranker is None:
        raise ConfigError("g_mlp_all needs a reranker checkpoint or in-process training", f"decoder {d.name}")
    steps = {} if d.max_steps is None else {"max_steps": d.max_steps}
    if d.kind == "greedy":
        return lambda e: greedy_navigate(e, scorer(e), **steps)
    if d.kind == "beam":
        return lambda e: beam_navigate(e, scorer(e), d.beam_width, d.rescore_lambda, **steps)
    if d.kind == "random":
        return lambda e: random_navigate(e, d.steps, d.seed + e.seed)
    sc = search_config(d)
    return lambda e: fast_navigate(e, scorer(e), sc, reranker)


def run_episodes(
    decoder: Decoder, episodes: Sequence[tuple[int, Episode]], workers: int = 1
) -> list[tuple[int, EpisodeResult]]:
    """Evaluate every episode; output order is by episode id whatever the scheduling."""
    if workers <= 1:
        out = [(eid, decoder(e)) for eid, e in episodes]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [(eid, pool.submit(decoder, e)) for eid, e in episodes]
            out = [(eid, f.result()) for eid, f in futures]
    return sorted(out, key=lambda t: t[0])


# ---------------------------------------------------------------------------
# benchmark


@dataclass(frozen=True)
class ResultRow:
    episode_id: int
    decoder: str
    success: bool
    spl: float
    tl: float
    ne: float
    expansions: int
    divergence_step: int | None
    visited_goal: bool = False

    def metrics(self) -> EpisodeMetrics:
        return EpisodeMetrics(self.tl, self.ne, self.success, self.spl)


def to_row(eid: int, name: str, episode: Episode, r: EpisodeResult) -> ResultRow:
    hit = any(episode.dist_to_goal(v) < episode.success_radius for v in r.visited)
    return ResultRow(eid, name, r.success, r.spl_term, r.tl, r.ne, r.expansions, r.divergence_step, hit)


@dataclass
class BenchmarkResult:
    rows: list[ResultRow]
    summaries: list[tuple[str, MetricSummary]]

    def summary(self, decoder: str) -> MetricSummary:
        return dict(self.summaries)[decoder]

    def rows_for(self, decoder: str) -> list[ResultRow]:
        return [r for r in self.rows if r.decoder == decoder]

    def table(self) -> str:
        return format_table(self.summaries)


def run_decoders(
    decoders: Sequence[DecoderConfig],
    world: World,
    scorer: Callable[[Episode], Scorer],
    reranker: RerankerModel | None = None,
    workers: int = 1,
) -> BenchmarkResult:
    by_id = dict(world.episodes)
    per: dict[str, list[ResultRow]] = {}
    for d in decoders:
        results = run_episodes(make_decoder(d, scorer, reranker), world.episodes, workers)
        per[d.name] = [to_row(eid, d.name, by_id[eid], r) for eid, r in results]
    rows = sorted((r for d in decoders for r in per[d.name]),
                  key=lambda r: (r.episode_id, [d.name for d in decoders].index(r.decoder)))
    summaries = [(d.name, aggregate(r.metrics() for r in per[d.name])) for d in decoders]
    return BenchmarkResult(rows, summaries)


def run_benchmark(
    cfg: RunConfig, reranker: RerankerModel | None = None, world: World | None = None
) -> BenchmarkResult:
    if cfg.needs_reranker and reranker is None:
        from .rerank import obtain_reranker

        reranker = obtain_reranker(cfg)
    world = world or build_world(cfg.world)
    return run_decoders(cfg.decoders, world, scorer_for(cfg), reranker, cfg.workers)


# ---------------------------------------------------------------------------
# CSV


def results_csv(rows: Sequence[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        w.writerow([
            r.episode_id, r.decoder, int(r.success), fmt(r.spl), fmt(r.tl), fmt(r.ne), r.expansions,
            "" if r.divergence_step is None else r.divergence_step,
        ])
    return buf.getvalue()


def summary_csv(summaries: Sequence[tuple[str, MetricSummary]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for name, s in summaries:
        w.writerow([name, fmt(s.tl_mean), fmt(s.ne_mean), fmt(s.sr), fmt(s.spl), s.n_episodes])
    return buf.getvalue()


def table_csv(header: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if x is None else fmt(x) if isinstance(x, float) else x for x in row])
    return buf.getvalue()


def write_benchmark(result: BenchmarkResult, out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rp, sp = out / "results.csv", out / "summary.csv"
    rp.write_text(results_csv(result.rows), encoding="utf-8")
    sp.write_text(summary_csv(result.summaries), encoding="utf-8")
    return rp, sp
