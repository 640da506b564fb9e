"""Reranker training and evaluation on search candidate pools."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

from ..reranker import (
    PROFILES,
    CacheRow,
    RerankerModel,
    build_training_cache,
    init_model,
    load_checkpoint,
    make_pairs,
    pairwise_accuracy,
    train,
)
from ..search import fast_long
from .config import RunConfig, WorldConfig
from .runner import World, build_world, scorer_for

log = logging.getLogger(__name__)


def training_world_config(cfg: RunConfig) -> WorldConfig:
    """Same generator settings as the benchmark world, disjoint seeds."""
    return replace(cfg.world, seed=cfg.reranker.train_world_seed, n_graphs=cfg.reranker.train_graphs)


def candidate_cache(cfg: RunConfig, world: World) -> list[CacheRow]:
    scorer = scorer_for(cfg)
    search = fast_long(cfg.reranker.budget, global_fusion=None)
    rows: list[CacheRow] = []
    for eid, ep in world.episodes:
        rows.extend(build_training_cache([(str(eid), ep)], scorer(ep), search))
    return rows


@dataclass
class TrainOutcome:
    model: RerankerModel
    curve: list[float]
    rows: list[CacheRow]
    n_pairs: int
    train_accuracy: float


def train_reranker(cfg: RunConfig, world: World | None = None) -> TrainOutcome:
    world = world or build_world(training_world_config(cfg))
    rows = candidate_cache(cfg, world)
    pairs = make_pairs(rows)
    if not pairs:
        raise ValueError("training world produced no qualified/unqualified candidate pairs")
    hyper = PROFILES[cfg.reranker.profile]
    model, curve = train(init_model(cfg.reranker.seed, hyper), pairs, hyper, seed=cfg.reranker.seed)
    acc = pairwise_accuracy(model, pairs)
    log.info("reranker trained on %d pairs; final loss %.4f, train accuracy %.3f", len(pairs), curve[-1], acc)
    return TrainOutcome(model, curve, rows, len(pairs), acc)


def obtain_reranker(cfg: RunConfig) -> RerankerModel:
    if cfg.reranker.checkpoint is not None:
        return load_checkpoint(cfg.reranker.checkpoint)
    return train_reranker(cfg).model


def eval_reranker(cfg: RunConfig, model: RerankerModel, world: World | None = None) -> dict[str, float]:
    """Pairwise accuracy on the benchmark world's candidate pairs."""
    world = world or build_world(cfg.world)
    rows = candidate_cache(cfg, world)
    pairs = make_pairs(rows)
    return {
        "n_candidates": float(len(rows)),
        "n_pairs": float(len(pairs)),
        "pairwise_accuracy": pairwise_accuracy(model, pairs) if pairs else float("nan"),
    }
