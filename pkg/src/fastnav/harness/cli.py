"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 internal audit failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from ..nav_graph import WorldFormatError
from ..reranker import TrainingError, grad_check, init_model, load_checkpoint, random_batch, save_checkpoint, write_cache_csv
from ..search import SearchAuditError
from .analysis import (
    GLOBAL_COLUMNS,
    LOCAL_COLUMNS,
    PARETO_COLUMNS,
    RECOVERY_COLUMNS,
    analyze_pareto,
    analyze_recovery,
    run_fusion_ablation,
)
from .config import ConfigError, RunConfig, load_config
from .runner import ResultRow, build_world, run_benchmark, table_csv, write_benchmark, write_world
from .rerank import eval_reranker, train_reranker

EXIT_OK, EXIT_CONFIG, EXIT_AUDIT = 0, 1, 2
GRAD_TOLERANCE = 1e-4


class UsageError(Exception):
    def __init__(self, message: str, usage: str):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2; 2 is reserved for audit failures here
    def error(self, message: str):
        raise UsageError(message, self.format_usage())


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fastnav", description="Frontier-aware navigation search benchmark.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def common(sp: argparse.ArgumentParser, out_required: bool = False) -> None:
        sp.add_argument("--config", required=True, help="run configuration JSON")
        sp.add_argument("--out", required=out_required, help="output directory (default: config output_dir)")
        sp.add_argument("--seed", type=int, help="override the world seed (reranker seed for rerank)")
        sp.add_argument("--workers", type=int, help="episode-level parallelism")

    common(sub.add_parser("gen-world", help="generate and save the benchmark world"), out_required=True)
    common(sub.add_parser("run", help="run every configured decoder and write results"))

    an = sub.add_parser("analyze", help="recovery, pareto or ablation analysis")
    an_sub = an.add_subparsers(dest="analysis", parser_class=_Parser, required=True)
    rec = an_sub.add_parser("recovery", help="success rate by step of first divergence")
    common(rec)
    rec.add_argument("--results", help="reuse an existing results.csv instead of rerunning")
    par = an_sub.add_parser("pareto", help="sweep the exploration budget")
    common(par)
    par.add_argument("--m", help="comma-separated budgets, overriding the config")
    common(an_sub.add_parser("ablation", help="local and global fusion ablations"))

    rr = sub.add_parser("rerank", help="train or evaluate the candidate reranker")
    rr_sub = rr.add_subparsers(dest="action", parser_class=_Parser, required=True)
    common(rr_sub.add_parser("train", help="train on the training world and save a checkpoint"))
    ev = rr_sub.add_parser("eval", help="pairwise accuracy on the benchmark world")
    common(ev)
    ev.add_argument("--checkpoint", help="checkpoint path (default: config reranker.checkpoint)")

    gc = sub.add_parser("grad-check", help="finite-difference check of reranker gradients")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--config", help="unused; accepted for symmetry")
    gc.add_argument("--out", help="unused; accepted for symmetry")
    return p


def _load(args: argparse.Namespace, seed_target: str = "world") -> tuple[RunConfig, Path]:
    cfg = load_config(args.config)
    if args.seed is not None:
        if seed_target == "world":
            cfg = replace(cfg, world=replace(cfg.world, seed=args.seed))
        else:
            cfg = replace(cfg, reranker=replace(cfg.reranker, seed=args.seed))
    if getattr(args, "workers", None) is not None:
        if args.workers < 1:
            raise ConfigError("must be >= 1", "--workers")
        cfg = replace(cfg, workers=args.workers)
    out = Path(args.out or cfg.output_dir)
    return cfg, out


def _read_results(path: str) -> list[ResultRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            ResultRow(
                int(r["episode_id"]), r["decoder"], r["sr"] == "1", float(r["spl"]), float(r["tl"]),
                float(r["ne"]), int(r["expansions"]),
                None if r["divergence_step"] == "" else int(r["divergence_step"]),
            )
            for r in csv.DictReader(fh)
        ]


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    p = out / name
    p.write_text(text, encoding="utf-8")
    return p


def _recovery_csv(rows: Sequence[ResultRow]) -> str:
    table = analyze_recovery(rows)
    return table_csv(RECOVERY_COLUMNS, [(r.decoder, r.divergence_step, r.n, r.frequency, r.success_rate) for r in table])


def _dispatch(args: argparse.Namespace) -> int:
    cmd = args.command
    if cmd == "grad-check":
        report = grad_check(init_model(args.seed), random_batch(args.seed), tolerance=GRAD_TOLERANCE)
        print(f"max relative error {report.max_rel_error:.3e} (tolerance {GRAD_TOLERANCE:g})")
        for name in report.failures:
            print(f"  {name}: {report.per_param[name]:.3e}")
        return EXIT_OK if report.ok else EXIT_CONFIG

    if cmd == "gen-world":
        cfg, out = _load(args)
        paths = write_world(build_world(cfg.world), cfg.world, out)
        print(f"wrote {len(paths)} world files to {out}")
        return EXIT_OK

    if cmd == "run":
        cfg, out = _load(args)
        result = run_benchmark(cfg)
        rp, _ = write_benchmark(result, out)
        if cfg.analysis.recovery:
            _write(out, "recovery.csv", _recovery_csv(result.rows))
        print(result.table())
        print(f"results written to {rp.parent}")
        return EXIT_OK

    if cmd == "analyze":
        cfg, out = _load(args)
        if args.analysis == "recovery":
            rows = _read_results(args.results) if args.results else run_benchmark(cfg).rows
            print(_write(out, "recovery.csv", _recovery_csv(rows)).read_text(encoding="utf-8"), end="")
        elif args.analysis == "pareto":
            m_list = None
            if args.m:
                try:
                    m_list = [int(x) for x in args.m.split(",")]
                except ValueError:
                    raise ConfigError(f"expected comma-separated integers, got {args.m!r}", "--m") from None
                if any(m < 1 for m in m_list):
                    raise ConfigError("budgets must be >= 1", "--m")
            rows = analyze_pareto(cfg, m_list)
            text = table_csv(PARETO_COLUMNS, [(r.max_expansions, r.sr, r.spl, r.tl, r.oracle_inclusion) for r in rows])
            print(_write(out, "pareto.csv", text).read_text(encoding="utf-8"), end="")
        else:
            reranker = None
            if cfg.reranker.checkpoint is not None:
                reranker = load_checkpoint(cfg.reranker.checkpoint)
            local, glob = run_fusion_ablation(cfg, reranker=reranker)
            t3 = table_csv(LOCAL_COLUMNS, [(r.local_fusion, r.sr, r.spl, r.tl) for r in local])
            t4 = table_csv(GLOBAL_COLUMNS, [(r.global_fusion, r.sr, r.ne) for r in glob])
            _write(out, "ablation_local.csv", t3)
            _write(out, "ablation_global.csv", t4)
            print(t3 + "\n" + t4, end="")
        return EXIT_OK

    # rerank
    cfg, out = _load(args, seed_target="reranker")
    if args.action == "train":
        outcome = train_reranker(cfg)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(outcome.model, out / "reranker.json")
        write_cache_csv(outcome.rows, out / "train_cache.csv")
        _write(out, "loss.csv", table_csv(("epoch", "loss"), list(enumerate(outcome.curve))))
        print(f"trained on {outcome.n_pairs} pairs; train accuracy {outcome.train_accuracy:.4f}; "
              f"checkpoint {out / 'reranker.json'}")
        return EXIT_OK
    ckpt = args.checkpoint or cfg.reranker.checkpoint
    if ckpt is None:
        raise ConfigError("no checkpoint given (--checkpoint or reranker.checkpoint)", "reranker.checkpoint")
    stats = eval_reranker(cfg, load_checkpoint(ckpt))
    for k, v in stats.items():
        print(f"{k} {v:g}")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(exc.usage)
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _dispatch(args)
    except (ConfigError, WorldFormatError) as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except (SearchAuditError, TrainingError) as exc:
        sys.stderr.write(f"internal audit failure: {exc}\n")
        return EXIT_AUDIT


if __name__ == "__main__":
    raise SystemExit(main())
