from __future__ import annotations

import csv
import io
import json
from dataclasses import replace

import pytest

from fastnav.harness import ConfigError, RunConfig, build_world, parse_config, run_benchmark
from fastnav.harness.analysis import analyze_pareto, analyze_recovery, run_fusion_ablation
from fastnav.harness.cli import main
from fastnav.harness.config import CONFIG_VERSION, DecoderConfig, ScorerConfig, WorldConfig
from fastnav.harness.runner import RESULT_COLUMNS, SUMMARY_COLUMNS, ResultRow, results_csv, summary_csv
from fastnav.nav_graph import load_world

SMALL = {
    "schema_version": CONFIG_VERSION,
    "world": {"n_graphs": 2, "episodes_per_graph": 8, "node_count": 40, "mean_degree": 4,
              "area_side": 14.0, "min_path_hops": 3, "max_path_hops": 6, "seed": 3},
    "reranker": {"train_graphs": 2, "train_world_seed": 77},
    "analysis": {"pareto": [1, 2, 5, 10, 20]},
}


def small_cfg(**kw) -> RunConfig:
    return replace(parse_config(json.loads(json.dumps(SMALL))), **kw)


@pytest.fixture(scope="module")
def small_result():
    return run_benchmark(small_cfg())


# ---------------------------------------------------------------------------
# config


def test_default_config_round_trips():
    cfg = RunConfig()
    assert parse_config(json.loads(cfg.to_json())) == cfg


@pytest.mark.parametrize(
    "mutate, field",
    [
        (lambda d: d.pop("schema_version"), "schema_version"),
        (lambda d: d.update(schema_version=2), "schema_version"),
        (lambda d: d["world"].update(node_count="many"), "world.node_count"),
        (lambda d: d["world"].update(colour=1), "world.colour"),
        (lambda d: d.update(decoders=[{"name": "x", "kind": "dfs"}]), "decoders[0].kind"),
        (lambda d: d.update(decoders=[{"name": "b", "kind": "beam", "beam_width": 0}]), "decoders[0].beam_width"),
        (lambda d: d.update(decoders=[{"name": "f", "kind": "fast", "local": "nope"}]), "decoders[0].local"),
        (lambda d: d.update(decoders=[{"name": "f", "kind": "fast", "stop": "max_expansions"}]),
         "decoders[0].max_expansions"),
        (lambda d: d.update(decoders=[{"name": "a", "kind": "greedy"}, {"name": "a", "kind": "greedy"}]),
         "decoders[1].name"),
        (lambda d: d.update(decoders=[{"kind": "greedy"}]), "decoders[0].name"),
        (lambda d: d["analysis"].update(pareto=[3, 0]), "analysis.pareto[1]"),
        (lambda d: d["analysis"].update(pareto_global="g_best"), "analysis.pareto_global"),
        (lambda d: d.update(scorer={"noise_sigma": -1.0}), "scorer.noise_sigma"),
        (lambda d: d.update(scorer={"seed": True}), "scorer.seed"),
        (lambda d: d["reranker"].update(profile="huge"), "reranker.profile"),
        (lambda d: d.update(workers=0), "workers"),
        (lambda d: d.update(extra=1), "extra"),
    ],
)
def test_config_errors_name_the_field(mutate, field):
    doc = json.loads(json.dumps(SMALL))
    mutate(doc)
    with pytest.raises(ConfigError) as info:
        parse_config(doc)
    assert info.value.field == field


# ---------------------------------------------------------------------------
# benchmark


def test_world_is_seeded():
    a, b = build_world(small_cfg().world), build_world(small_cfg().world)
    assert a == b
    other = build_world(replace(small_cfg().world, seed=4))
    assert other.episodes != a.episodes
    assert [eid for eid, _ in a.episodes] == list(range(16))


def test_perfect_scorer_greedy_and_fast_short_agree():
    cfg = small_cfg(
        scorer=ScorerConfig(perfect=True),
        decoders=(DecoderConfig("greedy", "greedy"), DecoderConfig("fast_short", "fast")),
    )
    res = run_benchmark(cfg)
    g, f = res.summary("greedy"), res.summary("fast_short")
    assert g.sr == f.sr == 1.0 and g.tl_mean == f.tl_mean
    assert all(r.divergence_step is None for r in res.rows)
    assert all(r.divergence_step is None for r in analyze_recovery(res.rows))


def test_rerun_and_parallel_csvs_identical(small_result):
    again = run_benchmark(small_cfg(workers=4))
    assert results_csv(again.rows) == results_csv(small_result.rows)
    assert summary_csv(again.summaries) == summary_csv(small_result.summaries)


def test_csv_schema(small_result):
    rows = list(csv.reader(io.StringIO(results_csv(small_result.rows))))
    assert tuple(rows[0]) == RESULT_COLUMNS
    names = [d.name for d in small_cfg().decoders]
    assert len(rows) - 1 == 16 * len(names)
    prev = (-1, -1)
    for r in rows[1:]:
        assert len(r) == len(RESULT_COLUMNS)
        eid, dec = int(r[0]), r[1]
        assert dec in names and r[2] in ("0", "1")
        assert 0.0 <= float(r[3]) <= 1.0 and float(r[4]) >= 0 and float(r[5]) >= 0
        assert int(r[6]) >= 0 and (r[7] == "" or int(r[7]) >= 1)
        key = (eid, names.index(dec))
        assert key > prev
        prev = key
    srows = list(csv.reader(io.StringIO(summary_csv(small_result.summaries))))
    assert tuple(srows[0]) == SUMMARY_COLUMNS
    for s in srows[1:]:
        assert float(s[4]) <= float(s[3])


def test_recovery_examples():
    rows = [ResultRow(i, "bad", False, 0.0, 1.0, 9.0, 1, 1) for i in range(5)]
    rows += [ResultRow(i, "good", True, 1.0, 1.0, 0.0, 1, None) for i in range(3)]
    rows += [ResultRow(9, "good", True, 0.5, 2.0, 0.0, 1, 2)]
    t = analyze_recovery(rows)
    bad = [r for r in t if r.decoder == "bad"]
    assert len(bad) == 1 and bad[0].divergence_step == 1 and bad[0].success_rate == 0.0 and bad[0].frequency == 1.0
    good = [r for r in t if r.decoder == "good"]
    assert [r.divergence_step for r in good] == [2, None]
    assert good[1].frequency == 0.75


def test_pareto_small():
    rows = analyze_pareto(small_cfg())
    incl = [r.oracle_inclusion for r in rows]
    assert incl == sorted(incl)
    assert rows[-1].sr >= rows[0].sr


def test_ablation_oracle_dominates_and_skips_mlp():
    local, glob = run_fusion_ablation(small_cfg())
    assert len(local) == 10
    names = [r.global_fusion for r in glob]
    assert "g_mlp_all" not in names and names[-1] == "g_oracle"
    assert all(glob[-1].sr >= r.sr for r in glob)


# ---------------------------------------------------------------------------
# CLI


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "cfg.json"
    doc = json.loads(json.dumps(SMALL))
    doc["decoders"] = [{"name": "greedy", "kind": "greedy", "max_steps": 8},
                       {"name": "fast_short", "kind": "fast", "max_steps": 8}]
    doc["output_dir"] = str(tmp_path / "out")
    p.write_text(json.dumps(doc))
    return p


def test_cli_gen_world(cfg_file, tmp_path):
    assert main(["gen-world", "--config", str(cfg_file), "--out", str(tmp_path / "worlds")]) == 0
    g, eps = load_world(tmp_path / "worlds" / "graph_000.json")
    assert len(eps) == 8 and g.node_count == 40


def test_cli_run_writes_csvs(cfg_file, tmp_path, capsys):
    assert main(["run", "--config", str(cfg_file), "--workers", "2"]) == 0
    out = tmp_path / "out"
    assert (out / "results.csv").exists() and (out / "summary.csv").exists() and (out / "recovery.csv").exists()
    assert "fast_short" in capsys.readouterr().out
    first = (out / "results.csv").read_bytes()
    assert main(["run", "--config", str(cfg_file)]) == 0
    assert (out / "results.csv").read_bytes() == first
    assert main(["analyze", "recovery", "--config", str(cfg_file), "--results", str(out / "results.csv")]) == 0


def test_cli_usage_errors(cfg_file, capsys):
    assert main(["run"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main(["run", "--config", str(cfg_file), "--frobnicate"]) == 1
    assert main(["bogus"]) == 1
    assert main(["analyze", "pareto", "--config", str(cfg_file), "--m", "1,x"]) == 1


def test_cli_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema_version": 1, "world": {"n_graphs": 0}}')
    assert main(["run", "--config", str(bad)]) == 1
    assert "world.n_graphs" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 1
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad)]) == 1


def test_cli_grad_check(capsys):
    assert main(["grad-check", "--seed", "3"]) == 0
    assert "max relative error" in capsys.readouterr().out


def test_cli_audit_failure_exit_code(cfg_file, monkeypatch):
    from fastnav import search

    def broken(*a, **k):
        raise search.SearchAuditError("injected")

    monkeypatch.setattr("fastnav.harness.runner.greedy_navigate", broken)
    assert main(["run", "--config", str(cfg_file)]) == 2


def test_cli_rerank_train_and_eval(cfg_file, tmp_path, capsys):
    out = tmp_path / "rr"
    assert main(["rerank", "train", "--config", str(cfg_file), "--out", str(out)]) == 0
    assert (out / "reranker.json").exists() and (out / "train_cache.csv").exists()
    ck = str(out / "reranker.json")
    assert main(["rerank", "eval", "--config", str(cfg_file), "--checkpoint", ck]) == 0
    assert "pairwise_accuracy" in capsys.readouterr().out
    assert main(["rerank", "eval", "--config", str(cfg_file)]) == 1
