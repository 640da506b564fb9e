from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import episode_on, line_graph
from fastnav.fusion import (
    LOCAL_FUSIONS,
    LOGIT_SUM,
    TRACE_FUSIONS,
    Candidate,
    DegeneratePMError,
    GlobalFusion,
    LocalFusion,
    global_score,
    local_score,
    rank_candidates,
    safe_local_score,
)
from fastnav.search import fast_long, fast_navigate
from fastnav.signals import STOP, Action, ScorerParams, SignalTrace, StepSignals, SyntheticScorer


def trace_of(logits, pm=0.5, n_other=1, other=0.0):
    tr = SignalTrace()
    for x in logits:
        acts = {Action(0): x, **{Action(i + 1): other for i in range(n_other)}}
        tr = tr.extend(Action(0), StepSignals.from_logits(acts, pm))
    return tr


def test_ten_local_methods():
    names = [m.name for m in LOCAL_FUSIONS]
    assert len(set(names)) == 10
    assert "logit_sum" in names and "log_prob_mean_mul_pm" in names and "logit_mean_div_pm" in names
    assert not any(n.endswith("sum_div_pm") for n in names)
    with pytest.raises(ValueError):
        LocalFusion("logit", "sum", "div")
    assert LocalFusion.from_name("log_prob_sum_mul_pm") == LocalFusion("log_prob", "sum", "mul")


def test_local_examples():
    tr = trace_of([2.0, -0.5, 1.5])
    assert local_score(LOGIT_SUM, tr) == 3.0
    assert local_score(LocalFusion("logit", "mean"), tr) == 1.0
    uniform = trace_of([0.0], other=0.0)
    assert local_score(LocalFusion("log_prob", "sum"), uniform) == pytest.approx(math.log(0.5), abs=1e-12)
    assert local_score(LocalFusion("logit", "mean", "mul"), trace_of([2.0, 2.0], pm=0.5)) == 1.0
    assert local_score(LocalFusion("logit", "mean", "div"), trace_of([2.0, 2.0], pm=0.5)) == 4.0


def test_degenerate_pm_divisor():
    tr = trace_of([1.0], pm=0.0)
    m = LocalFusion("logit", "mean", "div")
    with pytest.raises(DegeneratePMError):
        local_score(m, tr)
    assert safe_local_score(m, tr) == -math.inf
    with pytest.raises(ValueError):
        local_score(LOGIT_SUM, SignalTrace())


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=1, max_size=12), st.floats(0.01, 50))
def test_mean_is_sum_over_n_and_scale_equivariant(values, lam):
    tr = trace_of(values)
    s = local_score(LOGIT_SUM, tr)
    assert abs(local_score(LocalFusion("logit", "mean"), tr) - s / len(values)) <= 1e-12 * max(1.0, abs(s))
    scaled = trace_of([lam * v for v in values], other=0.0)
    c = Candidate((0,), tr, 0.0)
    cs = Candidate((0,), scaled, 0.0)
    ep = episode_on(line_graph(4), 0, 3)
    got = global_score(GlobalFusion.SUM_LOGIT, cs, ep)
    assert got == pytest.approx(lam * global_score(GlobalFusion.SUM_LOGIT, c, ep), rel=1e-12, abs=1e-12)


def test_global_examples():
    ep = episode_on(line_graph(4), 0, 3)
    at_goal = Candidate((0, 1, 2, 3), trace_of([1.0]), 0.0)
    elsewhere = Candidate((0, 1), trace_of([1.0]), 0.0)
    assert global_score(GlobalFusion.ORACLE, at_goal, ep) == 0.0
    assert global_score(GlobalFusion.ORACLE, elsewhere, ep) < 0.0
    four = trace_of([0.0], n_other=3)
    assert global_score(GlobalFusion.SUM_LOG_PROB, Candidate((0,), four), ep) == pytest.approx(math.log(0.25))
    s = StepSignals.from_logits({STOP: 1.0}, 1.0)
    done = trace_of([1.0], pm=0.2).complete(s, 0.0)
    assert global_score(GlobalFusion.PM_FINAL, Candidate((0, 1, 2, 3), done), ep) == 1.0
    with pytest.raises(ValueError):
        global_score(GlobalFusion.MLP_ALL, at_goal, ep)
    assert global_score(GlobalFusion.SPEAKER, Candidate((0,), SignalTrace()), ep) == -math.inf


def test_table_four_set():
    assert len(TRACE_FUSIONS) == 7 and GlobalFusion.ORACLE not in TRACE_FUSIONS
    assert GlobalFusion("g_mlp_all") is GlobalFusion.MLP_ALL


def test_rank_examples():
    ep = episode_on(line_graph(6), 0, 5)
    tr = trace_of([1.0])
    assert rank_candidates(GlobalFusion.ORACLE, [Candidate((0, 1), tr)], ep) == [0]
    far, goal = Candidate((0,), tr), Candidate((0, 1, 2, 3, 4, 5), tr)
    assert rank_candidates(GlobalFusion.ORACLE, [far, goal], ep) == [1, 0]
    same = [Candidate((0, 1, 2), tr), Candidate((0, 1), tr), Candidate((0, 1, 4), tr)]
    # equal scores: shorter route first, then insertion order
    assert rank_candidates(GlobalFusion.SUM_LOGIT, same, ep) == [1, 0, 2]


def test_local_scores_finite_on_search_traces(episodes):
    sc = SyntheticScorer(ScorerParams(noise_sigma=2.0, alignment_weight=2.0, stop_gain=2.0, pm_noise=0.3, seed=1))
    for ep in episodes:
        r = fast_navigate(ep, sc, fast_long(20, global_fusion=None))
        for c in r.candidates:
            if not c.trace.steps:
                continue
            for m in LOCAL_FUSIONS:
                v = safe_local_score(m, c.trace)
                assert not math.isnan(v)
                if m.pm_combine != "div":
                    assert math.isfinite(v)


def test_oracle_ranks_within_radius_first(episodes):
    sc = SyntheticScorer(ScorerParams(noise_sigma=2.0, alignment_weight=2.0, stop_gain=2.0, seed=1))
    for ep in episodes:
        r = fast_navigate(ep, sc, fast_long(20, global_fusion=None))
        top = r.candidates[rank_candidates(GlobalFusion.ORACLE, r.candidates, ep)[0]]
        if any(ep.dist_to_goal(c.endpoint) < ep.success_radius for c in r.candidates):
            assert ep.dist_to_goal(top.endpoint) < ep.success_radius
