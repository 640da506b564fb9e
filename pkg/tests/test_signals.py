from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import episode_on, line_graph, small_episodes
from fastnav.nav_graph import GraphError
from fastnav.search import greedy_navigate
from fastnav.signals import (
    STOP,
    Action,
    ScorerParams,
    SignalTrace,
    StepSignals,
    SyntheticScorer,
    action_logits,
    edit_distance,
    keyed_normal,
    perfect_scorer,
    speaker_score,
)


@pytest.fixture
def line_ep():
    return episode_on(line_graph(4), 0, 3, radius=0.5, seed=5)


def test_line_logits_oracle(line_ep):
    sig = action_logits(line_ep, [0, 1], 1, ScorerParams(alignment_weight=2.0))
    assert sig.logits[Action(2)] == 2.0
    assert sig.logits[Action(0)] == -2.0
    assert sig.best() == Action(2)


def test_stop_is_unique_max_at_goal(line_ep):
    p = ScorerParams(stop_gain=1.5)
    sig = action_logits(line_ep, [0, 1, 2, 3], 3, p)
    assert sig.logits[STOP] == 1.5 * 0.5
    assert sig.best() is STOP or sig.best() == STOP
    assert all(sig.logits[a] < sig.logits[STOP] for a in sig.actions if not a.is_stop)


def test_noise_is_state_keyed(line_ep):
    p = ScorerParams(noise_sigma=1.0, seed=9)
    a = action_logits(line_ep, [0, 1], 1, p)
    b = action_logits(line_ep, [0, 1, 2, 1], 1, p)  # same node, different history
    assert a == b
    other = action_logits(line_ep, [0, 1], 1, ScorerParams(noise_sigma=1.0, seed=10))
    assert other.logits != a.logits


def test_detached_or_unknown_query(line_ep):
    p = ScorerParams()
    with pytest.raises(GraphError):
        action_logits(line_ep, [0, 1], 2, p)
    with pytest.raises(GraphError):
        action_logits(line_ep, [1, 2], 2, p)
    with pytest.raises(GraphError):
        action_logits(line_ep, [0, 9], 9, p)


def test_actions_are_canonical(line_ep):
    sig = action_logits(line_ep, [0, 1], 1, ScorerParams(noise_sigma=3.0))
    assert sig.actions == (STOP, Action(0), Action(2))


@settings(max_examples=50, deadline=None)
@given(
    logits=st.lists(st.floats(-50, 50), min_size=1, max_size=8),
    shift=st.floats(-100, 100),
)
def test_log_softmax_normalized_and_shift_invariant(logits, shift):
    acts = [STOP] + [Action(i) for i in range(len(logits) - 1)]
    a = StepSignals.from_logits(dict(zip(acts, logits)), 0.0)
    b = StepSignals.from_logits({k: v + shift for k, v in zip(acts, logits)}, 0.0)
    assert abs(math.fsum(math.exp(v) for v in a.log_probs.values()) - 1.0) <= 1e-9
    for k in acts:
        assert abs(a.log_probs[k] - b.log_probs[k]) <= 1e-9


def test_pm_clamped_and_one_at_goal(line_ep):
    at_goal = action_logits(line_ep, [0, 1, 2, 3], 3, ScorerParams())
    assert at_goal.pm == 1.0
    for node, path in [(0, [0]), (1, [0, 1]), (3, [0, 1, 2, 3])]:
        sig = action_logits(line_ep, path, node, ScorerParams(pm_noise=5.0, seed=2))
        assert -1.0 <= sig.pm <= 1.0


def test_keyed_normal_is_pure_and_standard():
    assert keyed_normal(1, 2, "x") == keyed_normal(1, 2, "x")
    xs = [keyed_normal(0, i) for i in range(20000)]
    mean = math.fsum(xs) / len(xs)
    var = math.fsum((x - mean) ** 2 for x in xs) / len(xs)
    assert abs(mean) < 0.03 and abs(var - 1.0) < 0.05


def test_edit_distance():
    assert edit_distance([1, 2, 3], [1, 2, 3]) == 0
    assert edit_distance([1], [1, 2, 3]) == 2
    assert edit_distance([1, 5, 3], [1, 2, 3]) == 1
    assert edit_distance([], [4, 5]) == 2


def test_speaker_examples(line_ep):
    p = ScorerParams()
    assert speaker_score(line_ep, [0, 1, 2, 3], p) == 0.0
    big_l = line_ep.hops
    assert speaker_score(line_ep, [0], p) == pytest.approx(-big_l / (big_l + 2))
    noisy = ScorerParams(speaker_noise=0.5, seed=4)
    assert speaker_score(line_ep, [0, 1], noisy) == speaker_score(line_ep, [0, 1], noisy)
    with pytest.raises(ValueError):
        speaker_score(line_ep, [1, 2], p)


def test_scorer_params_validation():
    with pytest.raises(ValueError):
        ScorerParams(noise_sigma=-1.0)
    with pytest.raises(ValueError):
        ScorerParams(pm_noise=math.inf)
    with pytest.raises(ValueError):
        ScorerParams(alignment_weight=math.nan)


def test_trace_accessors():
    s1 = StepSignals.from_logits({STOP: 0.0, Action(1): 2.0}, 0.25)
    s2 = StepSignals.from_logits({STOP: 1.0, Action(0): -1.0}, 0.75)
    tr = SignalTrace().extend(Action(1), s1).extend(STOP, s2)
    assert tr.chosen_logits == [2.0, 1.0]
    assert tr.final_pm == 0.75
    done = tr.complete(s1, -0.5)
    assert done.final_pm == 0.25 and done.speaker == -0.5
    with pytest.raises(ValueError):
        SignalTrace().final_pm


def test_perfect_scorer_greedy(episodes):
    for ep in episodes:
        r = greedy_navigate(ep, perfect_scorer(ep))
        assert r.success
        assert r.final_trajectory == ep.reference_path
        assert abs(r.tl - ep.shortest_length) <= 1e-9


def test_noise_degrades_greedy():
    eps = small_episodes(n_graphs=10, per_graph=20)
    clean = SyntheticScorer(ScorerParams(alignment_weight=2.0, stop_gain=2.0))
    noisy = SyntheticScorer(ScorerParams(noise_sigma=2.0, alignment_weight=2.0, stop_gain=2.0, seed=1))
    sr0 = sum(greedy_navigate(e, clean, 8).success for e in eps)
    sr2 = sum(greedy_navigate(e, noisy, 8).success for e in eps)
    assert sr0 >= sr2
