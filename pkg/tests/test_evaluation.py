import json
import math

import numpy as np
import pytest

from dstrnn.data import SLOTS, GoalState
from dstrnn.evaluation import (EvaluationReport, evaluate, joint_accuracy, schedule2_scored_turns,
                               score_dialogues, slot_scored_turns, VocabularyMismatch, check_vocabulary)
from dstrnn.models import ModelConfig, TrackerModel

N = None


def G(*v):
    return GoalState(*v)


# Three dialogues, eight scored turns, three skipped.
GOLDS = [
    [G(N, N, N), G("indian", N, N), G("indian", "west", N)],
    [G(N, N, N), G(N, N, N), G(N, N, "cheap"), G(N, "north", "cheap")],
    [G("chinese", N, N), G("chinese", N, "cheap"), G("chinese", "south", "cheap"), G("chinese", "south", "cheap")],
]
PREDS = [
    [G("indian", N, N), G("indian", N, N), G("indian", "north", N)],             # 1 of 2
    [G("thai", N, N), G(N, N, N), G(N, N, "cheap"), G(N, "north", "cheap")],     # 2 of 2
    [G("chinese", N, N), G("chinese", N, N), G("chinese", "south", "cheap"), G("indian", "south", "cheap")],  # 2 of 4
]


def test_schedule2_onsets():
    assert schedule2_scored_turns([G(N, N, N)] * 4) == set()
    fig1 = [G(N, N, N), G(N, "west", N), G("indian", "west", N)]
    assert schedule2_scored_turns(fig1) == {1, 2}
    five = [G(N, N, N), G(N, N, N), G(N, N, "cheap"), G(N, N, "cheap"), G("thai", N, "cheap")]
    assert schedule2_scored_turns(five) == {2, 3, 4}
    assert slot_scored_turns(five, "food") == {4}


def test_joint_accuracy_basics():
    golds = GOLDS[2]
    assert joint_accuracy(golds, golds, schedule2_scored_turns(golds)) == 1.0
    off_by_one = [G(g.food, g.area, "expensive") for g in golds]
    assert joint_accuracy(off_by_one, golds, {0, 1, 2, 3}) == 0.0
    assert math.isnan(joint_accuracy(golds, golds, set()))
    with pytest.raises(ValueError):
        joint_accuracy(golds[:2], golds, {0})


def test_crafted_fixture_scores_five_of_eight():
    r = score_dialogues(PREDS, GOLDS)
    assert (r.n_scored_turns, r.n_skipped_turns) == (8, 3)
    assert r.joint_goal_accuracy == 0.625
    assert r.per_slot_accuracy == {"food": 7 / 8, "area": 7 / 8, "pricerange": 7 / 8}


def test_constant_empty_prediction_scores_zero():
    preds = [[G(N, N, N)] * len(g) for g in GOLDS]
    r = score_dialogues(preds, GOLDS)
    assert r.joint_goal_accuracy == 0.0 and r.n_skipped_turns == 3


def test_per_slot_onset_variant():
    r = score_dialogues(PREDS, GOLDS, onset="per_slot")
    assert r.joint_goal_accuracy == 0.625
    # food is scored from turn 1, 2 and 0 of the three dialogues: 2 + 0 + 4 turns
    assert r.per_slot_accuracy["food"] == pytest.approx(5 / 6)
    with pytest.raises(ValueError):
        score_dialogues(PREDS, GOLDS, onset="whatever")


def test_comparison_normalises_case_and_space():
    golds = [[G("indian", N, N)]]
    assert score_dialogues([[G(" Indian ", "none", N)]], golds).joint_goal_accuracy == 1.0


def test_joint_never_exceeds_per_slot_and_order_independence():
    rng = np.random.default_rng(0)
    vals = [N, "a", "b"]
    for _ in range(1000):
        golds, preds = [], []
        for _ in range(rng.integers(1, 4)):
            n = int(rng.integers(1, 5))
            golds.append([G(*(vals[i] for i in rng.integers(0, 3, size=3))) for _ in range(n)])
            preds.append([G(*(vals[i] for i in rng.integers(0, 3, size=3))) for _ in range(n)])
        r = score_dialogues(preds, golds)
        total = sum(len(g) for g in golds)
        assert r.n_scored_turns + r.n_skipped_turns == total
        if r.n_scored_turns:
            assert r.joint_goal_accuracy <= min(r.per_slot_accuracy.values()) + 1e-12
            rev = score_dialogues(preds[::-1], golds[::-1])
            assert rev.joint_goal_accuracy == r.joint_goal_accuracy
            skipped_only_gold = score_dialogues(golds, golds)
            assert skipped_only_gold.n_skipped_turns == r.n_skipped_turns


def test_report_serialisation():
    r = score_dialogues(PREDS, GOLDS)
    r.dataset, r.model = "fixture", "independent"
    d = json.loads(r.to_json())
    assert d["joint_goal_accuracy"] == 0.625 and d["n_scored_turns"] == 8
    table = r.table()
    assert "fixture" in table and "0.625" in table
    for s in SLOTS:
        assert s in table


def test_evaluate_end_to_end(micro):
    m = TrackerModel(ModelConfig("independent", 6, 5), micro["vocab"], micro["slot_vocabs"], micro["db"])
    r = evaluate(m, micro["dialogues"], dataset="micro")
    assert isinstance(r, EvaluationReport) and r.model == "independent" and r.dataset == "micro"
    assert 0.0 <= r.joint_goal_accuracy <= 1.0
    assert r.n_scored_turns + r.n_skipped_turns == len(micro["examples"])
    again = evaluate(m, micro["dialogues"][::-1])
    assert again.joint_goal_accuracy == r.joint_goal_accuracy


def test_vocabulary_mismatch_is_explicit(micro):
    from dstrnn.data import Dialogue, Turn
    m = TrackerModel(ModelConfig("independent", 6, 5), micro["vocab"], micro["slot_vocabs"], micro["db"])
    odd = Dialogue("odd", [Turn(0, ["hello"], ["thai"], G("thai", N, N))])
    with pytest.raises(VocabularyMismatch, match="thai"):
        check_vocabulary(m, [odd])
    with pytest.raises(VocabularyMismatch):
        evaluate(m, [odd], strict_vocab=True)
