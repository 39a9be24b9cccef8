import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from todcl.data import ApiCall, Setting
from todcl.metrics import (
    MetricMatrix, TurnPrediction, avg_metric, bleu, corpus_bleu, intent_accuracy, joint_goal_accuracy,
    selection_accuracy, slot_error_rate,
)

CASES = json.loads((Path(__file__).parent / "fixtures" / "metric_cases.json").read_text())


def api_preds(cases):
    return [TurnPrediction(c["pred_api"], Setting.DST,
                           gold_api=ApiCall(c["gold_intent"], tuple(map(tuple, c["gold_slots"]))))
            for c in cases]


def response_preds(cases):
    return [TurnPrediction(c["hyp"], Setting.NLG, gold_response=c["ref"],
                           gold_act=ApiCall("inform", tuple(map(tuple, c["act_slots"]))))
            for c in cases]


def test_fixture_has_twenty_cases_with_mixed_outcomes():
    assert len(CASES) == 20
    assert 0 < oracles.jga(CASES) < 1


def test_jga_matches_oracle_exactly():
    assert joint_goal_accuracy(api_preds(CASES)) == oracles.jga(CASES)


def test_eer_matches_oracle_exactly():
    assert slot_error_rate(response_preds(CASES)) == oracles.eer(CASES)


def test_bleu_matches_oracle():
    ours = corpus_bleu([c["hyp"] for c in CASES], [c["ref"] for c in CASES])
    assert abs(ours - oracles.bleu([c["hyp"] for c in CASES], [c["ref"] for c in CASES])) < 0.1
    assert bleu(response_preds(CASES)) == ours


def test_intent_accuracy_uses_text_before_paren():
    gold = ApiCall("find_taxi", (("area", "north"),))
    preds = [TurnPrediction("find_taxi ( area = south )", Setting.E2E, gold_api=gold),
             TurnPrediction("FIND_TAXI", Setting.INTENT, gold_api=gold),
             TurnPrediction("book_taxi ( )", Setting.E2E, gold_api=gold)]
    assert intent_accuracy(preds) == pytest.approx(2 / 3)


def test_jga_is_order_insensitive_and_fails_on_unparseable():
    gold = ApiCall("find", (("a", "x"), ("b", "y")))
    ok = TurnPrediction("find ( b = y , a = x )", Setting.DST, gold_api=gold)
    broken = TurnPrediction("find ( b = y , a = ", Setting.DST, gold_api=gold)
    assert joint_goal_accuracy([ok, broken]) == 0.5


def test_eer_ignores_binary_values_and_is_undefined_without_slots():
    act = ApiCall("inform", (("parking", "yes"), ("area", "north")))
    p = TurnPrediction("it is in the south", Setting.NLG, gold_response="r", gold_act=act)
    assert slot_error_rate([p]) == 1.0
    only_binary = TurnPrediction("x", Setting.NLG, gold_response="r", gold_act=ApiCall("inform", (("parking", "no"),)))
    assert math.isnan(slot_error_rate([only_binary]))


def test_bleu_edge_cases():
    assert corpus_bleu(["a b c d e"], ["a b c d e"]) == pytest.approx(100.0)
    assert corpus_bleu([""], ["a b c"]) == 0.0
    with pytest.raises(ValueError):
        corpus_bleu(["a"], [])
    # no 4-gram match: only that order is smoothed
    s = corpus_bleu(["a b c x d"], ["a b c y d"])
    assert s == pytest.approx(oracles.bleu(["a b c x d"], ["a b c y d"]))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.lists(st.sampled_from("abcde"), max_size=8),
                          st.lists(st.sampled_from("abcde"), min_size=1, max_size=8)),
                min_size=1, max_size=5))
def test_bleu_property_against_oracle(pairs):
    hyps = [" ".join(h) for h, _ in pairs]
    refs = [" ".join(r) for _, r in pairs]
    assert abs(corpus_bleu(hyps, refs) - oracles.bleu(hyps, refs)) < 1e-9
    assert 0.0 <= corpus_bleu(hyps, refs) <= 100.0


def test_selection_accuracy():
    assert selection_accuracy([0, 1, 1, 2], [0, 1, 2, 2]) == 0.75
    with pytest.raises(ValueError):
        selection_accuracy([0], [0, 1])


def test_metric_matrix_prefix_and_avg():
    m = MetricMatrix("intent", ["a", "b", "c"])
    with pytest.raises(ValueError):
        avg_metric(m)
    rows = [[90, 0, 0], [40, 80, 0], [30, 60, 90]]
    for i, row in enumerate(rows):
        for j, v in enumerate(row):
            m.set(i, j, v)
    assert [m.prefix_avg(t) for t in range(3)] == [90, 60, 60]
    assert avg_metric(m) == m.prefix_avg(2)
    back = MetricMatrix.from_dict(json.loads(json.dumps(m.to_dict())))
    np.testing.assert_array_equal(back.R, m.R)


def test_metric_matrix_single_task_and_shape_check():
    assert avg_metric(MetricMatrix("x", ["t"], np.array([[42.0]]))) == 42.0
    with pytest.raises(ValueError):
        MetricMatrix("x", ["a", "b"], np.zeros((3, 3)))
