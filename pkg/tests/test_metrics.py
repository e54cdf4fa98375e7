from itertools import chain, combinations

import pytest

from dialrec.corpus import Dialogue, Speaker, Utterance
from dialrec.metrics import (DdiGraph, EvaluationReport, classify_error, ddi_rate,
                             evaluate_run, jaccard, sample_f1, truncate_dialogue,
                             truncation_curve)


def subsets(universe):
    return [set(c) for r in range(len(universe) + 1) for c in combinations(universe, r)]


def scalar_jaccard(p, t):
    inter = sum(1 for x in p if x in t)
    union = len(p) + len(t) - inter
    return inter / union if union else 1.0


def scalar_f1(p, t):
    inter = sum(1 for x in p if x in t)
    if not p or inter == 0:
        return 0.0
    prec, rec = inter / len(p), inter / len(t)
    return 2 * prec * rec / (prec + rec)


def make_dialogue(did, meds, turns=5):
    speakers = [Speaker.PATIENT if i % 2 == 0 else Speaker.DOCTOR for i in range(turns)]
    utts = tuple(Utterance(speaker=s, text=f"t{i}", index=i) for i, s in enumerate(speakers))
    return Dialogue(id=did, department="Respiratory", disease="Asthma",
                    medications=frozenset(meds), utterances=utts)


def test_jaccard_identity():
    assert jaccard({"a", "b"}, {"a", "b"}) == 1.0


def test_jaccard_third():
    assert jaccard({"a", "b"}, {"b", "c"}) == pytest.approx(1 / 3)


def test_jaccard_empty_prediction():
    assert jaccard(set(), {"a"}) == 0.0


def test_jaccard_symmetric():
    for p, t in [({"a"}, {"a", "b"}), ({"x", "y"}, {"z"}), (set(), {"q"})]:
        assert jaccard(p, t) == jaccard(t, p)


def test_f1_forced_arithmetic():
    assert sample_f1({"b", "c", "d"}, {"a", "b", "c"}) == pytest.approx(2 / 3)


def test_f1_empty_prediction_convention():
    assert sample_f1(set(), {"a"}) == 0.0


def test_f1_batch_mean_matches_hand_sums():
    batch = [({"a"}, {"a"}), ({"a", "b"}, {"b"}), (set(), {"c"}), ({"d"}, {"e"})]
    mean = sum(sample_f1(p, t) for p, t in batch) / 4
    hand = (1.0 + 2 * (1 / 2) * 1.0 / (1 / 2 + 1.0) + 0.0 + 0.0) / 4
    assert mean == pytest.approx(hand)


def test_exhaustive_universe_vs_scalar_recomputation():
    universe = ["a", "b", "c", "d"]
    for p in subsets(universe):
        for t in subsets(universe):
            assert jaccard(p, t) == pytest.approx(scalar_jaccard(p, t))
            assert sample_f1(p, t) == pytest.approx(scalar_f1(p, t))


def test_metrics_agree_at_extremes():
    for p, t in [({"a", "b"}, {"a", "b"})]:
        assert jaccard(p, t) == sample_f1(p, t) == 1.0
    assert jaccard({"a"}, {"b"}) == sample_f1({"a"}, {"b"}) == 0.0


def test_ddi_hand_enumerated_fixture():
    ddi = DdiGraph.from_pairs([("a", "b")])
    assert ddi_rate([{"a", "b", "c"}, {"a", "d"}], ddi) == pytest.approx(0.25)


def test_ddi_singletons_zero():
    ddi = DdiGraph.from_pairs([("a", "b")])
    assert ddi_rate([{"a"}, {"b"}, set()], ddi) == 0.0


def test_ddi_order_insensitive_and_no_self_pairs():
    ddi = DdiGraph.from_pairs([("b", "a"), ("c", "c")])
    assert ("a", "b") in ddi and ("b", "a") in ddi
    assert ("c", "c") not in ddi


def test_ddi_monotone_in_edges():
    preds = [{"a", "b", "c"}, {"b", "d"}]
    base = DdiGraph.from_pairs([("a", "b")])
    more = DdiGraph.from_pairs([("a", "b"), ("b", "d")])
    assert ddi_rate(preds, more) >= ddi_rate(preds, base)


def test_ddi_tsv_round_trip(tmp_path):
    path = tmp_path / "ddi.tsv"
    path.write_text("DrugA\tDrugB\nDrugC\tDrugA\n")
    ddi = DdiGraph.from_tsv(path)
    assert ("DrugA", "DrugB") in ddi
    assert ("DrugA", "DrugC") in ddi
    assert ("DrugB", "DrugC") not in ddi


def test_classify_error_table_rows():
    assert classify_error(set(), {"a"}) == "E1"
    assert classify_error({"a"}, {"a", "b"}) == "E2"
    assert classify_error({"a", "b"}, {"a"}) == "E3"
    assert classify_error({"a", "c"}, {"a", "b"}) == "E4"
    assert classify_error({"c"}, {"a", "b"}) == "E5"
    assert classify_error({"a"}, {"a"}) == "Correct"


def test_classify_error_requires_truth():
    with pytest.raises(ValueError):
        classify_error({"a"}, set())


def test_classify_error_partitions_universe():
    universe = ["a", "b", "c", "d"]
    for t in subsets(universe):
        if not t:
            continue
        for p in subsets(universe):
            label = classify_error(p, t)
            # exactly one class claims each pair
            claims = [
                p == t,
                p == set(),
                p < t and p != set(),
                t < p,
                not (p <= t) and not (t <= p) and bool(p & t),
                not (p <= t) and not (t <= p) and not (p & t),
            ]
            assert sum(claims) == 1
            assert ["Correct", "E1", "E2", "E3", "E4", "E5"][claims.index(True)] == label


def test_evaluate_run_perfect_and_empty():
    dialogues = [make_dialogue("a", {"X"}), make_dialogue("b", {"X", "Y"})]
    perfect = evaluate_run({"a": {"X"}, "b": {"X", "Y"}}, dialogues)
    assert perfect.mean_jaccard == perfect.mean_f1 == 1.0
    assert perfect.error_counts["Correct"] == 2

    empty = evaluate_run({"a": set(), "b": set()}, dialogues)
    assert empty.mean_jaccard == empty.mean_f1 == 0.0
    assert empty.error_counts["E1"] == 2


def test_evaluate_run_handcrafted_fixture():
    dialogues = [make_dialogue(f"d{i}", m) for i, m in
                 enumerate([{"a"}, {"a", "b"}, {"b"}, {"a", "c"}, {"c"}])]
    preds = {"d0": {"a"}, "d1": {"a"}, "d2": {"b", "c"}, "d3": {"b", "d"}, "d4": set()}
    ddi = DdiGraph.from_pairs([("b", "c")])
    report = evaluate_run(preds, dialogues, ddi)
    expected_j = (1.0 + 1 / 2 + 1 / 2 + 0.0 + 0.0) / 5
    expected_f = (1.0 + 2 / 3 + 2 / 3 + 0.0 + 0.0) / 5
    assert report.mean_jaccard == pytest.approx(expected_j)
    assert report.mean_f1 == pytest.approx(expected_f)
    assert report.error_counts == {"Correct": 1, "E1": 1, "E2": 1, "E3": 1, "E4": 0, "E5": 1}
    assert report.ddi_rate == pytest.approx(1 / 2)  # pairs: {b,c} hit, {b,d} miss
    assert sum(report.error_counts.values()) == report.n == 5


def test_evaluate_run_missing_prediction():
    with pytest.raises(KeyError, match="d1"):
        evaluate_run({}, [make_dialogue("d1", {"a"})])


def test_truncate_dialogue_floor():
    d = make_dialogue("x", {"a"}, turns=7)
    assert truncate_dialogue(d, 100).n_turns == 7
    assert truncate_dialogue(d, 1).n_turns == 1
    assert truncate_dialogue(d, 50).n_turns == 4  # ceil(3.5)


def test_truncation_curve_full_prefix_matches_evaluate_run():
    dialogues = [make_dialogue("a", {"X"}, turns=6), make_dialogue("b", {"Y"}, turns=8),
                 make_dialogue("c", {"X"}, turns=3)]  # 3-turn dialogue excluded

    def predict(d):
        return {"X"} if d.n_turns >= 5 else set()

    curve = truncation_curve(predict, dialogues, [40, 100])
    eligible = [d for d in dialogues if d.n_turns > 4]
    report = evaluate_run({d.id: predict(d) for d in eligible}, eligible)
    assert curve[1][1] == report.mean_jaccard
    # tiny prefixes predict nothing here
    assert curve[0][1] <= curve[1][1]


def test_truncation_curve_constant_when_prefix_floors():
    dialogues = [make_dialogue("a", {"X"}, turns=5)]
    calls = []

    def predict(d):
        calls.append(d.n_turns)
        return {"X"}

    curve = truncation_curve(predict, dialogues, [5, 10, 15])
    assert calls == [1, 1, 1]
    assert len({j for _, j in curve}) == 1


def test_truncation_curve_validates_percents():
    with pytest.raises(ValueError):
        truncation_curve(lambda d: set(), [make_dialogue("a", {"X"})], [0])
    with pytest.raises(ValueError):
        truncation_curve(lambda d: set(), [make_dialogue("a", {"X"})], [101])


def test_report_dict_shape():
    report = EvaluationReport(0.5, 0.6, 0.0, {"Correct": 1}, 1)
    d = report.to_dict()
    assert set(d) == {"jaccard", "f1", "ddi_rate", "errors", "n"}
