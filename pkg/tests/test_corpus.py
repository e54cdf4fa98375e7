import json

import pytest

from dialrec.corpus import (NONE_OR_OTHERS, CorpusError, Corpus, Dialogue, NormalizationMap,
                            Speaker, UnlabelableDialogueError, Utterance, cohen_kappa,
                            corpus_stats, hash_split, load_corpus, mask_and_truncate,
                            medication_set_labels, write_corpus)


def make_dialogue(texts, speakers, meds=("Omeprazole",), disease="Gastritis",
                  did="d1", split=None):
    utts = tuple(Utterance(speaker=s, text=t, index=i)
                 for i, (s, t) in enumerate(zip(speakers, texts)))
    return Dialogue(id=did, department="Gastroenterology", disease=disease,
                    medications=frozenset(meds), utterances=utts, split=split)


def jsonl_line(did="d1", meds=("Omeprazole",), disease="Gastritis", split=None):
    obj = {
        "id": did,
        "department": "Gastroenterology",
        "disease": disease,
        "medications": list(meds),
        "utterances": [
            {"speaker": "patient", "text": "my stomach hurts"},
            {"speaker": "doctor", "text": "take [MASK] twice a day"},
        ],
    }
    if split:
        obj["split"] = split
    return json.dumps(obj)


def test_load_two_lines(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text(jsonl_line("a") + "\n" + jsonl_line("b") + "\n")
    corpus = load_corpus(path)
    assert len(corpus.dialogues) == 2
    assert corpus.medications == ["Omeprazole"]
    assert corpus.dialogues[0].utterances[0].speaker is Speaker.PATIENT


def test_load_normalizes_aliases(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text(jsonl_line(meds=("Omeprazole tablet",)) + "\n")
    maps = NormalizationMap(medications={"Omeprazole tablet": "Omeprazole"})
    corpus = load_corpus(path, maps=maps)
    assert corpus.dialogues[0].medications == frozenset({"Omeprazole"})


def test_load_missing_field_names_line(tmp_path):
    path = tmp_path / "c.jsonl"
    obj = json.loads(jsonl_line())
    del obj["utterances"]
    path.write_text(jsonl_line() + "\n" + json.dumps(obj) + "\n")
    with pytest.raises(CorpusError, match="line 2.*utterances"):
        load_corpus(path)


def test_load_malformed_json_names_line(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text(jsonl_line() + "\n{not json\n")
    with pytest.raises(CorpusError, match="line 2"):
        load_corpus(path)


def test_load_duplicate_id_rejected(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text(jsonl_line("same") + "\n" + jsonl_line("same") + "\n")
    with pytest.raises(CorpusError, match="duplicate"):
        load_corpus(path)


def test_strict_mode_rejects_unknown_canonical(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text(jsonl_line(meds=("Mystery Drug",)) + "\n")
    maps = NormalizationMap(medications={"Omeprazole tablet": "Omeprazole"})
    with pytest.raises(CorpusError, match="unknown canonical medication"):
        load_corpus(path, maps=maps, strict=True)


def test_field_remap(tmp_path):
    obj = json.loads(jsonl_line())
    obj["dlg_id"] = obj.pop("id")
    path = tmp_path / "c.jsonl"
    path.write_text(json.dumps(obj) + "\n")
    remap = tmp_path / "remap.json"
    remap.write_text(json.dumps({"id": "dlg_id"}))
    corpus = load_corpus(path, remap_path=remap)
    assert corpus.dialogues[0].id == "d1"


def test_round_trip(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text(jsonl_line("a", split="train") + "\n" + jsonl_line("b", split="test") + "\n")
    corpus = load_corpus(path)
    out = tmp_path / "out.jsonl"
    write_corpus(corpus, out)
    reloaded = load_corpus(out)
    assert reloaded.dialogues == corpus.dialogues
    assert reloaded.medications == corpus.medications


def test_hash_split_partitions_and_is_stable():
    splits = [hash_split(f"dlg-{i}") for i in range(2000)]
    assert splits == [hash_split(f"dlg-{i}") for i in range(2000)]
    frac_train = splits.count("train") / len(splits)
    frac_dev = splits.count("dev") / len(splits)
    assert 0.75 < frac_train < 0.85
    assert 0.07 < frac_dev < 0.13


def test_normalization_idempotent_and_functional():
    maps = NormalizationMap(medications={"omep tab": "Omeprazole", "omep cap": "Omeprazole"})
    for alias in list(maps.medications):
        once = maps.normalize_medication(alias)
        assert maps.normalize_medication(once) == once
    with pytest.raises(CorpusError):
        NormalizationMap(medications={"Omeprazole": "Else", "x": "Omeprazole"})


def test_mask_and_truncate_drops_future_turns():
    texts = ["hello", "what is wrong", "stomach pain", "since when", "yesterday",
             "take Omeprazole tablet now", "thanks", "bye"]
    speakers = [Speaker.PATIENT, Speaker.DOCTOR, Speaker.PATIENT, Speaker.DOCTOR,
                Speaker.PATIENT, Speaker.DOCTOR, Speaker.PATIENT, Speaker.DOCTOR]
    raw = make_dialogue(texts, speakers, meds=())
    maps = NormalizationMap(medications={"Omeprazole tablet": "Omeprazole"})
    masked = mask_and_truncate(raw, maps)
    assert masked.n_turns == 6
    assert masked.utterances[-1].text == "take [MASK] now"
    assert masked.medications == frozenset({"Omeprazole"})


def test_mask_last_utterance_nothing_dropped():
    raw = make_dialogue(["pain", "use Omeprazole"], [Speaker.PATIENT, Speaker.DOCTOR], meds=())
    maps = NormalizationMap(medications={"Omeprazole": "Omeprazole"})
    masked = mask_and_truncate(raw, maps)
    assert masked.n_turns == 2
    assert masked.utterances[1].text == "use [MASK]"


def test_mask_two_mentions_one_utterance():
    raw = make_dialogue(["pain", "take Omeprazole and Mosapride please"],
                        [Speaker.PATIENT, Speaker.DOCTOR], meds=())
    maps = NormalizationMap(medications={"Omeprazole": "Omeprazole", "Mosapride": "Mosapride"})
    masked = mask_and_truncate(raw, maps)
    assert masked.utterances[1].text == "take [MASK] and [MASK] please"
    assert masked.medications == frozenset({"Omeprazole", "Mosapride"})


def test_mask_output_never_contains_aliases():
    maps = NormalizationMap(medications={"Omeprazole tablet": "Omeprazole",
                                         "Omeprazole": "Omeprazole"})
    raw = make_dialogue(["i took omeprazole tablet before", "try Omeprazole again"],
                        [Speaker.PATIENT, Speaker.DOCTOR], meds=())
    masked = mask_and_truncate(raw, maps)
    joined = " ".join(u.text for u in masked.utterances).lower()
    for alias in maps.medications:
        assert alias.lower() not in joined


def test_mask_unlabelable():
    raw = make_dialogue(["pain", "rest and drink water"], [Speaker.PATIENT, Speaker.DOCTOR],
                        meds=())
    maps = NormalizationMap(medications={"Omeprazole": "Omeprazole"})
    with pytest.raises(UnlabelableDialogueError):
        mask_and_truncate(raw, maps)


def test_kappa_perfect_agreement():
    assert cohen_kappa(["x", "y", "x"], ["x", "y", "x"]) == 1.0


def test_kappa_systematic_disagreement():
    assert cohen_kappa(["x", "x", "y", "y"], ["y", "y", "x", "x"]) == pytest.approx(-1.0)


def test_kappa_hand_computed():
    # p_o = 3/4; marginals give p_e = 5/16; kappa = (3/4 - 5/16)/(11/16) = 7/11
    assert cohen_kappa(["x", "x", "y", "z"], ["x", "y", "y", "z"]) == pytest.approx(7 / 11)


def test_kappa_symmetric_and_validates():
    a = ["x", "y", "z", "x"]
    b = ["x", "y", "x", "x"]
    assert cohen_kappa(a, b) == pytest.approx(cohen_kappa(b, a))
    with pytest.raises(ValueError):
        cohen_kappa(["x"], ["x", "y"])
    with pytest.raises(ValueError):
        cohen_kappa([], [])


def test_kappa_constant_sequences():
    assert cohen_kappa(["x", "x"], ["x", "x"]) == 1.0


def test_medication_set_labels_sorted_tuples():
    d = make_dialogue(["a", "b [MASK]"], [Speaker.PATIENT, Speaker.DOCTOR],
                      meds=("B", "A"))
    corpus = Corpus.from_dialogues([d])
    assert medication_set_labels(corpus) == [("A", "B")]


def test_stats_single_dialogue():
    d = make_dialogue(["one two", "three", "four five six", "take [MASK]"],
                      [Speaker.PATIENT, Speaker.DOCTOR, Speaker.PATIENT, Speaker.DOCTOR])
    stats = corpus_stats(Corpus.from_dialogues([d]))
    assert stats["Total"]["avg_turns"] == 4.0
    assert stats["Total"]["max_turns"] == 4
    assert stats["Total"]["n_dialogues"] == 1


def test_stats_mean_turns():
    d1 = make_dialogue(["a", "b [MASK]"], [Speaker.PATIENT, Speaker.DOCTOR], did="x")
    d2 = make_dialogue(["a", "b", "c", "d [MASK]"],
                       [Speaker.PATIENT, Speaker.DOCTOR, Speaker.PATIENT, Speaker.DOCTOR],
                       did="y")
    stats = corpus_stats(Corpus.from_dialogues([d1, d2]))
    assert stats["Total"]["avg_turns"] == 3.0
    assert stats["Gastroenterology"]["n_dialogues"] == 2


def test_stats_excludes_sentinel_disease():
    d1 = make_dialogue(["a", "b [MASK]"], [Speaker.PATIENT, Speaker.DOCTOR], did="x")
    d2 = make_dialogue(["a", "b [MASK]"], [Speaker.PATIENT, Speaker.DOCTOR],
                       disease=NONE_OR_OTHERS, did="y")
    stats = corpus_stats(Corpus.from_dialogues([d1, d2]))
    assert stats["Total"]["n_diseases"] == 1
