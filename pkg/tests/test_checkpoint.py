import json

import numpy as np
import pytest
import torch

from dialrec.checkpoint import _archive_name, load_checkpoint, save_checkpoint
from dialrec.kg import TransRConfig, train_transr
from dialrec.model import DdnConfig, DdnModel, DiseaseKnowledge, build_tokenizer, train_model
from dialrec.synth import SynthConfig, generate_synthetic


@pytest.fixture(scope="module")
def trained():
    corpus, kg, _ = generate_synthetic(SynthConfig(n_dialogues=40, seed=2))
    transr = train_transr(kg, TransRConfig(d_e=8, d_r=8, epochs=5, seed=2))
    config = DdnConfig(d=16, max_len=32, epochs=1, lr=1e-3, seed=2)
    knowledge = DiseaseKnowledge.prepare(kg, transr, corpus.diseases, k=2, fanout=8, seed=2)
    result = train_model(corpus, knowledge, config)
    return corpus, result.model


def test_archive_naming_convention():
    assert _archive_name("encoder.token_table") == "token_table"
    assert _archive_name("encoder.W_q") == "mixer.W_q"
    assert _archive_name("dialogue_gat.0.W_h") == "gat.l0.W_h"
    assert _archive_name("disease_gat.1.W_r") == "kgat.l1.W_r"
    assert _archive_name("decoder_W") == "decoder.W_o"
    assert _archive_name("kg_entity_emb") == "kg.entity_emb"
    with pytest.raises(KeyError):
        _archive_name("mystery.param")


def test_round_trip_preserves_predictions(tmp_path, trained):
    corpus, model = trained
    path = tmp_path / "ckpt.npz"
    save_checkpoint(model, path, {"epoch": 0})
    back, manifest = load_checkpoint(path)
    assert manifest["version"]
    assert manifest["config"]["d"] == 16
    assert manifest["vocab_hashes"]["tokens"] == model.tokenizer.vocab_hash
    for d in corpus.dialogues[:8]:
        assert back.predict(d) == model.predict(d)
        p1 = model.probabilities(d)
        p2 = back.probabilities(d)
        assert all(p1[m] == pytest.approx(p2[m], abs=1e-15) for m in p1)


def test_archive_contains_spec_named_arrays(tmp_path, trained):
    _, model = trained
    path = tmp_path / "ckpt.npz"
    save_checkpoint(model, path)
    with np.load(path) as data:
        names = set(data.files)
    assert {"token_table", "position_table", "speaker_table", "mixer.W_q",
            "gat.l0.W_h", "gat.l0.a", "gat.l1.W_h", "pool.W_a",
            "kgat.l0.W", "kgat.l0.W_r", "kgat.l0.W_D", "kgat.l0.W_k", "kgat.l0.a",
            "kg.entity_emb", "kg.relation_emb", "kg.proj.0", "s_hat",
            "decoder.W_o", "decoder.b_o", "__manifest__"} <= names


def test_no_kg_checkpoint_round_trip(tmp_path):
    corpus, _, _ = generate_synthetic(SynthConfig(n_dialogues=30, seed=3))
    config = DdnConfig(d=16, max_len=32, epochs=1, lr=1e-3, seed=3, no_kg=True)
    model = DdnModel(build_tokenizer(corpus, config), corpus.medications,
                     corpus.diseases, config, None)
    path = tmp_path / "ckpt.npz"
    save_checkpoint(model, path)
    back, manifest = load_checkpoint(path)
    assert manifest["config"]["no_kg"] is True
    for d in corpus.dialogues[:5]:
        assert torch.allclose(back(d), model(d))
