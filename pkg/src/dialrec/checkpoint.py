"""Single-file model checkpoints: named arrays plus an embedded JSON manifest.

Array names follow the params-archive conventions (`token_table`,
`mixer.*`, `gat.l{n}.*`, `kgat.l{n}.*`, `pool.W_a`, `kg.*`, `decoder.*`);
vocabularies and the per-disease sampled subgraphs ride along so evaluation
needs nothing beyond the checkpoint and a corpus.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .encoder import Tokenizer
from .kg import Subgraph
from .model import DdnConfig, DdnModel, DiseaseKnowledge

_RENAMES = [
    (re.compile(r"^encoder\.(token_table|position_table|speaker_table)$"), r"\1"),
    (re.compile(r"^encoder\.(W_[qkv])$"), r"mixer.\1"),
    (re.compile(r"^dialogue_gat\.(\d+)\.(W_h|a)$"), r"gat.l\1.\2"),
    (re.compile(r"^pool\.W_a$"), "pool.W_a"),
    (re.compile(r"^disease_gat\.(\d+)\.(W|W_r|W_D|W_k|a)$"), r"kgat.l\1.\2"),
    (re.compile(r"^kg_entity_emb$"), "kg.entity_emb"),
    (re.compile(r"^kg_relation_emb$"), "kg.relation_emb"),
    (re.compile(r"^kg_self_rel$"), "kg.self_rel"),
    (re.compile(r"^s_hat$"), "s_hat"),
    (re.compile(r"^decoder_W$"), "decoder.W_o"),
    (re.compile(r"^decoder_b$"), "decoder.b_o"),
    (re.compile(r"^disease_table$"), "disease_table"),
]


def _archive_name(state_name: str) -> str:
    for pattern, repl in _RENAMES:
        if pattern.match(state_name):
            return pattern.sub(repl, state_name)
    raise KeyError(f"no archive naming rule for parameter {state_name!r}")


def save_checkpoint(model: DdnModel, path: str | Path, manifest_extra: dict | None = None) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    arrays: dict[str, np.ndarray] = {}
    for name, param in model.named_parameters():
        arrays[_archive_name(name)] = param.detach().numpy()

    arrays["vocab.tokens"] = np.array(model.tokenizer.tokens)
    arrays["vocab.medications"] = np.array(model.medications)
    arrays["vocab.diseases"] = np.array(model.diseases)
    if model.knowledge is not None and not model.config.no_kg:
        kn = model.knowledge
        arrays["kg.entities"] = np.array(kn.entities)
        arrays["kg.relations"] = np.array(kn.relations)
        for rid in range(kn.projections.shape[0]):
            arrays[f"kg.proj.{rid}"] = kn.projections[rid]
        disease_index = {s: i for i, s in enumerate(model.diseases)}
        for disease, sub in kn.subgraphs.items():
            idx = disease_index[disease]
            arrays[f"subgraph.{idx}.nodes"] = np.array(sub.nodes, dtype=np.int64)
            edges = np.array(sub.edges, dtype=np.int64).reshape(-1, 3)
            arrays[f"subgraph.{idx}.edges"] = edges

    manifest = {
        "version": __version__,
        "config": model.config.to_dict(),
        "seed": model.config.seed,
        "vocab_hashes": {
            "tokens": model.tokenizer.vocab_hash,
            "medications": _hash_list(model.medications),
            "diseases": _hash_list(model.diseases),
        },
    }
    if manifest_extra:
        manifest.update(manifest_extra)
    arrays["__manifest__"] = np.array(json.dumps(manifest, sort_keys=True))
    np.savez(path, **arrays)


def _hash_list(items) -> str:
    import hashlib

    return hashlib.sha256("\n".join(items).encode("utf-8")).hexdigest()[:16]


def load_checkpoint(path: str | Path) -> tuple[DdnModel, dict]:
    with np.load(path) as data:
        manifest = json.loads(str(data["__manifest__"]))
        config = DdnConfig(**manifest["config"])
        tokenizer = Tokenizer(data["vocab.tokens"].tolist(), max_len=config.max_len)
        medications = data["vocab.medications"].tolist()
        diseases = data["vocab.diseases"].tolist()

        knowledge = None
        if not config.no_kg:
            n_rel = data["kg.relation_emb"].shape[0]
            subgraphs = {}
            for idx, disease in enumerate(diseases):
                key = f"subgraph.{idx}.nodes"
                if key in data:
                    nodes = data[key].tolist()
                    edges = [tuple(int(v) for v in row)
                             for row in data[f"subgraph.{idx}.edges"]]
                    subgraphs[disease] = Subgraph(root=nodes[0], nodes=tuple(nodes),
                                                  edges=tuple(edges))
            knowledge = DiseaseKnowledge(
                entities=data["kg.entities"].tolist(),
                relations=data["kg.relations"].tolist(),
                entity_emb=data["kg.entity_emb"],
                relation_emb=data["kg.relation_emb"],
                projections=np.stack([data[f"kg.proj.{rid}"] for rid in range(n_rel)]),
                subgraphs=subgraphs,
            )

        model = DdnModel(tokenizer, medications, diseases, config, knowledge)
        for name, param in model.named_parameters():
            param.data = torch.tensor(data[_archive_name(name)], dtype=torch.float64)
    return model, manifest
