"""End-to-end recommendation model: forward pass, loss, and training loop.

The dialogue path encodes utterances, propagates over the QA dialogue graph
with GAT layers, and attention-pools into h_D. The disease path samples a
K-hop subgraph around the disease entity and runs knowledge-aware GAT layers
conditioned on h_D; dialogues without a resolvable disease fall back to a
learnable vector. Both vectors are concatenated and decoded into independent
per-medication probabilities.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .corpus import NONE_OR_OTHERS, Corpus, Dialogue
from .encoder import SPEAKER_IDS, Tokenizer, UtteranceEncoder, init_uniform
from .gat import AttentionPool, GatLayer, KnowledgeGatLayer
from .kg import KnowledgeGraph, Subgraph, TransRParams, lookup_disease_entity, sample_subgraph
from .metrics import evaluate_run
from .qa_graph import build_qa_graph

PROB_EPS = 1e-7


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during optimization."""


@dataclass
class DdnConfig:
    d: int = 64
    max_len: int = 48
    mixer: str = "attention"
    activation: str = "elu"
    gat_layers: int = 2
    kgat_layers: int = 2
    k_hops: int = 2
    fanout: int = 8
    threshold: float = 0.5
    lr: float = 2e-5
    batch_size: int = 8
    epochs: int = 20
    seed: int = 0
    grad_clip: float = 1.0
    freeze_kg: bool = False
    no_dialogue_graph: bool = False
    no_kg: bool = False

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class DiseaseKnowledge:
    """Model-ready KG slice: embeddings plus one sampled subgraph per disease."""

    entities: list[str]
    relations: list[str]
    entity_emb: np.ndarray
    relation_emb: np.ndarray
    projections: np.ndarray
    subgraphs: dict[str, Subgraph]

    @classmethod
    def prepare(cls, kg: KnowledgeGraph, transr: TransRParams, diseases: Sequence[str],
                k: int, fanout: int, seed: int) -> "DiseaseKnowledge":
        subgraphs = {}
        for disease in diseases:
            eid = lookup_disease_entity(disease, kg)
            if eid is None:
                continue
            sub_seed = (seed * 1_000_003 + eid) % (2 ** 31)
            subgraphs[disease] = sample_subgraph(kg, eid, k=k, fanout=fanout, seed=sub_seed)
        return cls(entities=list(kg.entities), relations=list(kg.relations),
                   entity_emb=transr.entity_emb, relation_emb=transr.relation_emb,
                   projections=transr.projections, subgraphs=subgraphs)


class DdnModel(nn.Module):
    """Dialogue + disease encoders with a sigmoid multi-label decoder."""

    def __init__(self, tokenizer: Tokenizer, medications: Sequence[str],
                 diseases: Sequence[str], config: DdnConfig,
                 knowledge: DiseaseKnowledge | None = None):
        super().__init__()
        if not config.no_kg and knowledge is None:
            raise ValueError("knowledge required unless the no_kg ablation is set")
        self.tokenizer = tokenizer
        self.medications = list(medications)
        self.diseases = list(diseases)
        self.config = config
        self.knowledge = knowledge
        d, seed = config.d, config.seed

        self.encoder = UtteranceEncoder(len(tokenizer), d, max_len=config.max_len,
                                        mixer=config.mixer, seed=seed)
        self.dialogue_gat = nn.ModuleList([
            GatLayer(d, d, activation=config.activation, seed=seed, name=f"gat.l{i}")
            for i in range(config.gat_layers)
        ])
        self.pool = AttentionPool(d, seed=seed)
        self.s_hat = nn.Parameter(init_uniform((d,), seed, "s_hat", 0.1))
        self.decoder_W = nn.Parameter(init_uniform((2 * d, len(medications)), seed, "decoder.W_o"))
        self.decoder_b = nn.Parameter(torch.zeros(len(medications), dtype=torch.float64))

        self._disease_index = {s: i for i, s in enumerate(self.diseases)}
        if config.no_kg:
            # Minimal-change substitute: one learnable row per disease + sentinel.
            self.disease_table = nn.Parameter(
                init_uniform((len(self.diseases) + 1, d), seed, "disease_table", 0.1))
        else:
            d_e = knowledge.entity_emb.shape[1]
            d_r = knowledge.relation_emb.shape[1]
            requires = not config.freeze_kg
            self.kg_entity_emb = nn.Parameter(
                torch.tensor(knowledge.entity_emb, dtype=torch.float64), requires_grad=requires)
            self.kg_relation_emb = nn.Parameter(
                torch.tensor(knowledge.relation_emb, dtype=torch.float64), requires_grad=requires)
            self.kg_self_rel = nn.Parameter(init_uniform((d_r,), seed, "kg.self_rel", 0.1))
            widths = [d_e] + [d] * config.kgat_layers
            self.disease_gat = nn.ModuleList([
                KnowledgeGatLayer(widths[i], widths[i + 1], d_rel=d_r, d_dialogue=d,
                                  activation=config.activation, seed=seed, name=f"kgat.l{i}")
                for i in range(config.kgat_layers)
            ])
            self._prepared: dict[str, tuple[torch.Tensor, torch.Tensor]] = {}
            for disease, sub in knowledge.subgraphs.items():
                self._prepared[disease] = self._prepare_subgraph(sub)

        self._graph_cache: dict = {}
        self._token_cache: dict = {}

    def _prepare_subgraph(self, sub: Subgraph) -> tuple[torch.Tensor, torch.Tensor]:
        """Node id tensor and message list (src, dst, rel); edges are made
        bidirectional and every node gets a self-loop with the reserved
        self-relation row appended after the real relations."""
        local = {eid: i for i, eid in enumerate(sub.nodes)}
        self_rel_id = len(self.knowledge.relations)
        messages = []
        for h, r, t in sub.edges:
            hi, ti = local[h], local[t]
            messages.append((hi, ti, r))
            if hi != ti:
                messages.append((ti, hi, r))
        for i in range(len(sub.nodes)):
            messages.append((i, i, self_rel_id))
        nodes = torch.tensor(sub.nodes, dtype=torch.long)
        edges = torch.tensor(sorted(set(messages)), dtype=torch.long)
        return nodes, edges

    def _dialogue_vector(self, dialogue: Dialogue) -> torch.Tensor:
        cached = self._token_cache.get(dialogue.id)
        if cached is None or cached[2] != dialogue.n_turns:
            ids = self.tokenizer.encode_batch([u.text for u in dialogue.utterances])
            speakers = torch.tensor([SPEAKER_IDS[u.speaker] for u in dialogue.utterances],
                                    dtype=torch.long)
            cached = (ids, speakers, dialogue.n_turns)
            self._token_cache[dialogue.id] = cached
        h = self.encoder(cached[0], cached[1])
        if self.config.no_dialogue_graph:
            return self.pool(h)
        key = tuple(dialogue.speakers)
        graph = self._graph_cache.get(key)
        if graph is None:
            graph = build_qa_graph(dialogue.speakers, self_loops=True)
            self._graph_cache[key] = graph
        for layer in self.dialogue_gat:
            h = layer(h, graph)
        return self.pool(h)

    def _disease_vector(self, disease: str, h_dialogue: torch.Tensor) -> torch.Tensor:
        if self.config.no_kg:
            row = self._disease_index.get(disease, len(self.diseases))
            return self.disease_table[row]
        prepared = self._prepared.get(disease)
        if prepared is None:
            return self.s_hat
        nodes, edges = prepared
        feats = self.kg_entity_emb[nodes]
        rel_rows = torch.cat([self.kg_relation_emb, self.kg_self_rel.unsqueeze(0)], dim=0)
        for layer in self.disease_gat:
            feats = layer(feats, edges, rel_rows, h_dialogue)
        return feats[0]  # root is node 0 by construction

    def forward(self, dialogue: Dialogue) -> torch.Tensor:
        """Per-medication probabilities, each in (0, 1)."""
        if dialogue.n_turns < 1:
            raise ValueError("dialogue has no utterances")
        h_dialogue = self._dialogue_vector(dialogue)
        s_disease = self._disease_vector(dialogue.disease, h_dialogue)
        logits = torch.cat([h_dialogue, s_disease]) @ self.decoder_W + self.decoder_b
        return torch.sigmoid(logits)

    def predict(self, dialogue: Dialogue, threshold: float | None = None) -> set[str]:
        with torch.no_grad():
            probs = self.forward(dialogue)
        ids = predict_set(probs, self.config.threshold if threshold is None else threshold)
        return {self.medications[j] for j in ids}

    def probabilities(self, dialogue: Dialogue) -> dict[str, float]:
        with torch.no_grad():
            probs = self.forward(dialogue)
        return {m: float(p) for m, p in zip(self.medications, probs)}

    def label_vector(self, dialogue: Dialogue) -> torch.Tensor:
        y = torch.zeros(len(self.medications), dtype=torch.float64)
        for m in dialogue.medications:
            y[self.medications.index(m)] = 1.0
        return y


def predict_set(probabilities: torch.Tensor | np.ndarray, threshold: float = 0.5) -> set[int]:
    """Indices with probability strictly above the threshold; may be empty."""
    probs = np.asarray(probabilities.detach() if hasattr(probabilities, "detach")
                       else probabilities, dtype=float)
    if probs.min() < 0.0 or probs.max() > 1.0:
        raise ValueError("probabilities must lie in [0, 1]")
    return {int(j) for j in np.nonzero(probs > threshold)[0]}


def bce_loss(y_hat: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Summed binary cross-entropy with probabilities clamped to [eps, 1-eps]."""
    if y_hat.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(y_hat.shape)} vs {tuple(y.shape)}")
    p = y_hat.clamp(PROB_EPS, 1.0 - PROB_EPS)
    return -(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p)).sum()


def predict_split(model: DdnModel, dialogues: Sequence[Dialogue]) -> dict[str, set[str]]:
    return {d.id: model.predict(d) for d in dialogues}


@dataclass
class TrainResult:
    model: DdnModel
    log: list[dict] = dc_field(default_factory=list)
    best_epoch: int = -1
    best_dev_jaccard: float = 0.0


def build_tokenizer(corpus: Corpus, config: DdnConfig) -> Tokenizer:
    texts = [u.text for d in corpus.split("train") for u in d.utterances]
    if not texts:
        texts = [u.text for d in corpus.dialogues for u in d.utterances]
    return Tokenizer.build(texts, max_len=config.max_len)


def train_model(corpus: Corpus, knowledge: DiseaseKnowledge | None,
                config: DdnConfig) -> TrainResult:
    """Adam training on the train split with best-dev-Jaccard checkpointing.

    Deterministic under config.seed: parameter groups, data order, and
    subgraph sampling all derive their randomness from it.
    """
    train = corpus.split("train")
    if not train:
        raise ValueError("corpus has no train split")
    dev = corpus.split("dev")
    tokenizer = build_tokenizer(corpus, config)
    model = DdnModel(tokenizer, corpus.medications, corpus.diseases, config, knowledge)
    optimizer = torch.optim.Adam([p for p in model.parameters() if p.requires_grad], lr=config.lr)
    order_rng = np.random.default_rng(config.seed)

    result = TrainResult(model=model)
    best_state = copy.deepcopy(model.state_dict())
    labels = {d.id: model.label_vector(d) for d in corpus.dialogues}

    for epoch in range(config.epochs):
        order = order_rng.permutation(len(train))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [train[i] for i in order[start:start + config.batch_size]]
            loss = torch.stack([bce_loss(model(d), labels[d.id]) for d in batch]).sum()
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch offset {start}")
            optimizer.zero_grad()
            loss.backward()
            if config.grad_clip > 0:
                nn.utils.clip_grad_norm_([p for p in model.parameters() if p.requires_grad],
                                         config.grad_clip)
            optimizer.step()
            epoch_loss += float(loss.detach())

        entry = {"epoch": epoch, "train_loss": round(epoch_loss, 6)}
        if dev:
            report = evaluate_run(predict_split(model, dev), dev)
            entry["dev_jaccard"] = round(report.mean_jaccard, 6)
            entry["dev_f1"] = round(report.mean_f1, 6)
            if report.mean_jaccard > result.best_dev_jaccard:
                result.best_dev_jaccard = report.mean_jaccard
                result.best_epoch = epoch
                best_state = copy.deepcopy(model.state_dict())
        result.log.append(entry)

    if dev and result.best_epoch >= 0:
        model.load_state_dict(best_state)
    return result
