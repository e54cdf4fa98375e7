"""Knowledge-graph store, TransR embedding pretraining, and K-hop sampling.

Triples live in a `head<TAB>relation<TAB>tail` TSV; an optional
`alias<TAB>entity` TSV feeds the entity alias index used for disease lookup.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .corpus import NONE_OR_OTHERS


class KgError(Exception):
    pass


@dataclass
class KnowledgeGraph:
    entities: list[str] = field(default_factory=list)
    relations: list[str] = field(default_factory=list)
    triples: set[tuple[int, int, int]] = field(default_factory=set)
    aliases: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.entity_index = {name: i for i, name in enumerate(self.entities)}
        self.relation_index = {name: i for i, name in enumerate(self.relations)}
        self._adjacency: dict[int, list[tuple[int, int, int]]] | None = None

    def entity_id(self, name: str) -> int:
        if name not in self.entity_index:
            self.entity_index[name] = len(self.entities)
            self.entities.append(name)
        return self.entity_index[name]

    def relation_id(self, name: str) -> int:
        if name not in self.relation_index:
            self.relation_index[name] = len(self.relations)
            self.relations.append(name)
        return self.relation_index[name]

    def add_triple(self, head: str, relation: str, tail: str) -> None:
        self.triples.add((self.entity_id(head), self.relation_id(relation), self.entity_id(tail)))
        self._adjacency = None

    def add_alias(self, alias: str, entity: str) -> None:
        eid = self.entity_id(entity)
        existing = self.aliases.get(alias)
        if existing is not None and existing != eid:
            raise KgError(f"alias {alias!r} maps to two entities")
        self.aliases[alias] = eid

    def adjacency(self) -> dict[int, list[tuple[int, int, int]]]:
        """Incident triples per entity (both directions), in sorted order."""
        if self._adjacency is None:
            adj: dict[int, list[tuple[int, int, int]]] = {}
            for t in sorted(self.triples):
                adj.setdefault(t[0], []).append(t)
                if t[2] != t[0]:
                    adj.setdefault(t[2], []).append(t)
            self._adjacency = adj
        return self._adjacency


def load_kg(triples_path: str | Path, aliases_path: str | Path | None = None) -> KnowledgeGraph:
    """Load and deduplicate a triples TSV, plus an optional alias TSV."""
    kg = KnowledgeGraph()
    with open(triples_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not all(parts):
                raise KgError(f"{triples_path}:{lineno}: expected `head<TAB>relation<TAB>tail`")
            kg.add_triple(*parts)
    if aliases_path is not None:
        with open(aliases_path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                parts = line.split("\t")
                if len(parts) != 2 or not all(parts):
                    raise KgError(f"{aliases_path}:{lineno}: expected `alias<TAB>entity`")
                kg.add_alias(parts[0], parts[1])
    return kg


def write_kg(kg: KnowledgeGraph, triples_path: str | Path,
             aliases_path: str | Path | None = None) -> None:
    with open(triples_path, "w", encoding="utf-8") as fh:
        for h, r, t in sorted(kg.triples):
            fh.write(f"{kg.entities[h]}\t{kg.relations[r]}\t{kg.entities[t]}\n")
    if aliases_path is not None:
        with open(aliases_path, "w", encoding="utf-8") as fh:
            for alias, eid in sorted(kg.aliases.items()):
                fh.write(f"{alias}\t{kg.entities[eid]}\n")


def lookup_disease_entity(disease: str, kg: KnowledgeGraph) -> int | None:
    """Resolve a disease label to an entity id; None means not found."""
    if disease == NONE_OR_OTHERS:
        return None
    if disease in kg.entity_index:
        return kg.entity_index[disease]
    return kg.aliases.get(disease)


@dataclass
class TransRParams:
    """Entity/relation embeddings plus per-relation projection matrices."""

    entity_emb: np.ndarray    # (|E|, d_e)
    relation_emb: np.ndarray  # (|R|, d_r)
    projections: np.ndarray   # (|R|, d_e, d_r)

    @property
    def d_e(self) -> int:
        return self.entity_emb.shape[1]

    @property
    def d_r(self) -> int:
        return self.relation_emb.shape[1]

    def save(self, path: str | Path) -> None:
        arrays = {"kg.entity_emb": self.entity_emb, "kg.relation_emb": self.relation_emb}
        for rid in range(self.projections.shape[0]):
            arrays[f"kg.proj.{rid}"] = self.projections[rid]
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "TransRParams":
        with np.load(path) as data:
            n_rel = data["kg.relation_emb"].shape[0]
            proj = np.stack([data[f"kg.proj.{rid}"] for rid in range(n_rel)])
            return cls(entity_emb=data["kg.entity_emb"],
                       relation_emb=data["kg.relation_emb"],
                       projections=proj)


def transr_score(h: int, r: int, t: int, params: TransRParams) -> float:
    """Squared translation residual in relation space; lower is more plausible."""
    n_ent, n_rel = params.entity_emb.shape[0], params.relation_emb.shape[0]
    if not (0 <= h < n_ent and 0 <= t < n_ent):
        raise KgError(f"unknown entity id in ({h}, {r}, {t})")
    if not 0 <= r < n_rel:
        raise KgError(f"unknown relation id {r}")
    proj = params.projections[r]
    diff = params.entity_emb[h] @ proj + params.relation_emb[r] - params.entity_emb[t] @ proj
    return float(diff @ diff)


@dataclass
class TransRConfig:
    d_e: int = 32
    d_r: int = 32
    margin: float = 1.0
    epochs: int = 100
    negatives_per_positive: int = 1
    lr: float = 5e-2
    seed: int = 0


def train_transr(kg: KnowledgeGraph, config: TransRConfig | None = None,
                 on_epoch=None) -> TransRParams:
    """Margin-ranking pretraining with uniform head/tail corruption.

    Entity embeddings are projected back inside the unit ball after every
    epoch. Deterministic under the config seed.
    """
    config = config or TransRConfig()
    if not kg.triples:
        raise KgError("cannot train on an empty knowledge graph")
    gen = torch.Generator().manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    n_ent, n_rel = len(kg.entities), len(kg.relations)

    entity = torch.empty((n_ent, config.d_e), dtype=torch.float64)
    relation = torch.empty((n_rel, config.d_r), dtype=torch.float64)
    bound_e = 6.0 / np.sqrt(config.d_e)
    bound_r = 6.0 / np.sqrt(config.d_r)
    entity.uniform_(-bound_e, bound_e, generator=gen)
    relation.uniform_(-bound_r, bound_r, generator=gen)
    entity = (entity / entity.norm(dim=1, keepdim=True)).requires_grad_(True)
    relation = (relation / relation.norm(dim=1, keepdim=True)).requires_grad_(True)
    proj = torch.eye(config.d_e, config.d_r, dtype=torch.float64).repeat(n_rel, 1, 1)
    proj += torch.empty_like(proj).normal_(0.0, 0.01, generator=gen)
    proj.requires_grad_(True)

    positives = np.array(sorted(kg.triples), dtype=np.int64)
    triple_set = kg.triples
    optimizer = torch.optim.Adam([entity, relation, proj], lr=config.lr)

    def scores(h, r, t):
        p = proj[r]                                   # (B, d_e, d_r)
        head = torch.bmm(entity[h].unsqueeze(1), p).squeeze(1)
        tail = torch.bmm(entity[t].unsqueeze(1), p).squeeze(1)
        return ((head + relation[r] - tail) ** 2).sum(dim=1)

    for epoch in range(config.epochs):
        order = rng.permutation(len(positives))
        batch = positives[order]
        reps = config.negatives_per_positive
        pos = np.repeat(batch, reps, axis=0)
        neg = pos.copy()
        for i in range(len(neg)):
            side = 0 if rng.random() < 0.5 else 2
            for _ in range(10):
                candidate = int(rng.integers(n_ent))
                corrupted = (candidate, neg[i, 1], neg[i, 2]) if side == 0 \
                    else (neg[i, 0], neg[i, 1], candidate)
                if corrupted not in triple_set:
                    neg[i, side] = candidate
                    break

        h, r, t = (torch.from_numpy(pos[:, k]) for k in range(3))
        hn, rn, tn = (torch.from_numpy(neg[:, k]) for k in range(3))
        loss = torch.relu(config.margin + scores(h, r, t) - scores(hn, rn, tn)).sum()
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        with torch.no_grad():
            norms = entity.norm(dim=1, keepdim=True).clamp(min=1.0)
            entity.div_(norms)
        if on_epoch is not None:
            on_epoch(epoch, float(loss.detach()))

    return TransRParams(entity_emb=entity.detach().numpy().copy(),
                        relation_emb=relation.detach().numpy().copy(),
                        projections=proj.detach().numpy().copy())


@dataclass(frozen=True)
class Subgraph:
    """Sampled K-hop neighborhood; nodes are entity ids, root listed first."""

    root: int
    nodes: tuple[int, ...]
    edges: tuple[tuple[int, int, int], ...]  # directed triples as stored


def sample_subgraph(kg: KnowledgeGraph, root: int, k: int = 2, fanout: int = 8,
                    seed: int = 0) -> Subgraph:
    """BFS from root to depth k, keeping at most `fanout` triples per expansion."""
    if root not in range(len(kg.entities)):
        raise KgError(f"unknown root entity id {root}")
    if k < 1 or fanout < 1:
        raise ValueError("k and fanout must be >= 1")
    rng = np.random.default_rng(seed)
    adjacency = kg.adjacency()
    nodes: list[int] = [root]
    seen = {root}
    edges: list[tuple[int, int, int]] = []
    edge_set: set[tuple[int, int, int]] = set()
    frontier = [root]
    for _ in range(k):
        next_frontier: list[int] = []
        for node in frontier:
            incident = adjacency.get(node, [])
            if not incident:
                continue
            take = min(fanout, len(incident))
            chosen = rng.choice(len(incident), size=take, replace=False)
            for idx in sorted(chosen):
                triple = incident[idx]
                if triple not in edge_set:
                    edge_set.add(triple)
                    edges.append(triple)
                other = triple[2] if triple[0] == node else triple[0]
                if other not in seen:
                    seen.add(other)
                    nodes.append(other)
                    next_frontier.append(other)
        frontier = next_frontier
    return Subgraph(root=root, nodes=tuple(nodes), edges=tuple(edges))
