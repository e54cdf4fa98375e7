"""Graph attention primitives.

Three pieces: the plain single-head GAT layer over a dialogue graph, softmax
attention pooling of node embeddings into one vector, and the
knowledge-aware layer whose attention logits fuse a transformed node pair,
the edge's relation embedding, and the dialogue vector.
"""

from __future__ import annotations

import torch
from torch import nn

from .encoder import init_uniform
from .qa_graph import DialogueGraph

LEAKY_SLOPE = 0.2

_ACTIVATIONS = {
    "elu": torch.nn.functional.elu,
    "relu": torch.relu,
    "tanh": torch.tanh,
    "identity": lambda x: x,
}


class EmptyNeighborhoodError(ValueError):
    pass


def _activation(name: str):
    if name not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(_ACTIVATIONS)}")
    return _ACTIVATIONS[name]


def masked_softmax(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Row-wise softmax over masked entries, max-subtracted for stability."""
    neg = torch.finfo(logits.dtype).min
    shifted = logits.masked_fill(~mask, neg)
    shifted = shifted - shifted.max(dim=-1, keepdim=True).values.detach()
    exp = torch.exp(shifted) * mask
    return exp / exp.sum(dim=-1, keepdim=True)


class GatLayer(nn.Module):
    """Single-head graph attention: h'_i = act(sum_j alpha_ij W_h h_j)."""

    def __init__(self, d_in: int, d_out: int, activation: str = "elu", seed: int = 0,
                 name: str = "gat"):
        super().__init__()
        self.act = _activation(activation)
        self.W_h = nn.Parameter(init_uniform((d_in, d_out), seed, f"{name}.W_h"))
        self.a = nn.Parameter(init_uniform((2 * d_out,), seed, f"{name}.a"))

    def attention(self, h: torch.Tensor, graph: DialogueGraph) -> torch.Tensor:
        """Dense (n, n) attention weights; zero on non-edges, rows sum to 1."""
        if h.shape[0] != graph.n:
            raise ValueError(f"feature rows {h.shape[0]} != graph nodes {graph.n}")
        mask = torch.from_numpy(graph.adjacency())
        if not mask.any(dim=1).all():
            raise EmptyNeighborhoodError("empty neighborhood: node without neighbors or self-loop")
        z = h @ self.W_h
        d_out = z.shape[1]
        logits = (z @ self.a[:d_out]).unsqueeze(1) + (z @ self.a[d_out:]).unsqueeze(0)
        logits = torch.nn.functional.leaky_relu(logits, LEAKY_SLOPE)
        return masked_softmax(logits, mask)

    def forward(self, h: torch.Tensor, graph: DialogueGraph) -> torch.Tensor:
        alpha = self.attention(h, graph)
        return self.act(alpha @ (h @ self.W_h))


class AttentionPool(nn.Module):
    """Softmax-weighted sum of node embeddings into a single vector."""

    def __init__(self, d: int, seed: int = 0, name: str = "pool"):
        super().__init__()
        self.W_a = nn.Parameter(init_uniform((d,), seed, f"{name}.W_a"))

    def weights(self, h: torch.Tensor) -> torch.Tensor:
        return torch.softmax(h @ self.W_a, dim=0)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        if h.shape[0] < 1:
            raise ValueError("attention pooling needs at least one node")
        return self.weights(h) @ h


class KnowledgeGatLayer(nn.Module):
    """Graph attention with relation- and dialogue-conditioned logits.

    Messages run along typed directed edges (src, dst, relation row); the
    logit for each message concatenates W[h_dst, h_src], W_r r, and W_D h_D
    before the attention vector. Aggregation uses W_k as in the plain layer.
    """

    def __init__(self, d_in: int, d_out: int, d_rel: int, d_dialogue: int,
                 activation: str = "elu", seed: int = 0, name: str = "kgat",
                 d_pair: int | None = None):
        super().__init__()
        d_pair = d_pair or d_out
        self.act = _activation(activation)
        self.W = nn.Parameter(init_uniform((2 * d_in, d_pair), seed, f"{name}.W"))
        self.W_r = nn.Parameter(init_uniform((d_rel, d_out), seed, f"{name}.W_r"))
        self.W_D = nn.Parameter(init_uniform((d_dialogue, d_out), seed, f"{name}.W_D"))
        self.W_k = nn.Parameter(init_uniform((d_in, d_out), seed, f"{name}.W_k"))
        self.a = nn.Parameter(init_uniform((d_pair + 2 * d_out,), seed, f"{name}.a"))

    def attention(self, h: torch.Tensor, edges: torch.Tensor, rel_emb: torch.Tensor,
                  h_dialogue: torch.Tensor) -> torch.Tensor:
        """Per-message weights (len(edges),), softmaxed within each dst group."""
        if edges.numel() == 0:
            raise EmptyNeighborhoodError("empty neighborhood: subgraph has no messages")
        src, dst, rel = edges[:, 0], edges[:, 1], edges[:, 2]
        if int(rel.max()) >= rel_emb.shape[0]:
            raise KeyError(f"missing relation embedding for relation id {int(rel.max())}")
        n = h.shape[0]
        pair = torch.cat([h[dst], h[src]], dim=1) @ self.W
        rel_part = rel_emb[rel] @ self.W_r
        dlg_part = (h_dialogue @ self.W_D).unsqueeze(0).expand(len(src), -1)
        logits = torch.cat([pair, rel_part, dlg_part], dim=1) @ self.a
        logits = torch.nn.functional.leaky_relu(logits, LEAKY_SLOPE)

        counts = torch.zeros(n, dtype=torch.long).index_add_(0, dst, torch.ones_like(dst))
        if (counts == 0).any():
            raise EmptyNeighborhoodError("empty neighborhood: node receives no messages")
        neg = torch.finfo(logits.dtype).min
        group_max = torch.full((n,), neg, dtype=logits.dtype).scatter_reduce_(
            0, dst, logits.detach(), reduce="amax", include_self=True)
        exp = torch.exp(logits - group_max[dst])
        denom = torch.zeros(n, dtype=logits.dtype).index_add_(0, dst, exp)
        return exp / denom[dst]

    def forward(self, h: torch.Tensor, edges: torch.Tensor, rel_emb: torch.Tensor,
                h_dialogue: torch.Tensor) -> torch.Tensor:
        beta = self.attention(h, edges, rel_emb, h_dialogue)
        messages = beta.unsqueeze(1) * (h[edges[:, 0]] @ self.W_k)
        out = torch.zeros((h.shape[0], messages.shape[1]), dtype=h.dtype)
        out.index_add_(0, edges[:, 1], messages)
        return self.act(out)
