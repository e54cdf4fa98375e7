"""QA dialogue graph: speaker blocks and the block-derived utterance graph.

Utterances are nodes. Consecutive utterances by the same speaker form a
block; every pair inside a block is connected, and every node of a block is
connected to every node of the two neighbouring blocks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np


@dataclass(frozen=True)
class Block:
    """Maximal same-speaker run, as a half-open index interval [start, end)."""

    speaker: Hashable
    start: int
    end: int

    def __len__(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class DialogueGraph:
    n: int
    edges: frozenset  # normalized (min, max) pairs; (i, i) entries are self-loops
    self_loops: bool

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.edges

    def adjacency(self) -> np.ndarray:
        """Dense symmetric boolean adjacency; diagonal true when self_loops is set."""
        adj = np.zeros((self.n, self.n), dtype=bool)
        for i, j in self.edges:
            adj[i, j] = True
            adj[j, i] = True
        return adj

    def neighbors(self, i: int) -> list[int]:
        return [j for j in range(self.n) if self.has_edge(i, j)]

    def dump(self) -> str:
        """Adjacency as 0/1 matrix rows in plain text."""
        return "\n".join(" ".join("1" if v else "0" for v in row) for row in self.adjacency())


def segment_blocks(speakers: Sequence[Hashable]) -> list[Block]:
    """Split a speaker sequence into maximal same-speaker runs, in order."""
    if len(speakers) == 0:
        raise ValueError("cannot segment an empty speaker sequence")
    blocks: list[Block] = []
    start = 0
    for i in range(1, len(speakers)):
        if speakers[i] != speakers[i - 1]:
            blocks.append(Block(speakers[start], start, i))
            start = i
    blocks.append(Block(speakers[start], start, len(speakers)))
    return blocks


def build_qa_graph(speakers: Sequence[Hashable], self_loops: bool = True) -> DialogueGraph:
    """Build the utterance graph from intra-block and adjacent-block rules."""
    blocks = segment_blocks(speakers)
    edges: set[tuple[int, int]] = set()
    for b, blk in enumerate(blocks):
        for i in range(blk.start, blk.end):
            for j in range(i + 1, blk.end):
                edges.add((i, j))
        if b + 1 < len(blocks):
            nxt = blocks[b + 1]
            for i in range(blk.start, blk.end):
                for j in range(nxt.start, nxt.end):
                    edges.add((i, j))
    if self_loops:
        for i in range(len(speakers)):
            edges.add((i, i))
    return DialogueGraph(n=len(speakers), edges=frozenset(edges), self_loops=self_loops)
