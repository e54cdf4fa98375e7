"""Utterance encoding: token/position/speaker embeddings plus a light mixer.

Each utterance is encoded independently into one d-vector. The default mixer
is single-head scaled dot-product attention read out at a prepended [CLS]
slot; an averaging mixer is available for gradient-check simplicity. Any
external object mapping (token ids, speaker ids) to d-vectors can stand in
behind the same interface.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Sequence

import torch
from torch import nn

from .corpus import Dialogue, Speaker, Utterance
from .text import CLS_ID, PAD_ID, RESERVED_TOKENS, SEP_ID, UNK_ID, tokenize

SPEAKER_IDS = {Speaker.DOCTOR: 0, Speaker.PATIENT: 1}


class Tokenizer:
    """Vocabulary-backed tokenizer with stable reserved ids."""

    def __init__(self, tokens: Sequence[str], max_len: int = 48):
        if tuple(tokens[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise ValueError(f"vocabulary must start with the reserved tokens {RESERVED_TOKENS}")
        if max_len < 3:
            raise ValueError("max_len must leave room for [CLS] and [SEP]")
        self.tokens = list(tokens)
        self.ids = {t: i for i, t in enumerate(self.tokens)}
        self.max_len = max_len

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def build(cls, texts: Sequence[str], max_len: int = 48, min_freq: int = 1) -> "Tokenizer":
        counts: dict[str, int] = {}
        for text in texts:
            for tok in tokenize(text):
                counts[tok] = counts.get(tok, 0) + 1
        kept = sorted(t for t, c in counts.items() if c >= min_freq and t not in RESERVED_TOKENS)
        return cls(list(RESERVED_TOKENS) + kept, max_len=max_len)

    def encode(self, text: str) -> list[int]:
        body = [self.ids.get(t, UNK_ID) for t in tokenize(text)][: self.max_len - 2]
        return [CLS_ID] + body + [SEP_ID]

    def encode_batch(self, texts: Sequence[str]) -> torch.Tensor:
        rows = [self.encode(t) for t in texts]
        width = max(len(r) for r in rows)
        out = torch.full((len(rows), width), PAD_ID, dtype=torch.long)
        for i, row in enumerate(rows):
            out[i, : len(row)] = torch.tensor(row, dtype=torch.long)
        return out

    @property
    def vocab_hash(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()[:16]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, max_len: int = 48) -> "Tokenizer":
        tokens = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tokens, max_len=max_len)


def _seeded_generator(seed: int, name: str) -> torch.Generator:
    digest = hashlib.sha256(f"{seed}:{name}".encode("utf-8")).digest()
    return torch.Generator().manual_seed(int.from_bytes(digest[:8], "big") >> 1)


def init_uniform(shape, seed: int, name: str, scale: float | None = None) -> torch.Tensor:
    """Seeded xavier-style uniform init; the (seed, name) pair pins the draw."""
    fan_in, fan_out = (shape[0], shape[-1]) if len(shape) > 1 else (shape[0], shape[0])
    bound = scale if scale is not None else (6.0 / (fan_in + fan_out)) ** 0.5
    out = torch.empty(shape, dtype=torch.float64)
    out.uniform_(-bound, bound, generator=_seeded_generator(seed, name))
    return out


class UtteranceEncoder(nn.Module):
    """Sum of token/position/speaker embeddings, mixed into one vector."""

    def __init__(self, vocab_size: int, d: int, max_len: int = 48,
                 mixer: str = "attention", seed: int = 0):
        super().__init__()
        if mixer not in ("attention", "average"):
            raise ValueError(f"unknown mixer {mixer!r}")
        self.d = d
        self.mixer = mixer
        self.token_table = nn.Parameter(init_uniform((vocab_size, d), seed, "enc.token", 0.1))
        self.position_table = nn.Parameter(init_uniform((max_len, d), seed, "enc.position", 0.1))
        self.speaker_table = nn.Parameter(init_uniform((2, d), seed, "enc.speaker", 0.1))
        if mixer == "attention":
            self.W_q = nn.Parameter(init_uniform((d, d), seed, "enc.mixer.W_q"))
            self.W_k = nn.Parameter(init_uniform((d, d), seed, "enc.mixer.W_k"))
        self.W_v = nn.Parameter(init_uniform((d, d), seed, "enc.mixer.W_v"))

    def forward(self, token_ids: torch.Tensor, speaker_ids: torch.Tensor) -> torch.Tensor:
        """Encode a padded (B, T) id batch into (B, d) utterance vectors."""
        if token_ids.ndim != 2:
            raise ValueError("token_ids must be (batch, positions)")
        mask = token_ids != PAD_ID
        pos = torch.arange(token_ids.shape[1], device=token_ids.device)
        x = (self.token_table[token_ids]
             + self.position_table[pos].unsqueeze(0)
             + self.speaker_table[speaker_ids].unsqueeze(1))
        values = x @ self.W_v
        if self.mixer == "average":
            counts = mask.sum(dim=1, keepdim=True).to(x.dtype)
            return (values * mask.unsqueeze(-1)).sum(dim=1) / counts
        q = x[:, 0] @ self.W_q                       # [CLS] sits at position 0
        k = x @ self.W_k
        logits = (k @ q.unsqueeze(-1)).squeeze(-1) / self.d ** 0.5
        logits = logits.masked_fill(~mask, float("-inf"))
        attn = torch.softmax(logits, dim=1)
        return (attn.unsqueeze(-1) * values).sum(dim=1)


def encode_utterance(u: Utterance, tokenizer: Tokenizer, encoder: UtteranceEncoder) -> torch.Tensor:
    ids = tokenizer.encode_batch([u.text])
    speakers = torch.tensor([SPEAKER_IDS[u.speaker]], dtype=torch.long)
    return encoder(ids, speakers)[0]


def encode_dialogue(dialogue: Dialogue, tokenizer: Tokenizer,
                    encoder: UtteranceEncoder) -> torch.Tensor:
    """Encode all utterances of one dialogue into a (|D|, d) matrix."""
    ids = tokenizer.encode_batch([u.text for u in dialogue.utterances])
    speakers = torch.tensor([SPEAKER_IDS[u.speaker] for u in dialogue.utterances], dtype=torch.long)
    return encoder(ids, speakers)


class PretrainedEncoderAdapter:
    """Interface stub for plugging a pretrained language model in.

    Implementations must map a Dialogue to a (|D|, d) float tensor, one row
    per utterance; downstream layers depend on nothing else. Shipping actual
    pretrained weights is out of scope here.
    """

    def __init__(self, d: int):
        self.d = d

    def encode_dialogue(self, dialogue: Dialogue) -> torch.Tensor:
        raise NotImplementedError("plug in a concrete pretrained encoder")
