"""Evaluation math: set-overlap metrics, DDI rate, error taxonomy, truncation.

Jaccard and F1 are computed per dialogue and averaged. The DDI rate pools
pairs across the whole prediction list: interacting predicted pairs over all
predicted pairs. Errors partition into Correct and five disjoint classes by
the subset/intersection relation between predicted and true sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import Dialogue

ERROR_CLASSES = ("Correct", "E1", "E2", "E3", "E4", "E5")


@dataclass(frozen=True)
class DdiGraph:
    """Unordered canonical medication pairs known to interact."""

    pairs: frozenset[tuple[str, str]]

    @staticmethod
    def normalize(a: str, b: str) -> tuple[str, str]:
        return (a, b) if a <= b else (b, a)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> "DdiGraph":
        normed = set()
        for a, b in pairs:
            if a == b:
                continue
            normed.add(cls.normalize(a, b))
        return cls(pairs=frozenset(normed))

    @classmethod
    def from_tsv(cls, path: str | Path) -> "DdiGraph":
        pairs = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                parts = line.split("\t")
                if len(parts) != 2 or not all(parts):
                    raise ValueError(f"{path}:{lineno}: expected `drugA<TAB>drugB`")
                pairs.append((parts[0], parts[1]))
        return cls.from_pairs(pairs)

    def __contains__(self, pair: tuple[str, str]) -> bool:
        return self.normalize(*pair) in self.pairs


@dataclass
class EvaluationReport:
    mean_jaccard: float
    mean_f1: float
    ddi_rate: float
    error_counts: dict[str, int]
    n: int

    def to_dict(self) -> dict:
        return {
            "jaccard": self.mean_jaccard,
            "f1": self.mean_f1,
            "ddi_rate": self.ddi_rate,
            "errors": dict(self.error_counts),
            "n": self.n,
        }


def jaccard(predicted: set, truth: set) -> float:
    union = predicted | truth
    if not union:
        return 1.0
    return len(predicted & truth) / len(union)


def sample_f1(predicted: set, truth: set) -> float:
    hits = len(predicted & truth)
    if hits == 0:
        return 0.0
    precision = hits / len(predicted)
    recall = hits / len(truth)
    return 2 * precision * recall / (precision + recall)


def ddi_rate(predictions: Sequence[set], ddi: DdiGraph) -> float:
    """Interacting predicted pairs over all predicted pairs, pooled."""
    hits = 0
    total = 0
    for pred in predictions:
        for a, b in combinations(sorted(pred), 2):
            total += 1
            if (a, b) in ddi:
                hits += 1
    return hits / total if total else 0.0


def classify_error(predicted: set, truth: set) -> str:
    """Assign the unique Correct/E1..E5 class for one prediction."""
    if not truth:
        raise ValueError("truth set must be non-empty")
    if predicted == truth:
        return "Correct"
    if not predicted:
        return "E1"
    if predicted < truth:
        return "E2"
    if truth < predicted:
        return "E3"
    return "E4" if predicted & truth else "E5"


def evaluate_run(predictions: Mapping[str, set], dialogues: Sequence[Dialogue],
                 ddi: DdiGraph | None = None) -> EvaluationReport:
    """Aggregate metrics over a split; every dialogue must have a prediction."""
    if not dialogues:
        raise ValueError("no dialogues to evaluate")
    jac, f1 = 0.0, 0.0
    errors = {c: 0 for c in ERROR_CLASSES}
    pred_sets = []
    for d in dialogues:
        if d.id not in predictions:
            raise KeyError(f"missing prediction for dialogue {d.id!r}")
        pred = set(predictions[d.id])
        truth = set(d.medications)
        jac += jaccard(pred, truth)
        f1 += sample_f1(pred, truth)
        errors[classify_error(pred, truth)] += 1
        pred_sets.append(pred)
    n = len(dialogues)
    rate = ddi_rate(pred_sets, ddi) if ddi is not None else 0.0
    return EvaluationReport(mean_jaccard=jac / n, mean_f1=f1 / n, ddi_rate=rate,
                            error_counts=errors, n=n)


def truncate_dialogue(dialogue: Dialogue, percent: float) -> Dialogue:
    """Keep the first ceil(percent% * |D|) utterances, at least one."""
    keep = max(1, math.ceil(percent / 100.0 * dialogue.n_turns))
    return replace(dialogue, utterances=dialogue.utterances[:keep])


def truncation_curve(predict_fn, dialogues: Sequence[Dialogue],
                     percents: Sequence[float], min_turns: int = 5) -> list[tuple[float, float]]:
    """Mean Jaccard for prefix-truncated discourse, on dialogues with
    strictly more than min_turns - 1 turns.

    predict_fn maps a Dialogue to a predicted medication set.
    """
    for p in percents:
        if not 0 < p <= 100:
            raise ValueError(f"percent {p} outside (0, 100]")
    eligible = [d for d in dialogues if d.n_turns > min_turns - 1]
    if not eligible:
        raise ValueError(f"no dialogues with more than {min_turns - 1} turns")
    curve = []
    for p in percents:
        total = 0.0
        for d in eligible:
            pred = predict_fn(truncate_dialogue(d, p))
            total += jaccard(set(pred), set(d.medications))
        curve.append((p, total / len(eligible)))
    return curve
