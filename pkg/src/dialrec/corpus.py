"""Corpus data model: dialogues, label normalization, masking, agreement, stats.

The on-disk format is JSON-lines, one dialogue per line:

    {"id": str, "department": str, "disease": str, "medications": [str],
     "utterances": [{"speaker": "patient"|"doctor", "text": str}],
     "split": "train"|"dev"|"test" (optional)}

A field-name remap (JSON object mapping our keys to the file's keys) lets the
loader ingest corpora released under a different schema.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

from .text import MASK, token_count

NONE_OR_OTHERS = "__NONE_OR_OTHERS__"
DEPARTMENTS = ("Respiratory", "Gastroenterology", "Dermatology")
SPLITS = ("train", "dev", "test")


class CorpusError(Exception):
    """Malformed corpus file or invariant violation."""


class UnlabelableDialogueError(CorpusError):
    """Raw dialogue has no medication mention in any doctor utterance."""


class Speaker(str, Enum):
    PATIENT = "patient"
    DOCTOR = "doctor"


@dataclass(frozen=True)
class Utterance:
    speaker: Speaker
    text: str
    index: int


@dataclass(frozen=True)
class Dialogue:
    id: str
    department: str
    disease: str
    medications: frozenset[str]
    utterances: tuple[Utterance, ...]
    split: str | None = None

    @property
    def speakers(self) -> list[Speaker]:
        return [u.speaker for u in self.utterances]

    @property
    def n_turns(self) -> int:
        return len(self.utterances)

    def full_text(self) -> str:
        return " ".join(u.text for u in self.utterances)


@dataclass
class NormalizationMap:
    """Alias -> canonical maps, kept separately for medications and diseases.

    Canonical names always map to themselves, which makes normalization
    idempotent; a conflicting entry (one alias, two canonicals) is rejected.
    """

    medications: dict[str, str] = field(default_factory=dict)
    diseases: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for mapping, kind in ((self.medications, "medication"), (self.diseases, "disease")):
            for canonical in list(mapping.values()):
                existing = mapping.get(canonical)
                if existing is not None and existing != canonical:
                    raise CorpusError(
                        f"{kind} map is not functional: canonical {canonical!r} "
                        f"is also an alias for {existing!r}"
                    )
                mapping[canonical] = canonical

    def normalize_medication(self, name: str) -> str:
        return self.medications.get(name, name)

    def normalize_disease(self, name: str) -> str:
        return self.diseases.get(name, name)

    @classmethod
    def from_tsv(cls, medications: str | Path | None = None,
                 diseases: str | Path | None = None) -> "NormalizationMap":
        meds = read_alias_tsv(medications) if medications else {}
        dis = read_alias_tsv(diseases) if diseases else {}
        return cls(medications=meds, diseases=dis)


def read_alias_tsv(path: str | Path) -> dict[str, str]:
    """Read an `alias<TAB>canonical` UTF-8 TSV into a functional dict."""
    mapping: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise CorpusError(f"{path}:{lineno}: expected `alias<TAB>canonical`, got {line!r}")
            alias, canonical = parts
            if alias in mapping and mapping[alias] != canonical:
                raise CorpusError(
                    f"{path}:{lineno}: alias {alias!r} maps to both "
                    f"{mapping[alias]!r} and {canonical!r}"
                )
            mapping[alias] = canonical
    return mapping


@dataclass
class Corpus:
    dialogues: list[Dialogue]
    medications: list[str]
    diseases: list[str]

    @classmethod
    def from_dialogues(cls, dialogues: Sequence[Dialogue],
                       medications: Sequence[str] | None = None,
                       diseases: Sequence[str] | None = None) -> "Corpus":
        dialogues = [d if d.split else replace(d, split=hash_split(d.id)) for d in dialogues]
        if medications is None:
            medications = sorted({m for d in dialogues for m in d.medications})
        if diseases is None:
            diseases = sorted({d.disease for d in dialogues} - {NONE_OR_OTHERS})
        return cls(dialogues=list(dialogues), medications=list(medications), diseases=list(diseases))

    def split(self, name: str) -> list[Dialogue]:
        return [d for d in self.dialogues if d.split == name]

    @property
    def medication_index(self) -> dict[str, int]:
        return {m: i for i, m in enumerate(self.medications)}

    @property
    def disease_index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.diseases)}


def hash_split(dialogue_id: str, fractions=(80, 10, 10)) -> str:
    """Deterministic 80/10/10 split keyed on the dialogue id."""
    h = int(hashlib.sha1(dialogue_id.encode("utf-8")).hexdigest()[:8], 16) % 100
    if h < fractions[0]:
        return "train"
    if h < fractions[0] + fractions[1]:
        return "dev"
    return "test"


def _parse_dialogue(obj: dict, lineno: int, maps: NormalizationMap | None,
                    remap: dict[str, str] | None, strict: bool) -> Dialogue:
    def get(key):
        src = remap.get(key, key) if remap else key
        if src not in obj:
            raise CorpusError(f"line {lineno}: missing field {src!r}")
        return obj[src]

    utterances_raw = get("utterances")
    if not isinstance(utterances_raw, list) or not utterances_raw:
        raise CorpusError(f"line {lineno}: `utterances` must be a non-empty list")
    utterances = []
    for i, u in enumerate(utterances_raw):
        try:
            speaker = Speaker(str(u["speaker"]).lower())
        except (KeyError, ValueError, TypeError):
            raise CorpusError(f"line {lineno}: utterance {i} has no valid `speaker`")
        text = u.get("text")
        if not isinstance(text, str) or not text.strip():
            raise CorpusError(f"line {lineno}: utterance {i} has empty `text`")
        utterances.append(Utterance(speaker=speaker, text=text, index=i))

    medications = get("medications")
    if not isinstance(medications, list) or not medications:
        raise CorpusError(f"line {lineno}: `medications` must be a non-empty list")
    disease = str(get("disease"))
    if maps is not None:
        medications = [maps.normalize_medication(str(m)) for m in medications]
        disease = maps.normalize_disease(disease)
        if strict:
            canonical_meds = set(maps.medications.values())
            for m in medications:
                if m not in canonical_meds:
                    raise CorpusError(f"line {lineno}: unknown canonical medication {m!r}")
            if disease != NONE_OR_OTHERS and maps.diseases and disease not in set(maps.diseases.values()):
                raise CorpusError(f"line {lineno}: unknown canonical disease {disease!r}")

    split = obj.get(remap.get("split", "split") if remap else "split")
    if split is not None and split not in SPLITS:
        raise CorpusError(f"line {lineno}: bad split {split!r}")

    dialogue = Dialogue(
        id=str(get("id")),
        department=str(get("department")),
        disease=disease,
        medications=frozenset(medications),
        utterances=tuple(utterances),
        split=split,
    )
    if strict:
        _check_recommendation_point(dialogue, lineno)
    return dialogue


def _check_recommendation_point(dialogue: Dialogue, lineno: int) -> None:
    # Corpus guarantee: the recommending (masked) doctor utterance is final.
    doctor_masked = [u.index for u in dialogue.utterances
                     if u.speaker is Speaker.DOCTOR and MASK in u.text]
    if not doctor_masked:
        raise CorpusError(f"line {lineno}: no masked doctor utterance (recommendation point)")
    if doctor_masked[-1] != dialogue.n_turns - 1 or len(doctor_masked) > 1:
        raise CorpusError(f"line {lineno}: utterances follow the recommendation point")


def load_corpus(path: str | Path, maps: NormalizationMap | None = None,
                remap_path: str | Path | None = None, strict: bool = False) -> Corpus:
    """Load a JSON-lines corpus, canonicalizing labels when maps are given."""
    remap = None
    if remap_path is not None:
        with open(remap_path, encoding="utf-8") as fh:
            remap = json.load(fh)
    dialogues = []
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
            dialogue = _parse_dialogue(obj, lineno, maps, remap, strict)
            if dialogue.id in seen_ids:
                raise CorpusError(f"line {lineno}: duplicate dialogue id {dialogue.id!r}")
            seen_ids.add(dialogue.id)
            dialogues.append(dialogue)
    if not dialogues:
        raise CorpusError(f"{path}: empty corpus")
    return Corpus.from_dialogues(dialogues)


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write JSON-lines with a fixed key order; round-trips with load_corpus."""
    with open(path, "w", encoding="utf-8") as fh:
        for d in corpus.dialogues:
            obj = {
                "id": d.id,
                "department": d.department,
                "disease": d.disease,
                "medications": sorted(d.medications),
                "utterances": [{"speaker": u.speaker.value, "text": u.text} for u in d.utterances],
                "split": d.split,
            }
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def mask_and_truncate(dialogue: Dialogue, meds: NormalizationMap) -> Dialogue:
    """Mask medication mentions and drop utterances after the recommendation.

    The recommendation point is the first doctor utterance containing a known
    medication mention; the returned dialogue carries the canonical set of
    medications mentioned there. Mentions anywhere in the kept prefix are
    replaced with the mask token so no alias survives.
    """
    aliases = sorted(meds.medications, key=len, reverse=True)
    if not aliases:
        raise UnlabelableDialogueError(f"dialogue {dialogue.id}: empty medication map")
    pattern = re.compile("|".join(re.escape(a) for a in aliases), re.IGNORECASE)
    lookup = {a.lower(): c for a, c in meds.medications.items()}

    rec_index = None
    masked: list[Utterance] = []
    extracted: set[str] = set()
    for u in dialogue.utterances:
        mentions = [m.group(0) for m in pattern.finditer(u.text)]
        new_text = pattern.sub(MASK, u.text) if mentions else u.text
        masked.append(Utterance(speaker=u.speaker, text=new_text, index=u.index))
        if u.speaker is Speaker.DOCTOR and mentions and rec_index is None:
            rec_index = u.index
            extracted = {lookup[m.lower()] for m in mentions}
            break
    if rec_index is None:
        raise UnlabelableDialogueError(
            f"dialogue {dialogue.id}: no medication mention in any doctor utterance"
        )
    return replace(dialogue, medications=frozenset(extracted), utterances=tuple(masked))


def cohen_kappa(labels_a: Sequence, labels_b: Sequence) -> float:
    """Cohen's kappa between two annotators' label sequences."""
    if len(labels_a) != len(labels_b):
        raise ValueError(f"label sequences differ in length: {len(labels_a)} vs {len(labels_b)}")
    if len(labels_a) == 0:
        raise ValueError("label sequences are empty")
    n = len(labels_a)
    p_o = sum(a == b for a, b in zip(labels_a, labels_b)) / n
    alphabet = set(labels_a) | set(labels_b)
    p_e = sum(
        (sum(a == lab for a in labels_a) / n) * (sum(b == lab for b in labels_b) / n)
        for lab in alphabet
    )
    if p_e >= 1.0:
        return 1.0
    return (p_o - p_e) / (1.0 - p_e)


def medication_set_labels(corpus: Corpus) -> list[tuple[str, ...]]:
    """Serialize per-dialogue medication sets as sorted tuples (kappa unit)."""
    return [tuple(sorted(d.medications)) for d in corpus.dialogues]


def _stats_row(dialogues: Sequence[Dialogue]) -> dict:
    turns = [d.n_turns for d in dialogues]
    med_counts = [len(d.medications) for d in dialogues]
    utt_lens = [token_count(u.text) for d in dialogues for u in d.utterances]
    diseases = {d.disease for d in dialogues} - {NONE_OR_OTHERS}
    medications = {m for d in dialogues for m in d.medications}
    return {
        "n_dialogues": len(dialogues),
        "n_diseases": len(diseases),
        "n_medications": len(medications),
        "avg_medications": round(sum(med_counts) / len(dialogues), 2),
        "avg_turns": round(sum(turns) / len(dialogues), 2),
        "max_turns": max(turns),
        "avg_utterance_len": round(sum(utt_lens) / len(utt_lens), 2),
        "max_utterance_len": max(utt_lens),
    }


def corpus_stats(corpus: Corpus) -> dict:
    """Per-department, total, and per-split statistics (counts exact, means 2dp)."""
    if not corpus.dialogues:
        raise ValueError("empty corpus")
    departments: dict[str, list[Dialogue]] = {}
    for d in corpus.dialogues:
        departments.setdefault(d.department, []).append(d)
    stats = {dept: _stats_row(ds) for dept, ds in sorted(departments.items())}
    stats["Total"] = _stats_row(corpus.dialogues)
    for name in SPLITS:
        ds = corpus.split(name)
        if ds:
            stats[name] = _stats_row(ds)
    return stats
