"""Synthetic corpus, knowledge graph, and DDI set for desk-scale runs.

Labels follow a fixed two-part rule. Every dialogue carries its department's
first-line medication, which the text never reveals: a held-out slice of
diseases appears only outside the train split, so that medication is
decidable only through KG neighbors shared with sibling diseases. The second
medication is a Latin-square lookup on a (symptom, modifier) keyword pair
placed in two different patient utterances, which rewards models that fuse
information across the dialogue graph.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .corpus import DEPARTMENTS, NONE_OR_OTHERS, Corpus, Dialogue, Speaker, Utterance
from .kg import KnowledgeGraph
from .metrics import DdiGraph
from .text import MASK

SYMPTOMS = ("cough", "fever", "rash", "nausea", "headache", "fatigue")
MODIFIERS = ("mild", "severe", "recurring", "sudden", "persistent", "intermittent")
N_KEYWORDS = 4  # dialogues draw from the first few keywords of each list

_DISEASE_NAMES = {
    "Respiratory": ("Bronchitis", "Pneumonia", "Asthma", "Sinusitis", "Laryngitis"),
    "Gastroenterology": ("Gastritis", "Duodenitis", "Colitis", "Esophagitis", "Enteritis"),
    "Dermatology": ("Dermatitis", "Eczema", "Urticaria", "Psoriasis", "Rosacea"),
}
_CLASS_MEDS = ("Ambroxol", "Omeprazole", "Loratadine")
_POOL_MEDS = ("Cefixime", "Ibuprofen", "Azithromycin", "Mosapride",
              "Montelukast", "Cetirizine", "Ranitidine", "Amoxicillin")
_FILLERS = (
    "well", "thanks", "please", "today", "really", "anyway", "maybe", "again",
    "honestly", "quite", "somewhat", "earlier", "probably", "perhaps", "indeed",
    "recently", "often", "rarely", "slightly", "overall", "besides", "anyhow",
    "meanwhile", "certainly", "basically", "actually", "typically", "normally",
    "generally", "occasionally", "frankly", "supposedly", "apparently", "truly",
    "mostly", "somehow", "roughly", "barely", "usually", "gladly",
)

NONE_OR_OTHERS_PERIOD = 12  # every 12th dialogue gets the sentinel disease


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_dialogues: int = 500
    n_diseases: int = 9
    n_medications: int = 9
    vocab_size: int = 40
    kg_fanout: int = 2
    seed: int = 0


@dataclass(frozen=True)
class SynthPlan:
    """Derived name tables and the label rule shared by generator and tests."""

    departments: tuple[str, ...]
    diseases: tuple[str, ...]
    disease_department: dict[str, str]
    medications: tuple[str, ...]
    class_meds: dict[str, str]        # department -> first-line medication
    pool_meds: tuple[str, ...]
    holdout_diseases: tuple[str, ...]  # appear only in dev/test
    fillers: tuple[str, ...]

    def rule_medications(self, disease: str, sym_index: int, mod_index: int) -> frozenset[str]:
        meds = set()
        if disease != NONE_OR_OTHERS:
            meds.add(self.class_meds[self.disease_department[disease]])
        if self.pool_meds:
            meds.add(self.pool_meds[(sym_index + mod_index) % len(self.pool_meds)])
        return frozenset(meds)


def build_plan(config: SynthConfig) -> SynthPlan:
    if min(config.n_dialogues, config.n_diseases, config.n_medications,
           config.vocab_size, config.kg_fanout) < 1:
        raise SynthError("all synthesis counts must be >= 1")
    if config.n_medications < config.n_diseases:
        raise SynthError("need n_medications >= n_diseases")

    n_depts = min(len(DEPARTMENTS), config.n_diseases)
    departments = DEPARTMENTS[:n_depts]
    diseases, dept_of = [], {}
    for i in range(config.n_diseases):
        dept = departments[i % n_depts]
        names = _DISEASE_NAMES[dept]
        name = names[i // n_depts] if i // n_depts < len(names) else f"{dept}Condition{i}"
        diseases.append(name)
        dept_of[name] = dept

    med_names = list(_CLASS_MEDS[:n_depts])
    pool_needed = config.n_medications - n_depts
    for i in range(pool_needed):
        med_names.append(_POOL_MEDS[i] if i < len(_POOL_MEDS) else f"Medexol{i}")
    class_meds = {dept: med_names[i] for i, dept in enumerate(departments)}
    pool = tuple(med_names[n_depts:])

    by_dept: dict[str, list[str]] = {dept: [] for dept in departments}
    for name in diseases:
        by_dept[dept_of[name]].append(name)
    holdout = tuple(names[-1] for names in by_dept.values() if len(names) >= 2)

    fillers = tuple(_FILLERS[i] if i < len(_FILLERS) else f"note{i}"
                    for i in range(config.vocab_size))
    return SynthPlan(departments=departments, diseases=tuple(diseases),
                     disease_department=dept_of, medications=tuple(sorted(med_names)),
                     class_meds=class_meds, pool_meds=pool,
                     holdout_diseases=holdout, fillers=fillers)


def _recommendation(meds: frozenset[str]) -> str:
    return " and ".join([MASK] * max(1, len(meds)))


def _utterances(family: int, sym: str, mod: str, meds: frozenset[str], pick) -> list[tuple[Speaker, str]]:
    p, d = Speaker.PATIENT, Speaker.DOCTOR
    masks = _recommendation(meds)
    # keyword-bearing utterances stay filler-free so the supervision signal
    # is not entangled with sampled noise words
    if family == 0:
        return [
            (p, f"hello doctor i have been dealing with {sym}"),
            (d, f"i see {pick()} how does it feel overall"),
            (p, f"it feels {mod} most days"),
            (d, f"understood {pick()} you should take {masks}"),
        ]
    if family == 1:
        return [
            (p, f"hi there my {sym} came back"),
            (p, f"and lately it has been {mod}"),
            (d, f"alright {pick()} let me think {pick()}"),
            (d, f"noted {pick()} anything you tried already"),
            (p, f"nothing yet {pick()}"),
            (d, f"then please take {masks} as directed"),
        ]
    return [
        (p, f"good morning i think my {sym} is acting up"),
        (d, f"when did it start {pick()}"),
        (p, f"a few days ago {pick()} {pick()}"),
        (d, f"any pattern to it {pick()}"),
        (p, f"it gets {mod} at night"),
        (d, f"based on this you should use {masks}"),
    ]


def generate_synthetic(config: SynthConfig) -> tuple[Corpus, KnowledgeGraph, DdiGraph]:
    """Build (corpus, knowledge graph, DDI set); byte-stable under the seed."""
    plan = build_plan(config)
    rng = np.random.default_rng(config.seed)

    n_train = round(config.n_dialogues * 0.8)
    n_dev = round(config.n_dialogues * 0.1)
    seen = [s for s in plan.diseases if s not in plan.holdout_diseases]

    k_sym = min(N_KEYWORDS, len(SYMPTOMS))
    k_mod = min(N_KEYWORDS, len(MODIFIERS))
    combos = list(product(range(k_sym), range(k_mod)))
    combo_order = [combos[i] for i in rng.permutation(len(combos))]

    dialogues = []
    train_cursor = dev_cursor = 0
    for i in range(config.n_dialogues):
        split = "train" if i < n_train else ("dev" if i < n_train + n_dev else "test")
        sym_i, mod_i = combo_order[i % len(combo_order)]
        use_sentinel = (i % NONE_OR_OTHERS_PERIOD == NONE_OR_OTHERS_PERIOD - 1
                        and len(plan.pool_meds) > 0)
        if use_sentinel:
            disease = NONE_OR_OTHERS
            department = plan.departments[int(rng.integers(len(plan.departments)))]
        elif split == "train":
            disease = seen[train_cursor % len(seen)]
            train_cursor += 1
            department = plan.disease_department[disease]
        else:
            disease = plan.diseases[dev_cursor % len(plan.diseases)]
            dev_cursor += 1
            department = plan.disease_department[disease]

        meds = plan.rule_medications(disease, sym_i, mod_i)
        family = int(rng.integers(3))
        pick = lambda: plan.fillers[int(rng.integers(len(plan.fillers)))]
        turns = _utterances(family, SYMPTOMS[sym_i], MODIFIERS[mod_i], meds, pick)
        dialogues.append(Dialogue(
            id=f"synth-{i:05d}",
            department=department,
            disease=disease,
            medications=meds,
            utterances=tuple(Utterance(speaker=s, text=t, index=j)
                             for j, (s, t) in enumerate(turns)),
            split=split,
        ))

    corpus = Corpus.from_dialogues(dialogues, medications=sorted(plan.medications),
                                   diseases=sorted(plan.diseases))
    kg = _build_kg(plan, config)
    ddi = _sample_ddi(plan, rng)
    return corpus, kg, ddi


def _build_kg(plan: SynthPlan, config: SynthConfig) -> KnowledgeGraph:
    """Diseases share department, first-line-drug, and symptom neighbors, so
    siblings inside a department have near-identical neighborhoods."""
    kg = KnowledgeGraph()
    dept_index = {dept: k for k, dept in enumerate(plan.departments)}
    for disease in plan.diseases:
        dept = plan.disease_department[disease]
        k = dept_index[dept]
        kg.add_triple(disease, "department_of", f"{dept} Department")
        kg.add_triple(disease, "first_line_drug", plan.class_meds[dept])
        for t in range(config.kg_fanout):
            kg.add_triple(disease, "common_symptom", SYMPTOMS[(2 * k + t) % len(SYMPTOMS)])
        kg.add_alias(f"acute {disease.lower()}", disease)
    return kg


def _sample_ddi(plan: SynthPlan, rng: np.random.Generator) -> DdiGraph:
    meds = sorted(plan.medications)
    all_pairs = [(meds[i], meds[j]) for i in range(len(meds)) for j in range(i + 1, len(meds))]
    if not all_pairs:
        return DdiGraph.from_pairs([])
    take = max(1, len(all_pairs) // 10)
    chosen = rng.choice(len(all_pairs), size=take, replace=False)
    return DdiGraph.from_pairs(all_pairs[int(c)] for c in sorted(chosen))
