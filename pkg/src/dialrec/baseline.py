"""TF-IDF baseline: bag-of-words dialogue text, one logistic scorer per drug.

The dialogue is flattened to one document. tf is the raw token count and
idf = ln((N + 1) / (df + 1)) with document frequencies taken from the train
split only. Each medication gets an independent binary logistic classifier
thresholded at 0.5; labels that are constant on the train split fall back to
a constant predictor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.linear_model import LogisticRegression

from .corpus import Corpus, Dialogue
from .text import tokenize


@dataclass
class TfidfBaseline:
    vocabulary: dict[str, int]
    idf: np.ndarray
    medications: list[str]
    classifiers: list  # LogisticRegression or a constant probability float
    threshold: float = 0.5

    def features(self, dialogue: Dialogue) -> np.ndarray:
        x = np.zeros(len(self.vocabulary))
        for tok in tokenize(dialogue.full_text()):
            j = self.vocabulary.get(tok)
            if j is not None:
                x[j] += 1.0
        return x * self.idf

    def probabilities(self, dialogue: Dialogue) -> dict[str, float]:
        x = self.features(dialogue).reshape(1, -1)
        out = {}
        for med, clf in zip(self.medications, self.classifiers):
            if isinstance(clf, float):
                out[med] = clf
            else:
                out[med] = float(clf.predict_proba(x)[0, 1])
        return out

    def predict(self, dialogue: Dialogue) -> set[str]:
        return {m for m, p in self.probabilities(dialogue).items() if p > self.threshold}


def train_tfidf_baseline(corpus: Corpus, seed: int = 0) -> TfidfBaseline:
    train = corpus.split("train")
    if not train:
        raise ValueError("corpus has no train split")
    docs = [tokenize(d.full_text()) for d in train]
    df: dict[str, int] = {}
    for doc in docs:
        for tok in set(doc):
            df[tok] = df.get(tok, 0) + 1
    vocabulary = {tok: j for j, tok in enumerate(sorted(df))}
    n = len(docs)
    idf = np.array([math.log((n + 1) / (df[tok] + 1)) for tok in sorted(df)])

    features = np.zeros((n, len(vocabulary)))
    for i, doc in enumerate(docs):
        for tok in doc:
            features[i, vocabulary[tok]] += 1.0
    features *= idf

    classifiers = []
    for med in corpus.medications:
        y = np.array([1 if med in d.medications else 0 for d in train])
        if y.min() == y.max():
            classifiers.append(float(y[0]))
            continue
        clf = LogisticRegression(max_iter=2000, random_state=seed)
        clf.fit(features, y)
        classifiers.append(clf)
    return TfidfBaseline(vocabulary=vocabulary, idf=idf,
                         medications=list(corpus.medications), classifiers=classifiers)


def predict_split(baseline: TfidfBaseline, dialogues: Sequence[Dialogue]) -> dict[str, set[str]]:
    return {d.id: baseline.predict(d) for d in dialogues}
