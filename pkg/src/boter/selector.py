"""Scores retrieved documents for usefulness and keeps the top ones.

A freshly initialized selector scores every document 0.5, and score ties fall
back to the original retrieval rank, so an untrained selector reproduces the
retrieval ordering exactly.
"""

from dataclasses import dataclass, replace

import numpy as np

from .data import Corpus, KnowledgeDocument, Sample
from .errors import ConfigError
from .learner import (
    ChannelFlags,
    FeatureVector,
    LinearScorer,
    TrainConfig,
    extra_features,
    featurize,
    predict_prob,
    sgd_fit,
)
from .retrieval import RankedDocs
from .text import derive_seed

SELECTION_PROMPT = (
    "Does the retrieved knowledge document provide the key information "
    "to help answer the question?"
)


@dataclass
class SelectorModel:
    scorer: LinearScorer
    channels: ChannelFlags = ChannelFlags()
    prompt_text: str = SELECTION_PROMPT

    @classmethod
    def zeros(cls, dim: int, channels: ChannelFlags = ChannelFlags(),
              prompt_text: str = SELECTION_PROMPT) -> "SelectorModel":
        return cls(scorer=LinearScorer.zeros(dim), channels=channels, prompt_text=prompt_text)

    @property
    def dim(self) -> int:
        return self.scorer.dim

    def copy(self) -> "SelectorModel":
        return replace(self, scorer=self.scorer.copy())


def _features(model: SelectorModel, sample: Sample, doc_text: str) -> FeatureVector:
    base = featurize(sample, doc_text, None, model.channels, model.dim)
    prompt = extra_features(model.prompt_text, model.dim, model.channels.extra)
    return FeatureVector.combine(base, prompt)


def score_document(model: SelectorModel, sample: Sample, doc: KnowledgeDocument) -> float:
    """Probability in (0, 1) that the document helps answer the question."""
    return predict_prob(model.scorer, _features(model, sample, doc.text))


def order_by_score(entries: list[tuple[str, float, int]]) -> list[tuple[str, float]]:
    """Sort (doc_id, score, retrieval_rank): score desc, then rank asc, then id."""
    ordered = sorted(entries, key=lambda e: (-e[1], e[2], e[0]))
    return [(doc_id, score) for doc_id, score, _ in ordered]


def select_top_t(model: SelectorModel, sample: Sample, retrieved: RankedDocs,
                 t: int, corpus: Corpus) -> RankedDocs:
    """Top-t retrieved documents by selector score, carrying the scores."""
    if t < 0:
        raise ConfigError("t must be >= 0")
    scored = [
        (doc_id, score_document(model, sample, corpus[doc_id]), rank)
        for rank, (doc_id, _) in enumerate(retrieved.entries)
    ]
    ordered = order_by_score(scored)
    return RankedDocs(entries=tuple(ordered[: min(t, len(ordered))]))


def select_documents(mode: str, model: SelectorModel, sample: Sample,
                     retrieved: RankedDocs, k: int, corpus: Corpus,
                     rng_seed: int = 0) -> RankedDocs:
    """Dispatch between selector scoring, retrieval order, and a seeded random pick."""
    if mode == "selector":
        return select_top_t(model, sample, retrieved, k, corpus)
    if mode == "dpr_order":
        return retrieved.top(k)
    if mode == "random":
        rng = np.random.default_rng(derive_seed(rng_seed, "random-select", sample.id))
        count = min(max(k, 0), len(retrieved))
        picks = rng.choice(len(retrieved), size=count, replace=False)
        return RankedDocs(entries=tuple((retrieved.entries[i][0], 0.0) for i in picks))
    raise ConfigError(f"unknown selection mode {mode!r}")


def train_selector(model: SelectorModel,
                   labeled: list[tuple[Sample, KnowledgeDocument, int]],
                   config: TrainConfig,
                   positive_weight: float = 1.0,
                   schedule_span: tuple[int, int] | None = None) -> tuple[SelectorModel, list[float]]:
    """Fit the scorer on (sample, document, 0/1 label) pairs."""
    if not labeled:
        raise ValueError("empty training set")
    examples = []
    for sample, doc, label in labeled:
        if label not in (0, 1):
            raise ConfigError(f"selector label must be 0 or 1, got {label!r}")
        weight = positive_weight if label == 1 else 1.0
        examples.append((_features(model, sample, doc.text), label, weight))
    scorer, losses = sgd_fit(model.scorer, examples, config, schedule_span=schedule_span)
    return replace(model, scorer=scorer), losses
