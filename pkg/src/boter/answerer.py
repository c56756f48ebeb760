"""Answer prediction over a closed candidate vocabulary, per document or
over a concatenation of documents, with majority voting across documents."""

from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .data import KnowledgeDocument, Sample
from .errors import ConfigError, DataFormatError
from .learner import (
    ChannelFlags,
    ClassExtras,
    FeatureVector,
    SoftmaxScorer,
    TrainConfig,
    class_scores,
    extra_features,
    featurize,
    sgd_fit,
)
from .text import normalize_text

ANSWER_TEMPLATE = "Question: {} Knowledge: {} Answer: "

# The answerer conditions on the document, the dense query features, and the
# templated candidate; raw question/overlap/context token features stay off by
# default because a linear head would use them to memorize training answers
# instead of reading the document.
ANSWERER_CHANNELS = ChannelFlags(question=False, overlap=False, context=False)


@dataclass
class AnswererModel:
    """Candidate vocabulary plus one scoring head per candidate.

    The candidate string is hashed together with the fixed template into the
    extra feature channel, so each class sees its own candidate-conditioned
    input on top of the shared document features.
    """

    vocab: tuple[str, ...]
    scorer: SoftmaxScorer
    channels: ChannelFlags = ANSWERER_CHANNELS
    template_text: str = ANSWER_TEMPLATE
    _extras: ClassExtras | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.vocab:
            raise DataFormatError("candidate vocabulary must be nonempty")
        if list(self.vocab) != sorted(set(self.vocab)):
            raise DataFormatError("candidate vocabulary must be sorted and deduplicated")
        if self.scorer.n_classes != len(self.vocab):
            raise DataFormatError("scorer heads must match vocabulary size")

    @classmethod
    def build(cls, training_answers: Iterable[str], dim: int,
              channels: ChannelFlags = ANSWERER_CHANNELS,
              template_text: str = ANSWER_TEMPLATE) -> "AnswererModel":
        vocab = tuple(sorted({normalize_text(a) for a in training_answers} - {""}))
        if not vocab:
            raise DataFormatError("no usable training answers")
        return cls(vocab=vocab, scorer=SoftmaxScorer.zeros(len(vocab), dim), channels=channels,
                   template_text=template_text)

    @property
    def dim(self) -> int:
        return self.scorer.dim

    def copy(self) -> "AnswererModel":
        return replace(self, scorer=self.scorer.copy())

    def class_extras(self) -> ClassExtras:
        if self._extras is None:
            vectors = [
                extra_features(f"{self.template_text} {cand}", self.dim, self.channels.extra)
                for cand in self.vocab
            ]
            self._extras = ClassExtras(vectors, self.dim)
        return self._extras


def _shared_features(model: AnswererModel, sample: Sample, doc_text: str) -> FeatureVector:
    return featurize(sample, doc_text, None, model.channels, model.dim)


def _predict(model: AnswererModel, shared: FeatureVector) -> str:
    scores = class_scores(model.scorer, shared, extras=model.class_extras())
    # np.argmax takes the first maximum; the vocabulary is sorted, so ties
    # resolve to the lexicographically smallest candidate.
    return model.vocab[int(np.argmax(scores))]


def answer_with_document(model: AnswererModel, sample: Sample,
                         doc: KnowledgeDocument) -> str:
    """Best candidate answer for the question given one document."""
    return _predict(model, _shared_features(model, sample, doc.text))


def answer_concatenated(model: AnswererModel, sample: Sample,
                        docs: Sequence[KnowledgeDocument]) -> str:
    """Single prediction over the documents joined in selection order."""
    if not docs:
        raise ValueError("no documents to answer over")
    joined = " ".join(d.text for d in docs)
    return _predict(model, _shared_features(model, sample, joined))


@dataclass(frozen=True)
class VoteResult:
    final_answer: str
    per_doc_answers: tuple[tuple[str, str, float], ...]  # (doc_id, answer, selector score)
    tally: dict[str, int]


def majority_vote(per_doc: Sequence[tuple[str, str, float]]) -> VoteResult:
    """Most frequent answer; ties favor the larger supporting selector-score
    sum, then the lexicographically smallest answer."""
    if not per_doc:
        raise ValueError("no documents to vote over")
    tally = Counter(answer for _, answer, _ in per_doc)
    support: dict[str, float] = {}
    for _, answer, score in per_doc:
        support[answer] = support.get(answer, 0.0) + score
    final = min(tally, key=lambda a: (-tally[a], -support[a], a))
    return VoteResult(final_answer=final, per_doc_answers=tuple(per_doc), tally=dict(tally))


def train_answerer(model: AnswererModel,
                   triples: list[tuple[Sample, KnowledgeDocument, str]],
                   config: TrainConfig,
                   schedule_span: tuple[int, int] | None = None) -> tuple[AnswererModel, list[float]]:
    """Cross-entropy fit on (sample, document, target answer) triples."""
    if not triples:
        raise ValueError("empty training set")
    index = {word: i for i, word in enumerate(model.vocab)}
    examples = []
    for sample, doc, target in triples:
        normalized = normalize_text(target)
        if normalized not in index:
            raise ConfigError(f"target answer {target!r} not in candidate vocabulary")
        examples.append((_shared_features(model, sample, doc.text), index[normalized]))
    scorer, losses = sgd_fit(model.scorer, examples, config, class_extras=model.class_extras(),
                             schedule_span=schedule_span)
    return replace(model, scorer=scorer), losses
