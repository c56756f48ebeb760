"""Synthetic benchmark generator with known-useful ("planted") documents.

Samples are grouped into concepts.  A concept is a *pair* of topic tokens
(alpha, beta); each individual token is shared by many concepts with different
answers, so no single question token determines the answer and a linear model
cannot shortcut past the documents.  Each concept owns a small block of corpus
documents: planted documents that genuinely answer the concept's question,
"strong" distractors that share more query tokens than the planted ones (so
similarity ranks them higher), and "weak" distractors that share fewer.
Distractors carry an answer-vocabulary word that is misleading (drawn from the
sample's non-canonical human answers) at `distractor_noise_rate`, and an
unrelated answer word otherwise.  The rest of the corpus is filler.

Samples are assigned to concepts in contiguous blocks, so splitting the sample
list at a block boundary keeps train and test concepts (and their documents)
disjoint.
"""

import math
from dataclasses import dataclass

import numpy as np

from .data import Corpus, KnowledgeDocument, Sample
from .errors import DataFormatError
from .text import derive_seed

QUERY_FEATURE_DIM = 16

# Query features carry a weak, transferable hint of the answer (standing in
# for informative visual features) plus per-sample noise.
_ANSWER_SIGNAL = 0.1
_FEATURE_NOISE = 0.1


def _answer_direction(word: str) -> np.ndarray:
    rng = np.random.default_rng(derive_seed("query-feature-direction", word))
    vec = rng.normal(size=QUERY_FEATURE_DIM)
    return vec / np.linalg.norm(vec)

_SYLLABLES = tuple(c + v for c in "bcdfglmnprstvz" for v in "aeiou")


def answer_vocabulary(size: int) -> tuple[str, ...]:
    """Deterministic list of pronounceable answer words."""
    n = len(_SYLLABLES)
    if size > n * n:
        raise DataFormatError(f"answer_vocab_size {size} exceeds {n * n}")
    return tuple(_SYLLABLES[i // n] + _SYLLABLES[i % n] for i in range(size))


@dataclass(frozen=True)
class SyntheticSpec:
    rng_seed: int
    n_samples: int = 100
    corpus_size: int = 400
    planted_per_sample: int = 3
    distractor_noise_rate: float = 0.5
    answer_vocab_size: int = 40

    def __post_init__(self):
        if self.n_samples < 1:
            raise DataFormatError("n_samples must be >= 1")
        if self.planted_per_sample < 1:
            raise DataFormatError("planted_per_sample must be >= 1")
        if not 0.0 <= self.distractor_noise_rate <= 1.0:
            raise DataFormatError("distractor_noise_rate must be in [0, 1]")
        if self.answer_vocab_size < 4:
            raise DataFormatError("answer_vocab_size must be >= 4")
        if self.concepts() < 1:
            raise DataFormatError(
                f"corpus_size {self.corpus_size} too small for "
                f"{self.docs_per_concept()} documents per concept"
            )

    def distractors_per_concept(self) -> int:
        return 2 * self.planted_per_sample + 2

    def docs_per_concept(self) -> int:
        return self.planted_per_sample + self.distractors_per_concept()

    def concepts(self) -> int:
        # Concept blocks use at most 80% of the corpus; the rest is filler.
        budget = (self.corpus_size * 4 // 5) // self.docs_per_concept()
        limit = min(self.n_samples, budget)
        if limit < 1:
            return 0
        per_concept = math.ceil(self.n_samples / limit)
        return math.ceil(self.n_samples / per_concept)

    def samples_per_concept(self) -> int:
        return math.ceil(self.n_samples / self.concepts())


def generate_synthetic(spec: SyntheticSpec) -> tuple[list[Sample], Corpus, dict[str, tuple[str, ...]]]:
    """Build (samples, corpus, oracle_labels) deterministically from the spec.

    oracle_labels maps sample id to the ids of its planted documents.
    """
    rng = np.random.default_rng(spec.rng_seed)
    vocab = answer_vocabulary(spec.answer_vocab_size)
    n_concepts = spec.concepts()
    per_concept = spec.samples_per_concept()

    # Topic-token grid: concept c pairs alpha[c // width] with beta[c % width].
    width = math.ceil(math.sqrt(n_concepts))
    concepts = []
    for c in range(n_concepts):
        trio = rng.choice(len(vocab), size=3, replace=False)
        concepts.append(
            {
                "alpha": f"alpha{c // width:03d}",
                "beta": f"beta{c % width:03d}",
                "canonical": vocab[trio[0]],
                "others": (vocab[trio[1]], vocab[trio[2]]),
            }
        )

    docs: list[KnowledgeDocument] = []
    planted_ids: list[tuple[str, ...]] = []
    doc_counter = 0

    def next_id() -> str:
        nonlocal doc_counter
        doc_id = f"d{doc_counter:05d}"
        doc_counter += 1
        return doc_id

    # As many similarity-dominant distractors as planted documents, so the
    # retrieval-order top-5 mixes both and selection has room to matter.
    n_strong = spec.planted_per_sample
    for concept in concepts:
        alpha, beta = concept["alpha"], concept["beta"]
        ids = []
        for j in range(spec.planted_per_sample):
            doc_id = next_id()
            ids.append(doc_id)
            docs.append(
                KnowledgeDocument(
                    id=doc_id,
                    text=(
                        f"trusted entry about {alpha} {beta} verified proof states "
                        f"correct answer {concept['canonical']} certainly "
                        f"{concept['canonical']} reference item{j}"
                    ),
                )
            )
        planted_ids.append(tuple(ids))
        for j in range(spec.distractors_per_concept()):
            misleading = rng.random() < spec.distractor_noise_rate
            if misleading:
                word = concept["others"][j % 2]
            else:
                trio = {concept["canonical"], *concept["others"]}
                pool = [w for w in vocab if w not in trio]
                word = pool[int(rng.integers(len(pool)))]
            if j < n_strong:
                # Doubled alpha outranks the planted documents on similarity.
                text = (
                    f"note about {alpha} {beta} {alpha} discussion "
                    f"claims answer {word} take{j}"
                )
            else:
                text = f"aside regarding {alpha} commentary mentions {word} take{j}"
            docs.append(KnowledgeDocument(id=next_id(), text=text))

    while doc_counter < spec.corpus_size:
        junk = " ".join(f"misc{int(rng.integers(100000)):05d}" for _ in range(4))
        docs.append(KnowledgeDocument(id=next_id(), text=f"miscellaneous catalog {junk}"))

    samples: list[Sample] = []
    oracle: dict[str, tuple[str, ...]] = {}
    for idx in range(spec.n_samples):
        concept_idx = idx // per_concept
        concept = concepts[concept_idx]
        alpha, beta = concept["alpha"], concept["beta"]
        features = (_ANSWER_SIGNAL * _answer_direction(concept["canonical"])
                    + _FEATURE_NOISE * rng.normal(size=QUERY_FEATURE_DIM))
        answers = [concept["canonical"]] * 6 + [concept["others"][0]] * 2 + [concept["others"][1]] * 2
        order = rng.permutation(len(answers))
        sample_id = f"s{idx:05d}"
        samples.append(
            Sample(
                id=sample_id,
                question=f"which answer goes with {alpha} {beta}",
                caption=f"scene showing {alpha} material",
                object_labels=(alpha, beta),
                ocr_strings=(beta,),
                answers=tuple(answers[i] for i in order),
                query_features=tuple(float(v) for v in features),
            )
        )
        oracle[sample_id] = planted_ids[concept_idx]

    return samples, Corpus(docs), oracle


def split_dataset(samples: list[Sample], n_train: int) -> tuple[list[Sample], list[Sample]]:
    """Prefix split; with block concept assignment this keeps concepts disjoint
    whenever n_train is a multiple of the per-concept sample count."""
    if not 0 <= n_train <= len(samples):
        raise DataFormatError(f"n_train {n_train} out of range for {len(samples)} samples")
    return samples[:n_train], samples[n_train:]
