"""Bootstrapped document selection and question answering.

Retrieve candidate documents for a question, pick the useful ones with a
trainable selector, answer per document with majority voting, pseudo-label
documents from answer outcomes, and alternate training of selector and
answerer in a cycle.
"""

__version__ = "0.1.0"

from .answerer import AnswererModel, VoteResult, answer_concatenated, answer_with_document, majority_vote
from .bootstrap import (
    CycleConfig,
    CycleState,
    PseudoLabel,
    pseudo_label,
    run_cycles,
    run_independent,
)
from .data import (
    AnswerSet,
    Corpus,
    KnowledgeDocument,
    Sample,
    canonical_answer,
    contains_any_answer,
    ingest_corpus,
    ingest_dataset,
)
from .evaluation import AblationGrid, EvalReport, evaluate, run_ablation, selection_quality, vqa_accuracy
from .learner import ChannelFlags, FeatureVector, LinearScorer, SoftmaxScorer, TrainConfig, featurize, sgd_fit
from .retrieval import FlatIndex, RankedDocs, build_query, encode, retrieve_top_k
from .selector import SelectorModel, score_document, select_top_t, train_selector
from .synthetic import SyntheticSpec, generate_synthetic, split_dataset
from .text import normalize_text
