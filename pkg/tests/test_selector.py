import math

import numpy as np
import pytest

from boter.data import Corpus, KnowledgeDocument, Sample
from boter.errors import ConfigError
from boter.learner import LinearScorer, TrainConfig, bce_loss
from boter.retrieval import RankedDocs
from boter.selector import (
    SELECTION_PROMPT,
    SelectorModel,
    order_by_score,
    score_document,
    select_documents,
    select_top_t,
    train_selector,
)

DIM = 1024


def _sample(sid="s1", question="which one", answers=("a",), **kw):
    return Sample(id=sid, question=question, answers=answers, **kw)


def _corpus(n=8):
    return Corpus([KnowledgeDocument(f"d{i}", f"document number {i} body") for i in range(n)])


def _retrieved(corpus, scores=None):
    ids = list(corpus.ids)
    if scores is None:
        scores = list(range(len(ids), 0, -1))
    return RankedDocs(entries=tuple((doc_id, float(s)) for doc_id, s in zip(ids, scores)))


def test_untrained_scores_half():
    model = SelectorModel.zeros(DIM)
    corpus = _corpus()
    for doc in corpus:
        assert score_document(model, _sample(), doc) == 0.5


def test_score_whitespace_invariant():
    model = SelectorModel.zeros(DIM)
    model.scorer.weights[:] = np.random.default_rng(0).normal(size=DIM)
    sample = _sample()
    one = score_document(model, sample, KnowledgeDocument("d", "a  red\tcar"))
    two = score_document(model, sample, KnowledgeDocument("d", "a red car"))
    assert one == two


def test_prompt_text_changes_features():
    rng = np.random.default_rng(1)
    scorer = LinearScorer(weights=rng.normal(size=DIM), bias=0.0)
    sample = _sample()
    doc = KnowledgeDocument("d", "body text")
    base = SelectorModel(scorer=scorer)
    other = SelectorModel(scorer=scorer, prompt_text="another prompt entirely")
    assert base.prompt_text == SELECTION_PROMPT
    assert score_document(base, sample, doc) != score_document(other, sample, doc)


def test_select_full_is_permutation():
    model = SelectorModel.zeros(DIM)
    corpus = _corpus(6)
    retrieved = _retrieved(corpus)
    got = select_top_t(model, _sample(), retrieved, 6, corpus)
    assert sorted(got.ids) == sorted(retrieved.ids)


def test_select_zero():
    model = SelectorModel.zeros(DIM)
    corpus = _corpus(4)
    assert select_top_t(model, _sample(), _retrieved(corpus), 0, corpus).ids == ()


def test_untrained_selection_equals_retrieval_order():
    # Cold start: uniform scores fall back to retrieval rank, list-identical.
    model = SelectorModel.zeros(DIM)
    corpus = _corpus(8)
    retrieved = _retrieved(corpus)
    for t in (1, 3, 5, 8):
        got = select_top_t(model, _sample(), retrieved, t, corpus)
        assert got.ids == retrieved.ids[:t]


def test_prefix_property_under_fixed_scores():
    rng = np.random.default_rng(2)
    model = SelectorModel(scorer=LinearScorer(weights=rng.normal(size=DIM), bias=0.0))
    corpus = _corpus(8)
    retrieved = _retrieved(corpus)
    sample = _sample()
    previous = ()
    for t in range(0, 9):
        ids = select_top_t(model, sample, retrieved, t, corpus).ids
        assert ids[: len(previous)] == previous
        previous = ids


def test_selection_is_subset_with_expected_size():
    model = SelectorModel.zeros(DIM)
    corpus = _corpus(5)
    retrieved = _retrieved(corpus)
    got = select_top_t(model, _sample(), retrieved, 9, corpus)
    assert len(got) == 5
    assert set(got.ids) <= set(retrieved.ids)


def test_order_by_score_rank_then_id_ties():
    entries = [("b", 0.5, 1), ("a", 0.5, 0), ("c", 0.9, 2), ("d", 0.5, 1)]
    ordered = order_by_score(entries)
    assert [doc_id for doc_id, _ in ordered] == ["c", "a", "b", "d"]


def test_order_by_score_scale_invariance():
    entries = [("a", 0.9, 0), ("b", 0.4, 1), ("c", 0.7, 2)]
    scaled = [(d, s * 0.5, r) for d, s, r in entries]
    assert [d for d, _ in order_by_score(entries)] == [d for d, _ in order_by_score(scaled)]


def test_negative_t_rejected():
    model = SelectorModel.zeros(DIM)
    corpus = _corpus(3)
    with pytest.raises(ConfigError):
        select_top_t(model, _sample(), _retrieved(corpus), -1, corpus)


class TestSelectDocuments:
    def test_dpr_order(self):
        corpus = _corpus(6)
        retrieved = _retrieved(corpus)
        got = select_documents("dpr_order", SelectorModel.zeros(DIM), _sample(),
                               retrieved, 3, corpus)
        assert got.entries == retrieved.entries[:3]

    def test_random_deterministic_subset(self):
        corpus = _corpus(10)
        retrieved = _retrieved(corpus)
        model = SelectorModel.zeros(DIM)
        one = select_documents("random", model, _sample(), retrieved, 4, corpus, rng_seed=3)
        two = select_documents("random", model, _sample(), retrieved, 4, corpus, rng_seed=3)
        other = select_documents("random", model, _sample(), retrieved, 4, corpus, rng_seed=4)
        assert one.entries == two.entries
        assert len(one) == 4 and set(one.ids) <= set(retrieved.ids)
        assert one.ids != other.ids or one.ids != retrieved.ids[:4]

    def test_random_varies_by_sample(self):
        corpus = _corpus(10)
        retrieved = _retrieved(corpus)
        model = SelectorModel.zeros(DIM)
        one = select_documents("random", model, _sample("s1"), retrieved, 4, corpus, rng_seed=3)
        two = select_documents("random", model, _sample("s2"), retrieved, 4, corpus, rng_seed=3)
        assert one.ids != two.ids

    def test_unknown_mode(self):
        corpus = _corpus(3)
        with pytest.raises(ConfigError, match="unknown selection mode"):
            select_documents("best", SelectorModel.zeros(DIM), _sample(),
                             _retrieved(corpus), 1, corpus)


class TestTrainSelector:
    def test_initial_loss_is_ln2_per_pair(self):
        # Untrained scorer gives probability 0.5, so the loss is ln 2 per
        # (sample, document) pair: k * ln 2 over a sample's k pairs.
        k = 7
        assert abs(sum(bce_loss(0.5, label) for label in [1, 0, 1, 0, 0, 0, 0][:k])
                   - k * math.log(2)) <= 1e-12

    def test_all_no_drifts_scores_down(self):
        corpus = _corpus(6)
        sample = _sample()
        model = SelectorModel.zeros(DIM)
        labeled = [(sample, doc, 0) for doc in corpus]
        cfg = TrainConfig(learning_rate=0.5, warmup_steps=0, epochs=4, rng_seed=0)
        trained, _ = train_selector(model, labeled, cfg)
        scores = [score_document(trained, sample, doc) for doc in corpus]
        assert all(s < 0.5 for s in scores)

    def test_single_positive_saturates(self):
        corpus = _corpus(1)
        sample = _sample()
        labeled = [(sample, corpus["d0"], 1)] * 50
        cfg = TrainConfig(learning_rate=1.0, warmup_steps=0, epochs=30, rng_seed=0)
        trained, _ = train_selector(SelectorModel.zeros(DIM), labeled, cfg)
        assert score_document(trained, sample, corpus["d0"]) > 0.99

    def test_label_validation(self):
        corpus = _corpus(1)
        with pytest.raises(ConfigError, match="label"):
            train_selector(SelectorModel.zeros(DIM), [(_sample(), corpus["d0"], 2)],
                           TrainConfig())

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            train_selector(SelectorModel.zeros(DIM), [], TrainConfig())

    def test_oracle_labels_separate_planted_from_distractors(self, mini_benchmark):
        train = mini_benchmark["train"]
        corpus = mini_benchmark["corpus"]
        oracle = mini_benchmark["oracle"]
        model = SelectorModel.zeros(4096)
        labeled = []
        for sample in train:
            planted = set(oracle[sample.id])
            start = min(int(p[1:]) for p in planted)
            block = [f"d{i:05d}" for i in range(start, start + 8)]
            for doc_id in block:
                labeled.append((sample, corpus[doc_id], 1 if doc_id in planted else 0))
        cfg = TrainConfig(learning_rate=0.5, warmup_steps=20, epochs=4, rng_seed=0)
        trained, _ = train_selector(model, labeled, cfg)
        planted_scores, distractor_scores = [], []
        for sample in mini_benchmark["test"]:
            planted = set(oracle[sample.id])
            start = min(int(p[1:]) for p in planted)
            for i in range(start, start + 8):
                doc_id = f"d{i:05d}"
                score = score_document(trained, sample, corpus[doc_id])
                (planted_scores if doc_id in planted else distractor_scores).append(score)
        assert np.mean(planted_scores) > np.mean(distractor_scores)
