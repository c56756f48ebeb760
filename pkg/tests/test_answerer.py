import math

import numpy as np
import pytest

from boter.answerer import (
    ANSWER_TEMPLATE,
    AnswererModel,
    answer_concatenated,
    answer_with_document,
    majority_vote,
    train_answerer,
)
from boter.data import KnowledgeDocument, Sample
from boter.errors import ConfigError, DataFormatError
from boter.learner import SoftmaxScorer, TrainConfig, grad_ce
from boter.learner import FeatureVector

DIM = 1024


def _sample(sid="s1", question="what is it", answers=("cat",)):
    return Sample(id=sid, question=question, answers=answers)


def _model(vocab_words=("cat", "dog", "owl"), dim=DIM):
    return AnswererModel.build(vocab_words, dim)


class TestBuild:
    def test_vocab_sorted_dedup_normalized(self):
        model = AnswererModel.build(["Dog!", "cat", "dog", "CAT"], DIM)
        assert model.vocab == ("cat", "dog")

    def test_vocab_input_order_invariant(self):
        one = AnswererModel.build(["b", "a", "c"], DIM)
        two = AnswererModel.build(["c", "b", "a"], DIM)
        assert one.vocab == two.vocab

    def test_empty_vocab_rejected(self):
        with pytest.raises(DataFormatError):
            AnswererModel.build(["!!!"], DIM)

    def test_template_default(self):
        assert _model().template_text == ANSWER_TEMPLATE

    def test_unsorted_vocab_rejected(self):
        with pytest.raises(DataFormatError):
            AnswererModel(vocab=("b", "a"), scorer=SoftmaxScorer.zeros(2, DIM))

    def test_head_count_must_match(self):
        with pytest.raises(DataFormatError):
            AnswererModel(vocab=("a", "b"), scorer=SoftmaxScorer.zeros(3, DIM))


class TestPredict:
    def test_untrained_predicts_lexicographically_smallest(self):
        model = _model(("zebra", "owl", "ant"))
        got = answer_with_document(model, _sample(), KnowledgeDocument("d", "any text"))
        assert got == "ant" == model.vocab[0]

    def test_closed_vocabulary(self):
        model = _model()
        rng = np.random.default_rng(0)
        model.scorer.weights[:] = rng.normal(size=model.scorer.weights.shape)
        for i in range(20):
            doc = KnowledgeDocument("d", f"word{i} filler stuff {i}")
            assert answer_with_document(model, _sample(), doc) in model.vocab

    def test_doc_signal_drives_prediction(self):
        # A class whose weights favor its own word in the doc channel wins on
        # documents containing that word.
        from boter.learner import featurize

        model = _model(("cat", "dog"))
        for ci, word in enumerate(model.vocab):
            fv = featurize(_sample(), word, None, model.channels, DIM)
            model.scorer.weights[ci, fv.indices] = 5.0 * np.sign(fv.values)
        assert answer_with_document(model, _sample(), KnowledgeDocument("d", "a dog here")) == "dog"
        assert answer_with_document(model, _sample(), KnowledgeDocument("d", "the cat sat")) == "cat"


class TestMajorityVote:
    def test_strict_majority(self):
        result = majority_vote([("d1", "a", 0.5), ("d2", "a", 0.5), ("d3", "b", 0.9)])
        assert result.final_answer == "a"
        assert result.tally == {"a": 2, "b": 1}

    def test_tie_breaks_by_selector_score_mass(self):
        # Enumeration oracle: counts tie at 1-1, support mass decides.
        result = majority_vote([("d1", "a", 0.9), ("d2", "b", 0.4)])
        assert result.final_answer == "a"
        flipped = majority_vote([("d1", "a", 0.4), ("d2", "b", 0.9)])
        assert flipped.final_answer == "b"

    def test_tie_full_falls_back_lexicographic(self):
        result = majority_vote([("d1", "b", 0.5), ("d2", "a", 0.5)])
        assert result.final_answer == "a"

    def test_single_entry(self):
        assert majority_vote([("d1", "only", 0.1)]).final_answer == "only"

    def test_identical_answers_any_scores(self):
        result = majority_vote([("d1", "x", 0.0), ("d2", "x", 0.9), ("d3", "x", 0.2)])
        assert result.final_answer == "x"

    def test_tally_conservation(self):
        per_doc = [("d1", "a", 0.1), ("d2", "b", 0.2), ("d3", "a", 0.3), ("d4", "c", 0.4)]
        result = majority_vote(per_doc)
        assert sum(result.tally.values()) == len(per_doc)
        assert result.per_doc_answers == tuple(per_doc)

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            majority_vote([])


class TestConcatenated:
    def test_single_doc_equals_per_doc_answer(self):
        model = _model()
        rng = np.random.default_rng(1)
        model.scorer.weights[:] = rng.normal(size=model.scorer.weights.shape)
        doc = KnowledgeDocument("d", "a dog appeared")
        sample = _sample()
        assert answer_concatenated(model, sample, [doc]) == \
            answer_with_document(model, sample, doc)

    def test_unigram_bag_makes_order_immaterial(self):
        # Document features are unigram counts, so concatenation order cannot
        # change the prediction; only membership does.
        model = _model()
        rng = np.random.default_rng(2)
        model.scorer.weights[:] = rng.normal(size=model.scorer.weights.shape)
        sample = _sample()
        d1 = KnowledgeDocument("d1", "small cat")
        d2 = KnowledgeDocument("d2", "large dog")
        assert answer_concatenated(model, sample, [d1, d2]) == \
            answer_concatenated(model, sample, [d2, d1])

    def test_membership_changes_prediction(self):
        model = _model(("cat", "dog"))
        from boter.learner import featurize

        for ci, word in enumerate(model.vocab):
            fv = featurize(_sample(), word, None, model.channels, DIM)
            model.scorer.weights[ci, fv.indices] = 5.0 * np.sign(fv.values)
        sample = _sample()
        assert answer_concatenated(model, sample, [KnowledgeDocument("x", "dog dog")]) == "dog"
        assert answer_concatenated(
            model, sample,
            [KnowledgeDocument("x", "dog dog"), KnowledgeDocument("y", "cat cat cat")],
        ) == "cat"

    def test_blank_documents_behave_like_no_knowledge(self):
        model = _model()
        rng = np.random.default_rng(3)
        model.scorer.weights[:] = rng.normal(size=model.scorer.weights.shape)
        sample = _sample()
        blanks = [KnowledgeDocument("d1", " . "), KnowledgeDocument("d2", "??")]
        no_knowledge = answer_with_document(model, sample, KnowledgeDocument("d0", "!"))
        assert answer_concatenated(model, sample, blanks) == no_knowledge

    def test_empty_docs_error(self):
        with pytest.raises(ValueError):
            answer_concatenated(_model(), _sample(), [])


class TestTrain:
    def test_two_class_separable(self):
        model = _model(("cat", "dog"))
        sample = _sample()
        cat_doc = KnowledgeDocument("d1", "whiskers cat purr")
        dog_doc = KnowledgeDocument("d2", "bark dog tail")
        triples = [(sample, cat_doc, "cat"), (sample, dog_doc, "dog")] * 10
        cfg = TrainConfig(learning_rate=1.0, warmup_steps=5, epochs=10, batch_size=4, rng_seed=0)
        trained, losses = train_answerer(model, triples, cfg)
        assert answer_with_document(trained, sample, cat_doc) == "cat"
        assert answer_with_document(trained, sample, dog_doc) == "dog"
        assert losses[-1] < losses[0]

    def test_initial_loss_is_log_vocab(self):
        model = _model(("a", "b", "c", "d", "e"))
        x = FeatureVector.empty(DIM)
        _, _, loss = grad_ce(model.scorer, x, 0, extras=model.class_extras())
        # Zero weights leave the per-class extras inert, so scores stay uniform.
        assert abs(loss - math.log(5)) <= 1e-12

    def test_zero_epochs_keeps_model(self):
        model = _model()
        sample = _sample()
        doc = KnowledgeDocument("d", "cat")
        cfg = TrainConfig(learning_rate=1.0, epochs=0, rng_seed=0)
        trained, losses = train_answerer(model, [(sample, doc, "cat")], cfg)
        assert np.array_equal(trained.scorer.weights, model.scorer.weights)
        assert losses == []

    def test_target_outside_vocab_errors(self):
        model = _model(("cat", "dog"))
        with pytest.raises(ConfigError, match="ferret"):
            train_answerer(model, [(_sample(), KnowledgeDocument("d", "x"), "ferret")],
                           TrainConfig())

    def test_empty_triples_error(self):
        with pytest.raises(ValueError):
            train_answerer(_model(), [], TrainConfig())

    def test_template_conditions_features(self):
        custom = AnswererModel.build(["cat", "dog"], DIM, template_text="different template here")
        default = AnswererModel.build(["cat", "dog"], DIM)
        rng = np.random.default_rng(4)
        weights = rng.normal(size=custom.scorer.weights.shape)
        custom.scorer.weights[:] = weights
        default.scorer.weights[:] = weights
        doc = KnowledgeDocument("d", "ambiguous text")
        sample = _sample()
        s_custom = custom.class_extras().scores(custom.scorer.weights)
        s_default = default.class_extras().scores(default.scorer.weights)
        assert not np.allclose(s_custom, s_default)
