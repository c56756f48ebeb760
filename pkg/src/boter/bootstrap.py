"""Pseudo-labeling and the alternating two-stage training loop.

Stage 1 selects top-t documents per sample and fits the answerer toward each
sample's canonical answer, one training triple per selected document.  Stage 2
answers with every retrieved candidate, labels a document "yes" exactly when
the prediction matches the canonical answer and the document contains one of
the human answers, then fits the selector on those labels.  Stages alternate
at dataset granularity; model parameters continue across cycles.
"""

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .answerer import ANSWERER_CHANNELS, AnswererModel, answer_with_document, train_answerer
from .data import Corpus, Sample, canonical_answer, contains_any_answer
from .errors import ConfigError
from .evaluation import config_fingerprint, evaluate_detailed, selection_quality
from .learner import ChannelFlags, TrainConfig, save_checkpoint
from .learner import DEFAULT_FEATURE_DIM
from .retrieval import DEFAULT_EMBEDDING_DIM, FlatIndex, RankedDocs, build_query, encode, retrieve_top_k
from .selector import SelectorModel, select_documents, train_selector

# Query-features on and context off is the shipped default configuration.
DEFAULT_CHANNEL_TOGGLES = ChannelFlags(context=False)

SELECTION_MODES = ("selector", "dpr_order", "random")
ANSWER_MODES = ("voting", "concatenating")
LABELING_MODES = ("predictions_and_weak", "predictions_only")


@dataclass(frozen=True)
class CycleConfig:
    k_candidate: int = 30
    k_train: int = 5
    k_test: int = 5
    n_cycles: int = 3
    selection_mode: str = "selector"
    answer_mode: str = "voting"
    labeling_mode: str = "predictions_and_weak"
    selector_train: TrainConfig = field(default_factory=TrainConfig)
    answerer_train: TrainConfig = field(default_factory=TrainConfig)
    selector_positive_weight: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.k_candidate < 1:
            raise ConfigError("k_candidate must be >= 1")
        if not 0 <= self.k_train <= self.k_candidate:
            raise ConfigError("k_train must satisfy 0 <= k_train <= k_candidate")
        if not 0 <= self.k_test <= self.k_candidate:
            raise ConfigError("k_test must satisfy 0 <= k_test <= k_candidate")
        if self.n_cycles < 0:
            raise ConfigError("n_cycles must be >= 0")
        if self.selection_mode not in SELECTION_MODES:
            raise ConfigError(f"selection_mode must be one of {SELECTION_MODES}")
        if self.answer_mode not in ANSWER_MODES:
            raise ConfigError(f"answer_mode must be one of {ANSWER_MODES}")
        if self.labeling_mode not in LABELING_MODES:
            raise ConfigError(f"labeling_mode must be one of {LABELING_MODES}")
        if self.selector_positive_weight <= 0:
            raise ConfigError("selector_positive_weight must be > 0")

    def fingerprint(self) -> str:
        return config_fingerprint(asdict(self))


REASON_CORRECT_AND_CONTAINS = "correct_and_contains"
REASON_WRONG_ANSWER = "wrong_answer"
REASON_NO_CONTAINMENT = "no_containment"
REASON_BOTH_FAILED = "both_failed"


@dataclass(frozen=True)
class PseudoLabel:
    sample_id: str
    doc_id: str
    label: str  # "yes" | "no"
    reason: str


def pseudo_label(answerer: AnswererModel, sample: Sample, retrieved: RankedDocs,
                 corpus: Corpus, mode: str = "predictions_and_weak") -> list[PseudoLabel]:
    """Label each retrieved document from the answerer's prediction outcome.

    Default mode requires both a correct prediction and answer containment;
    "predictions_only" drops the containment requirement.  The recorded reason
    always reflects the full 2x2 outcome.
    """
    if mode not in LABELING_MODES:
        raise ConfigError(f"labeling mode must be one of {LABELING_MODES}")
    answers = sample.answer_set()
    target = answers.canonical
    labels = []
    for doc_id, _ in retrieved.entries:
        doc = corpus[doc_id]
        correct = answer_with_document(answerer, sample, doc) == target
        contains = contains_any_answer(doc.text, answers)
        if correct and contains:
            reason = REASON_CORRECT_AND_CONTAINS
        elif contains:
            reason = REASON_WRONG_ANSWER
        elif correct:
            reason = REASON_NO_CONTAINMENT
        else:
            reason = REASON_BOTH_FAILED
        positive = correct and contains if mode == "predictions_and_weak" else correct
        labels.append(PseudoLabel(sample_id=sample.id, doc_id=doc_id,
                                  label="yes" if positive else "no", reason=reason))
    return labels


@dataclass
class CycleState:
    cycle_index: int
    selector: SelectorModel
    answerer: AnswererModel
    pseudo_labels: tuple[PseudoLabel, ...] = ()
    metrics: dict = field(default_factory=dict)


@dataclass
class CycleContext:
    """Shared, read-only state for one training run."""

    train: list[Sample]
    test: list[Sample]
    corpus: Corpus
    config: CycleConfig
    selector_channels: ChannelFlags
    answerer_channels: ChannelFlags
    feature_dim: int
    retrieved_train: dict[str, RankedDocs]
    retrieved_test: dict[str, RankedDocs]
    canonical: dict[str, str]
    oracle_labels: dict[str, tuple[str, ...]] | None = None
    # Planned training passes per module; each pass occupies one segment of a
    # single shared warmup+cosine schedule.
    answerer_passes: int = 1
    selector_passes: int = 1


def _module_channels(toggles: ChannelFlags) -> tuple[ChannelFlags, ChannelFlags]:
    """Selector sees every channel; the answerer's question/overlap stay off.

    The query-features and context toggles apply to both modules.
    """
    selector = ChannelFlags(context=toggles.context, query_features=toggles.query_features)
    answerer = replace(ANSWERER_CHANNELS, context=toggles.context,
                       query_features=toggles.query_features)
    return selector, answerer


def build_context(train: list[Sample], test: list[Sample], corpus: Corpus,
                  config: CycleConfig, *, channels: ChannelFlags = DEFAULT_CHANNEL_TOGGLES,
                  feature_dim: int = DEFAULT_FEATURE_DIM,
                  encoder_dim: int = DEFAULT_EMBEDDING_DIM,
                  index: FlatIndex | None = None,
                  oracle_labels: dict[str, tuple[str, ...]] | None = None) -> CycleContext:
    """Index the corpus, retrieve candidates for every sample, cache answers."""
    if not train:
        raise ConfigError("training split must be nonempty")
    if index is None:
        index = FlatIndex.build(corpus, encoder_dim)
    dim = index.dimension
    selector_channels, answerer_channels = _module_channels(channels)

    def retrieve_all(samples):
        return {
            s.id: retrieve_top_k(index, encode(build_query(s), dim), config.k_candidate)
            for s in samples
        }

    return CycleContext(
        train=list(train),
        test=list(test),
        corpus=corpus,
        config=config,
        selector_channels=selector_channels,
        answerer_channels=answerer_channels,
        feature_dim=feature_dim,
        retrieved_train=retrieve_all(train),
        retrieved_test=retrieve_all(test),
        canonical={s.id: canonical_answer(s.answers) for s in [*train, *test]},
        oracle_labels=oracle_labels,
    )


def initial_state(context: CycleContext) -> CycleState:
    selector = SelectorModel.zeros(context.feature_dim, channels=context.selector_channels)
    answerer = AnswererModel.build(
        (context.canonical[s.id] for s in context.train),
        context.feature_dim,
        channels=context.answerer_channels,
    )
    return CycleState(cycle_index=0, selector=selector, answerer=answerer)


def _pass_span(trace: list, phase: str, n_examples: int, config: TrainConfig,
               n_passes: int) -> tuple[int, int]:
    steps = config.epochs * math.ceil(n_examples / config.batch_size)
    done = sum(1 for entry in trace if entry["phase"] == phase)
    return done * steps, max(n_passes, done + 1) * steps


def run_stage1(state: CycleState, context: CycleContext,
               selection_mode: str | None = None) -> CycleState:
    """Select top-k_train documents per sample and fit the answerer."""
    config = context.config
    mode = selection_mode or config.selection_mode
    triples = []
    for sample in context.train:
        selected = select_documents(
            mode, state.selector, sample, context.retrieved_train[sample.id],
            config.k_train, context.corpus, config.rng_seed,
        )
        target = context.canonical[sample.id]
        triples.extend((sample, context.corpus[doc_id], target) for doc_id, _ in selected.entries)
    span = _pass_span(state.metrics.get("trace", []), "train_answerer",
                      len(triples), config.answerer_train, context.answerer_passes)
    answerer, losses = train_answerer(state.answerer, triples, config.answerer_train,
                                      schedule_span=span)
    new_metrics = dict(state.metrics)
    new_metrics["trace"] = list(new_metrics.get("trace", [])) + [
        {"phase": "train_answerer", "selection": mode, "examples": len(triples),
         "losses": losses}
    ]
    return replace(state, answerer=answerer, metrics=new_metrics)


def run_stage2(state: CycleState, context: CycleContext) -> CycleState:
    """Pseudo-label every retrieved candidate and fit the selector."""
    config = context.config
    labels: list[PseudoLabel] = []
    pairs = []
    for sample in context.train:
        sample_labels = pseudo_label(
            state.answerer, sample, context.retrieved_train[sample.id],
            context.corpus, config.labeling_mode,
        )
        labels.extend(sample_labels)
        pairs.extend(
            (sample, context.corpus[lab.doc_id], 1 if lab.label == "yes" else 0)
            for lab in sample_labels
        )
    span = _pass_span(state.metrics.get("trace", []), "train_selector",
                      len(pairs), config.selector_train, context.selector_passes)
    selector, losses = train_selector(
        state.selector, pairs, config.selector_train, config.selector_positive_weight,
        schedule_span=span,
    )
    positive_rate = sum(1 for lab in labels if lab.label == "yes") / len(labels)
    new_metrics = dict(state.metrics)
    new_metrics["trace"] = list(new_metrics.get("trace", [])) + [
        {"phase": "train_selector", "examples": len(pairs),
         "positive_rate": positive_rate, "losses": losses}
    ]
    new_metrics["label_positive_rate"] = positive_rate
    return replace(state, selector=selector, pseudo_labels=tuple(labels), metrics=new_metrics)


def _evaluate_state(state: CycleState, context: CycleContext, mode_tag: str) -> CycleState:
    config = context.config
    report, selected_map, details = evaluate_detailed(
        context.test, context.retrieved_test, context.corpus,
        state.selector, state.answerer,
        k_test=config.k_test, selection_mode=config.selection_mode,
        answer_mode=config.answer_mode, rng_seed=config.rng_seed,
        fingerprint=config.fingerprint(),
    )
    precision = recall = None
    if context.oracle_labels is not None and context.test:
        precision, recall = selection_quality(selected_map, context.oracle_labels)
    metrics = dict(state.metrics)
    metrics.update(
        {
            "cycle": state.cycle_index,
            "mode": mode_tag,
            "selection_mode": config.selection_mode,
            "answer_mode": config.answer_mode,
            "labeling_mode": config.labeling_mode,
            "accuracy": report.mean_accuracy,
            "precision_at_t": precision,
            "recall_at_t": recall,
            "label_positive_rate": metrics.get("label_positive_rate"),
            "k_candidate": config.k_candidate,
            "k_train": config.k_train,
            "k_test": config.k_test,
            "n_train": len(context.train),
            "n_test": len(context.test),
            "parameters": "continued",
            "config_fingerprint": config.fingerprint(),
        }
    )
    new_state = replace(state, metrics=metrics)
    new_state.metrics["_report"] = report
    new_state.metrics["_selected"] = selected_map
    new_state.metrics["_details"] = details
    return new_state


def _strip_private(metrics: dict) -> dict:
    return {k: v for k, v in metrics.items() if not k.startswith("_")}


def _write_cycle_outputs(state: CycleState, out_dir: Path) -> None:
    cycle_dir = out_dir / f"cycle_{state.cycle_index}"
    cycle_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(cycle_dir / "selector.bin", state.selector.scorer)
    save_checkpoint(cycle_dir / "answerer.bin", state.answerer.scorer, state.answerer.vocab)
    with (cycle_dir / "labels.jsonl").open("w", encoding="utf-8") as handle:
        for lab in state.pseudo_labels:
            handle.write(json.dumps(asdict(lab), sort_keys=True) + "\n")
    with (cycle_dir / "metrics.json").open("w", encoding="utf-8") as handle:
        json.dump(_strip_private(state.metrics), handle, sort_keys=True, indent=2)
        handle.write("\n")
    with (cycle_dir / "losses.jsonl").open("w", encoding="utf-8") as handle:
        for entry in state.metrics.get("trace", []):
            for epoch, loss in enumerate(entry.get("losses") or []):
                handle.write(json.dumps(
                    {"phase": entry["phase"], "epoch": epoch, "loss": loss},
                    sort_keys=True) + "\n")
    selected_map = state.metrics.get("_selected", {})
    with (cycle_dir / "selection.jsonl").open("w", encoding="utf-8") as handle:
        for sample_id in sorted(selected_map):
            ranked = selected_map[sample_id]
            handle.write(json.dumps(
                {"sample_id": sample_id,
                 "doc_ids": list(ranked.ids),
                 "scores": [score for _, score in ranked.entries]},
                sort_keys=True) + "\n")
    with (cycle_dir / "predictions.jsonl").open("w", encoding="utf-8") as handle:
        for detail in state.metrics.get("_details", []):
            handle.write(json.dumps(detail, sort_keys=True) + "\n")


def run_cycles(train: list[Sample], test: list[Sample], corpus: Corpus, config: CycleConfig,
               *, channels: ChannelFlags = DEFAULT_CHANNEL_TOGGLES,
               feature_dim: int = DEFAULT_FEATURE_DIM,
               encoder_dim: int = DEFAULT_EMBEDDING_DIM,
               index: FlatIndex | None = None,
               oracle_labels: dict[str, tuple[str, ...]] | None = None,
               out_dir: str | Path | None = None) -> list[CycleState]:
    """Alternate stage 1 and stage 2 for n_cycles, evaluating after each cycle.

    The returned history starts with the cycle-0 baseline: untrained models
    evaluated as-is, which reduces to retrieval-order selection.
    """
    context = build_context(train, test, corpus, config,
                            channels=channels, feature_dim=feature_dim,
                            encoder_dim=encoder_dim, index=index,
                            oracle_labels=oracle_labels)
    context.answerer_passes = max(config.n_cycles, 1)
    context.selector_passes = max(config.n_cycles, 1)
    out_path = Path(out_dir) if out_dir is not None else None
    state = _evaluate_state(initial_state(context), context, "cycle")
    history = [state]
    if out_path is not None:
        _write_cycle_outputs(state, out_path)
    for cycle in range(1, config.n_cycles + 1):
        state = replace(state, cycle_index=cycle,
                        metrics={"trace": state.metrics.get("trace", [])})
        state = run_stage1(state, context)
        state = run_stage2(state, context)
        state = _evaluate_state(state, context, "cycle")
        history.append(state)
        if out_path is not None:
            _write_cycle_outputs(state, out_path)
    return history


def run_independent(train: list[Sample], test: list[Sample], corpus: Corpus,
                    config: CycleConfig, *, channels: ChannelFlags = DEFAULT_CHANNEL_TOGGLES,
                    feature_dim: int = DEFAULT_FEATURE_DIM,
                    encoder_dim: int = DEFAULT_EMBEDDING_DIM,
                    index: FlatIndex | None = None,
                    oracle_labels: dict[str, tuple[str, ...]] | None = None,
                    out_dir: str | Path | None = None) -> CycleState:
    """Three fixed phases: answerer on retrieval order, selector from its
    pseudo-labels, then one answerer refit on selector-chosen documents."""
    context = build_context(train, test, corpus, config,
                            channels=channels, feature_dim=feature_dim,
                            encoder_dim=encoder_dim, index=index,
                            oracle_labels=oracle_labels)
    context.answerer_passes = 2
    context.selector_passes = 1
    state = initial_state(context)
    state = run_stage1(state, context, selection_mode="dpr_order")
    state = run_stage2(state, context)
    state = run_stage1(state, context, selection_mode="selector")
    state = replace(state, cycle_index=1)
    state = _evaluate_state(state, context, "independent")
    if out_dir is not None:
        _write_cycle_outputs(state, Path(out_dir))
    return state
