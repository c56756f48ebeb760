"""Soft-accuracy scoring, dataset evaluation, selection quality, ablations."""

import hashlib
import json
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path

from .answerer import AnswererModel, answer_concatenated, answer_with_document, majority_vote
from .data import AnswerSet, Corpus, Sample
from .errors import ConfigError
from .retrieval import RankedDocs
from .selector import SelectorModel, select_documents


def config_fingerprint(payload: dict) -> str:
    """Stable 16-hex-digit digest of a JSON-serializable configuration."""
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def vqa_accuracy(prediction: str, answers: AnswerSet) -> float:
    """min(occurrences of the normalized prediction among the answers / 3, 1)."""
    from .text import normalize_text

    count = answers.count(normalize_text(prediction))
    return min(count / 3.0, 1.0)


@dataclass(frozen=True)
class EvalReport:
    mean_accuracy: float
    per_sample: tuple[tuple[str, str, float], ...]  # (sample_id, prediction, score)
    config_fingerprint: str

    @classmethod
    def from_scores(cls, per_sample, fingerprint: str) -> "EvalReport":
        per_sample = tuple(per_sample)
        mean = sum(score for _, _, score in per_sample) / len(per_sample) if per_sample else 0.0
        return cls(mean_accuracy=mean, per_sample=per_sample, config_fingerprint=fingerprint)


def evaluate_detailed(samples: list[Sample], retrieved: dict[str, RankedDocs], corpus: Corpus,
                      selector: SelectorModel, answerer: AnswererModel, *,
                      k_test: int, selection_mode: str = "selector",
                      answer_mode: str = "voting", rng_seed: int = 0,
                      fingerprint: str = "") -> tuple[EvalReport, dict[str, RankedDocs], list[dict]]:
    """Select, answer, and score every sample; also return selections and dumps."""
    if k_test < 1:
        raise ConfigError("no documents to vote over (k_test must be >= 1)")
    per_sample = []
    selected_map: dict[str, RankedDocs] = {}
    details: list[dict] = []
    for sample in samples:
        chosen = select_documents(selection_mode, selector, sample, retrieved[sample.id],
                                  k_test, corpus, rng_seed)
        selected_map[sample.id] = chosen
        docs = [corpus[doc_id] for doc_id, _ in chosen.entries]
        if answer_mode == "voting":
            per_doc = [
                (doc.id, answer_with_document(answerer, sample, doc), score)
                for doc, (_, score) in zip(docs, chosen.entries)
            ]
            vote = majority_vote(per_doc)
            prediction = vote.final_answer
            detail = {"sample_id": sample.id, "final_answer": prediction,
                      "per_doc": [[d, a, s] for d, a, s in vote.per_doc_answers],
                      "tally": vote.tally}
        elif answer_mode == "concatenating":
            prediction = answer_concatenated(answerer, sample, docs)
            detail = {"sample_id": sample.id, "final_answer": prediction,
                      "per_doc": [], "tally": {prediction: len(docs)}}
        else:
            raise ConfigError(f"unknown answer mode {answer_mode!r}")
        score = vqa_accuracy(prediction, sample.answer_set())
        per_sample.append((sample.id, prediction, score))
        details.append(detail)
    report = EvalReport.from_scores(per_sample, fingerprint)
    return report, selected_map, details


def evaluate(samples: list[Sample], retrieved: dict[str, RankedDocs], corpus: Corpus,
             selector: SelectorModel, answerer: AnswererModel, *,
             k_test: int, selection_mode: str = "selector", answer_mode: str = "voting",
             rng_seed: int = 0, fingerprint: str = "") -> EvalReport:
    report, _, _ = evaluate_detailed(
        samples, retrieved, corpus, selector, answerer,
        k_test=k_test, selection_mode=selection_mode, answer_mode=answer_mode,
        rng_seed=rng_seed, fingerprint=fingerprint,
    )
    return report


def selection_quality(selected: dict[str, RankedDocs],
                      oracle_labels: dict[str, tuple[str, ...]]) -> tuple[float, float]:
    """Macro-averaged set precision and recall of selections against planted ids."""
    if oracle_labels is None:
        raise ConfigError("oracle labels required for selection quality")
    if not selected:
        raise ConfigError("no selections to score")
    precisions = []
    recalls = []
    for sample_id, ranked in selected.items():
        if sample_id not in oracle_labels:
            raise ConfigError(f"no oracle labels for sample {sample_id!r}")
        planted = set(oracle_labels[sample_id])
        chosen = set(ranked.ids)
        hits = len(chosen & planted)
        precisions.append(hits / len(chosen) if chosen else 0.0)
        recalls.append(hits / len(planted) if planted else 0.0)
    return sum(precisions) / len(precisions), sum(recalls) / len(recalls)


@dataclass(frozen=True)
class AblationGrid:
    """Axes of the ablation sweep; cells are the cartesian product."""

    selection_modes: tuple[str, ...] = ("selector",)
    answer_modes: tuple[str, ...] = ("voting",)
    labeling_modes: tuple[str, ...] = ("predictions_and_weak",)
    k_settings: tuple[tuple[int, int, int], ...] = ((30, 5, 5),)  # (k_candidate, k_train, k_test)
    channel_settings: tuple[str, ...] = ("query-features",)
    training_methods: tuple[str, ...] = ("cycle",)

    def cells(self):
        return product(self.selection_modes, self.answer_modes, self.labeling_modes,
                       self.k_settings, self.channel_settings, self.training_methods)


def parse_channel_tags(tags: str):
    """Comma list toggling the optional channels; core channels stay on."""
    from .learner import ChannelFlags

    allowed = {"query-features", "context"}
    enabled = {t.strip() for t in tags.split(",") if t.strip()}
    unknown = enabled - allowed
    if unknown:
        raise ConfigError(f"unknown channel tags: {sorted(unknown)}")
    return ChannelFlags(query_features="query-features" in enabled,
                        context="context" in enabled)


def run_ablation(grid: AblationGrid, train: list[Sample], test: list[Sample], corpus: Corpus,
                 base_config, *, feature_dim: int | None = None, encoder_dim: int | None = None,
                 oracle_labels: dict[str, tuple[str, ...]] | None = None,
                 out_dir: str | Path | None = None) -> list[dict]:
    """Run every grid cell as an isolated seeded run; failures become error rows."""
    from .bootstrap import run_cycles, run_independent
    from .learner import DEFAULT_FEATURE_DIM
    from .retrieval import DEFAULT_EMBEDDING_DIM

    feature_dim = feature_dim or DEFAULT_FEATURE_DIM
    encoder_dim = encoder_dim or DEFAULT_EMBEDDING_DIM
    rows: list[dict] = []
    series: list[dict] = []
    for selection, answering, labeling, ks, channel_tags, method in grid.cells():
        cell = {
            "selection_mode": selection,
            "answer_mode": answering,
            "labeling_mode": labeling,
            "k_candidate": ks[0],
            "k_train": ks[1],
            "k_test": ks[2],
            "channels": channel_tags,
            "training_method": method,
        }
        cell_key = "|".join(f"{k}={cell[k]}" for k in sorted(cell))
        try:
            config = replace(base_config, selection_mode=selection, answer_mode=answering,
                             labeling_mode=labeling, k_candidate=ks[0], k_train=ks[1],
                             k_test=ks[2])
            channels = parse_channel_tags(channel_tags)
            if method == "cycle":
                history = run_cycles(train, test, corpus, config, channels=channels,
                                     feature_dim=feature_dim, encoder_dim=encoder_dim,
                                     oracle_labels=oracle_labels)
                final = history[-1]
                for state in history:
                    series.append({"series": cell_key, "x": state.cycle_index,
                                   "y": state.metrics["accuracy"]})
            elif method == "independent":
                final = run_independent(train, test, corpus, config, channels=channels,
                                        feature_dim=feature_dim, encoder_dim=encoder_dim,
                                        oracle_labels=oracle_labels)
                series.append({"series": cell_key, "x": final.cycle_index,
                               "y": final.metrics["accuracy"]})
            else:
                raise ConfigError(f"unknown training method {method!r}")
            rows.append({**cell,
                         "accuracy": final.metrics["accuracy"],
                         "precision_at_t": final.metrics.get("precision_at_t"),
                         "recall_at_t": final.metrics.get("recall_at_t"),
                         "label_positive_rate": final.metrics.get("label_positive_rate"),
                         "error": None})
            series.append({"series": f"accuracy_vs_k_candidate|{cell_key}",
                           "x": ks[0], "y": final.metrics["accuracy"]})
        except Exception as exc:  # record and continue with the remaining cells
            rows.append({**cell, "accuracy": None, "precision_at_t": None,
                         "recall_at_t": None, "label_positive_rate": None,
                         "error": f"{type(exc).__name__}: {exc}"})
    if out_dir is not None:
        write_ablation_outputs(rows, series, Path(out_dir))
    return rows


_TSV_COLUMNS = ("selection_mode", "answer_mode", "labeling_mode", "k_candidate", "k_train",
                "k_test", "channels", "training_method", "accuracy", "precision_at_t",
                "recall_at_t", "label_positive_rate", "error")


def write_ablation_outputs(rows: list[dict], series: list[dict], out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "results.tsv").open("w", encoding="utf-8") as handle:
        handle.write("\t".join(_TSV_COLUMNS) + "\n")
        for row in rows:
            handle.write("\t".join("" if row[c] is None else str(row[c]) for c in _TSV_COLUMNS) + "\n")
    with (out_dir / "results.jsonl").open("w", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(row, sort_keys=True) + "\n")
    with (out_dir / "series.jsonl").open("w", encoding="utf-8") as handle:
        for point in series:
            handle.write(json.dumps(point, sort_keys=True) + "\n")
