"""Core data types: QA samples, knowledge documents, answer sets, JSONL ingestion.

Dataset files are line-delimited JSON records with fields
``id, question, caption, labels, ocr, answers[, query_features]``;
corpus files carry ``id, text``.  Everything is UTF-8.
"""

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .errors import DataFormatError
from .text import normalize_text


@dataclass(frozen=True)
class Sample:
    """One question instance with its visual-context texts and human answers."""

    id: str
    question: str
    caption: str = ""
    object_labels: tuple[str, ...] = ()
    ocr_strings: tuple[str, ...] = ()
    answers: tuple[str, ...] = ()
    query_features: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.id:
            raise DataFormatError("sample id must be nonempty")
        if not self.answers:
            raise DataFormatError(f"sample {self.id!r}: answers must be nonempty")
        if self.query_features is not None:
            if not all(math.isfinite(v) for v in self.query_features):
                raise DataFormatError(f"sample {self.id!r}: query_features must be finite")

    def answer_set(self) -> "AnswerSet":
        return AnswerSet.from_raw(self.answers)


@dataclass(frozen=True)
class KnowledgeDocument:
    id: str
    text: str

    def __post_init__(self):
        if not self.id:
            raise DataFormatError("document id must be nonempty")
        if not self.text:
            raise DataFormatError(f"document {self.id!r}: text must be nonempty")


@dataclass(frozen=True)
class AnswerSet:
    """Normalized human answers with their modal (canonical) entry."""

    entries: tuple[str, ...]
    canonical: str

    @classmethod
    def from_raw(cls, answers: Iterable[str]) -> "AnswerSet":
        entries = tuple(normalize_text(a) for a in answers)
        if not entries:
            raise DataFormatError("empty answer set")
        return cls(entries=entries, canonical=_modal(entries))

    def count(self, normalized: str) -> int:
        return sum(1 for e in self.entries if e == normalized)

    def distinct(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.entries)))


def _modal(entries: tuple[str, ...]) -> str:
    counts = Counter(entries)
    # Most frequent; frequency ties resolved to the lexicographically smallest.
    return min(counts, key=lambda a: (-counts[a], a))


def canonical_answer(answers: Iterable[str]) -> str:
    """Modal normalized answer; ties go to the lexicographically smallest."""
    return AnswerSet.from_raw(answers).canonical


def contains_any_answer(doc_text: str, answers: AnswerSet) -> bool:
    """True when the normalized document contains any answer at token boundaries.

    Multi-word answers must appear as a contiguous token run; "cat" does not
    match inside "category".  Answers that normalize to "" never match.
    """
    padded = f" {normalize_text(doc_text)} "
    return any(f" {a} " in padded for a in set(answers.entries) if a)


class Corpus:
    """Immutable collection of knowledge documents with unique ids."""

    def __init__(self, documents: Iterable[KnowledgeDocument]):
        docs = tuple(documents)
        by_id: dict[str, KnowledgeDocument] = {}
        for doc in docs:
            if doc.id in by_id:
                raise DataFormatError(f"duplicate document id {doc.id!r}")
            by_id[doc.id] = doc
        self._docs = docs
        self._by_id = by_id

    def __len__(self) -> int:
        return len(self._docs)

    def __iter__(self) -> Iterator[KnowledgeDocument]:
        return iter(self._docs)

    def __getitem__(self, doc_id: str) -> KnowledgeDocument:
        try:
            return self._by_id[doc_id]
        except KeyError:
            raise KeyError(f"unknown document id {doc_id!r}") from None

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._by_id

    def __eq__(self, other) -> bool:
        return isinstance(other, Corpus) and self._docs == other._docs

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(d.id for d in self._docs)

    @property
    def documents(self) -> tuple[KnowledgeDocument, ...]:
        return self._docs


def _iter_records(path: str | Path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{line_no}: malformed JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise DataFormatError(f"{path}:{line_no}: record must be a JSON object")
            yield line_no, record


def _require(record: dict, field_name: str, path, line_no: int):
    if field_name not in record:
        raise DataFormatError(f"{path}:{line_no}: missing field {field_name!r}")
    return record[field_name]


def _string_list(value, field_name: str, path, line_no: int) -> tuple[str, ...]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise DataFormatError(f"{path}:{line_no}: field {field_name!r} must be an array of strings")
    return tuple(value)


def ingest_dataset(path: str | Path) -> list[Sample]:
    """Load and validate a line-delimited dataset file."""
    samples: list[Sample] = []
    seen: dict[str, int] = {}
    qf_dim: int | None = None
    for line_no, record in _iter_records(path):
        sample_id = _require(record, "id", path, line_no)
        if not isinstance(sample_id, str):
            raise DataFormatError(f"{path}:{line_no}: field 'id' must be a string")
        if sample_id in seen:
            raise DataFormatError(
                f"{path}:{line_no}: duplicate sample id {sample_id!r} (first seen on line {seen[sample_id]})"
            )
        seen[sample_id] = line_no
        question = _require(record, "question", path, line_no)
        answers = _string_list(_require(record, "answers", path, line_no), "answers", path, line_no)
        labels = _string_list(record.get("labels", []), "labels", path, line_no)
        ocr = _string_list(record.get("ocr", []), "ocr", path, line_no)
        features = record.get("query_features")
        query_features = None
        if features is not None:
            if not isinstance(features, list) or not all(isinstance(v, (int, float)) for v in features):
                raise DataFormatError(f"{path}:{line_no}: field 'query_features' must be an array of numbers")
            if qf_dim is None:
                qf_dim = len(features)
            elif len(features) != qf_dim:
                raise DataFormatError(
                    f"{path}:{line_no}: query_features has dimension {len(features)}, expected {qf_dim}"
                )
            query_features = tuple(float(v) for v in features)
        try:
            samples.append(
                Sample(
                    id=sample_id,
                    question=question,
                    caption=record.get("caption", ""),
                    object_labels=labels,
                    ocr_strings=ocr,
                    answers=answers,
                    query_features=query_features,
                )
            )
        except DataFormatError as exc:
            raise DataFormatError(f"{path}:{line_no}: {exc}") from exc
    return samples


def ingest_corpus(path: str | Path) -> Corpus:
    """Load and validate a line-delimited corpus file."""
    docs: list[KnowledgeDocument] = []
    seen: dict[str, int] = {}
    for line_no, record in _iter_records(path):
        doc_id = _require(record, "id", path, line_no)
        text = _require(record, "text", path, line_no)
        if not isinstance(doc_id, str) or not isinstance(text, str):
            raise DataFormatError(f"{path}:{line_no}: 'id' and 'text' must be strings")
        if doc_id in seen:
            raise DataFormatError(
                f"{path}:{line_no}: duplicate document id {doc_id!r} (first seen on line {seen[doc_id]})"
            )
        seen[doc_id] = line_no
        try:
            docs.append(KnowledgeDocument(id=doc_id, text=text))
        except DataFormatError as exc:
            raise DataFormatError(f"{path}:{line_no}: {exc}") from exc
    return Corpus(docs)


def sample_to_record(sample: Sample) -> dict:
    record = {
        "id": sample.id,
        "question": sample.question,
        "caption": sample.caption,
        "labels": list(sample.object_labels),
        "ocr": list(sample.ocr_strings),
        "answers": list(sample.answers),
    }
    if sample.query_features is not None:
        record["query_features"] = list(sample.query_features)
    return record


def write_dataset(samples: Iterable[Sample], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        for sample in samples:
            handle.write(json.dumps(sample_to_record(sample), sort_keys=True) + "\n")


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        for doc in corpus:
            handle.write(json.dumps({"id": doc.id, "text": doc.text}, sort_keys=True) + "\n")
