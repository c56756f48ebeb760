"""Hashed text encoder and exact top-k inner-product search over a flat index."""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Corpus, Sample
from .errors import DataFormatError, DimensionMismatchError
from .text import hash_bucket, hash_sign, normalize_text, tokenize

DEFAULT_EMBEDDING_DIM = 256

_INDEX_MAGIC = b"BFIX"
_INDEX_VERSION = 1


def encode(text: str, dim: int = DEFAULT_EMBEDDING_DIM) -> np.ndarray:
    """Signed feature hashing of normalized unigrams and bigrams.

    Bigram tokens join adjacent words with "_"; each occurrence adds the token
    sign to its bucket.  Empty text encodes to the zero vector.
    """
    vec = np.zeros(dim, dtype=np.float32)
    toks = tokenize(text)
    for tok in toks:
        vec[hash_bucket(tok, dim)] += hash_sign(tok)
    for left, right in zip(toks, toks[1:]):
        bigram = f"{left}_{right}"
        vec[hash_bucket(bigram, dim)] += hash_sign(bigram)
    return vec


def build_query(sample: Sample) -> str:
    """Question, caption, object labels, and OCR strings joined in that order."""
    parts = [sample.question, sample.caption, *sample.object_labels, *sample.ocr_strings]
    return normalize_text(" ".join(p for p in parts if p))


@dataclass(frozen=True)
class RankedDocs:
    """Ordered (doc_id, score) entries: scores nonincreasing, ids unique."""

    entries: tuple[tuple[str, float], ...]

    def __post_init__(self):
        seen = set()
        prev = None
        for doc_id, score in self.entries:
            if doc_id in seen:
                raise DataFormatError(f"duplicate doc id {doc_id!r} in ranking")
            seen.add(doc_id)
            if prev is not None and score > prev:
                raise DataFormatError("ranking scores must be nonincreasing")
            prev = score

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(doc_id for doc_id, _ in self.entries)

    def top(self, k: int) -> "RankedDocs":
        return RankedDocs(entries=self.entries[: max(k, 0)])


class FlatIndex:
    """Dense matrix of document embeddings; read-only after build."""

    def __init__(self, doc_ids: tuple[str, ...], matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=np.float32)
        if matrix.ndim != 2 or matrix.shape[0] != len(doc_ids):
            raise DimensionMismatchError("matrix rows must match doc_ids length")
        if len(set(doc_ids)) != len(doc_ids):
            raise DataFormatError("duplicate doc ids in index")
        self._doc_ids = tuple(doc_ids)
        self._matrix = matrix
        self._matrix.setflags(write=False)

    @classmethod
    def build(cls, corpus: Corpus, dim: int = DEFAULT_EMBEDDING_DIM) -> "FlatIndex":
        matrix = np.zeros((len(corpus), dim), dtype=np.float32)
        ids = []
        for row, doc in enumerate(corpus):
            ids.append(doc.id)
            matrix[row] = encode(doc.text, dim)
        return cls(tuple(ids), matrix)

    def __len__(self) -> int:
        return len(self._doc_ids)

    @property
    def dimension(self) -> int:
        return self._matrix.shape[1]

    @property
    def doc_ids(self) -> tuple[str, ...]:
        return self._doc_ids

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    def save(self, path: str | Path) -> None:
        with Path(path).open("wb") as handle:
            handle.write(_INDEX_MAGIC)
            handle.write(struct.pack("<III", _INDEX_VERSION, self.dimension, len(self)))
            for doc_id in self._doc_ids:
                raw = doc_id.encode("utf-8")
                handle.write(struct.pack("<I", len(raw)))
                handle.write(raw)
            handle.write(self._matrix.astype("<f4").tobytes(order="C"))

    @classmethod
    def load(cls, path: str | Path) -> "FlatIndex":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"no such file: {path}")
        with path.open("rb") as handle:
            magic = handle.read(4)
            if magic != _INDEX_MAGIC:
                raise DataFormatError(f"{path}: not an index file")
            version, dim, count = struct.unpack("<III", handle.read(12))
            if version != _INDEX_VERSION:
                raise DataFormatError(f"{path}: unsupported index version {version}")
            ids = []
            for _ in range(count):
                (length,) = struct.unpack("<I", handle.read(4))
                ids.append(handle.read(length).decode("utf-8"))
            raw = handle.read(count * dim * 4)
            matrix = np.frombuffer(raw, dtype="<f4").reshape(count, dim)
        return cls(tuple(ids), matrix.copy())


def retrieve_top_k(index: FlatIndex, query: np.ndarray, k: int, cosine: bool = False) -> RankedDocs:
    """Exact top-k by inner product (or cosine); ties break on ascending doc id."""
    query = np.asarray(query, dtype=np.float32)
    if query.shape != (index.dimension,):
        raise DimensionMismatchError(
            f"query dimension {query.shape} does not match index dimension {index.dimension}"
        )
    if k < 0:
        raise DataFormatError("k must be >= 0")
    scores = index.matrix @ query
    if cosine:
        norms = np.linalg.norm(index.matrix, axis=1) * np.linalg.norm(query)
        scores = np.divide(scores, norms, out=np.zeros_like(scores), where=norms > 0)
    order = sorted(range(len(index)), key=lambda i: (-scores[i], index.doc_ids[i]))
    top = order[: min(k, len(index))]
    return RankedDocs(entries=tuple((index.doc_ids[i], float(scores[i])) for i in top))
