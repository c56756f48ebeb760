"""Text normalization and stable token hashing used everywhere in the pipeline.

All string comparison in the package (answer counting, answer containment,
feature hashing) goes through `normalize_text`, so the one normalizer keeps
scoring and labeling consistent.

The token hash is deliberately simple and reproducible from the standard
library alone: the low 64 bits of blake2b(token), little-endian.  Bucket is
``hash % n_buckets``; sign is +1 when the top bit is clear, -1 otherwise.
"""

from functools import lru_cache
from hashlib import blake2b
import unicodedata


def normalize_text(raw: str) -> str:
    """Lowercase, fold compatibility forms, map punctuation to spaces, collapse runs.

    Idempotent: normalize_text(normalize_text(x)) == normalize_text(x).
    """
    text = unicodedata.normalize("NFKC", raw).lower()
    text = "".join(ch if ch.isalnum() else " " for ch in text)
    return " ".join(text.split())


@lru_cache(maxsize=None)
def tokenize(raw: str) -> tuple[str, ...]:
    return tuple(normalize_text(raw).split())


@lru_cache(maxsize=None)
def token_hash(token: str) -> int:
    """Stable 64-bit hash of a token."""
    digest = blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def hash_bucket(token: str, n_buckets: int) -> int:
    return token_hash(token) % n_buckets


def hash_sign(token: str) -> float:
    return 1.0 if token_hash(token) & (1 << 63) == 0 else -1.0


def derive_seed(*parts) -> int:
    """Mix arbitrary labels into a reproducible 63-bit seed."""
    joined = "/".join(str(p) for p in parts)
    digest = blake2b(joined.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") & (2**63 - 1)
