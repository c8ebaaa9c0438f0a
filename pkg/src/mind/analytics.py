"""Quantitative analyses over the knowledge base and annotation results:
semantic diversity, prompt robustness, typicality, and filter statistics.

All operations are read-only over their inputs and safe to run
concurrently with KB readers.
"""
from __future__ import annotations

import hashlib
import os
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import httpx
import numpy as np

from .errors import (
    AnalyticsError,
    BackendError,
    DimensionMismatch,
    EmptyInput,
    EmptyTaxonomy,
    ZeroVector,
)
from .kb import IntentionKB
from .relations import RELATION_NAMES

EMBED_URL_ENV = "MIND_EMBED_URL"

_TOKEN = re.compile(r"[a-z0-9']+")

Embedder = Callable[[list[str]], list[np.ndarray]]
NounExtractor = Callable[[str], list[str]]


# --- vector similarity --------------------------------------------------------


def cosine(u: Sequence[float] | np.ndarray, v: Sequence[float] | np.ndarray) -> float:
    """Cosine similarity u.v/(|u||v|), clamped to [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise DimensionMismatch(f"incompatible shapes {u.shape} and {v.shape}")
    norm_u = float(np.linalg.norm(u))
    norm_v = float(np.linalg.norm(v))
    if norm_u == 0.0 or norm_v == 0.0:
        raise ZeroVector("cosine undefined for a zero-norm vector")
    value = float(np.dot(u, v)) / (norm_u * norm_v)
    return max(-1.0, min(1.0, value))


@dataclass
class RobustnessReport:
    mean: float
    min: float
    histogram: list[int]
    bin_edges: list[float]

    def as_dict(self) -> dict:
        return {
            "mean": self.mean,
            "min": self.min,
            "histogram": self.histogram,
            "bin_edges": self.bin_edges,
        }


def robustness_report(
    paired_intentions: Sequence[tuple[str, str]], embedder: Embedder, bins: int = 20
) -> RobustnessReport:
    """Mean/min/histogram of cosine similarity between each original
    intention and its modified-prompt counterpart."""
    if not paired_intentions:
        raise EmptyInput("no intention pairs to compare")
    originals = embedder([a for a, _ in paired_intentions])
    modified = embedder([b for _, b in paired_intentions])
    sims = [cosine(u, v) for u, v in zip(originals, modified)]
    counts, edges = np.histogram(sims, bins=bins, range=(-1.0, 1.0))
    return RobustnessReport(
        mean=float(np.mean(sims)),
        min=float(np.min(sims)),
        histogram=[int(c) for c in counts],
        bin_edges=[float(e) for e in edges],
    )


class HashedBagOfWordsEmbedder:
    """Deterministic test embedder: hashed bag-of-words, unit-normalized.

    Order-insensitive and nonzero for any text containing word tokens.
    """

    def __init__(self, dim: int = 64):
        if dim < 1:
            raise AnalyticsError("embedding dimension must be >= 1")
        self.dim = dim

    def _bucket(self, token: str) -> int:
        digest = hashlib.md5(token.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") % self.dim

    def __call__(self, texts: list[str]) -> list[np.ndarray]:
        vectors = []
        for text in texts:
            vec = np.zeros(self.dim, dtype=np.float64)
            for token in _TOKEN.findall(text.lower()):
                vec[self._bucket(token)] += 1.0
            norm = np.linalg.norm(vec)
            vectors.append(vec / norm if norm > 0 else vec)
        return vectors


class HttpEmbedder:
    """Client for the embedding endpoint: POST {texts} -> {vectors}."""

    def __init__(self, url: str | None = None, timeout: float = 30.0):
        self.url = url or os.environ.get(EMBED_URL_ENV, "")
        if not self.url:
            raise BackendError(f"no embedding endpoint configured ({EMBED_URL_ENV})")
        self.timeout = timeout

    def __call__(self, texts: list[str]) -> list[np.ndarray]:
        try:
            resp = httpx.post(self.url, json={"texts": texts}, timeout=self.timeout)
            resp.raise_for_status()
            vectors = resp.json()["vectors"]
        except (httpx.HTTPError, KeyError, ValueError) as exc:
            raise BackendError(f"embedding request failed: {exc}") from exc
        return [np.asarray(v, dtype=np.float64) for v in vectors]


# --- hypernym diversity ---------------------------------------------------------


class Taxonomy:
    """Case-insensitive instance -> weighted hypernym lookup."""

    def __init__(self, entries: dict[str, list[tuple[str, float]]]):
        self._entries: dict[str, list[tuple[str, float]]] = {}
        for instance, hypernyms in entries.items():
            for hypernym, weight in hypernyms:
                if weight <= 0:
                    raise AnalyticsError(
                        f"taxonomy weight for {instance!r} -> {hypernym!r} must be > 0"
                    )
            self._entries[instance.lower()] = list(hypernyms)

    def __len__(self) -> int:
        return len(self._entries)

    def lookup(self, noun: str) -> list[tuple[str, float]]:
        return self._entries.get(noun.lower(), [])

    def resolve(self, token: str) -> str | None:
        """Canonical taxonomy key for a token, with naive plural stripping."""
        token = token.lower()
        for candidate in (token, token[:-1] if token.endswith("s") else None,
                          token[:-2] if token.endswith("es") else None):
            if candidate and candidate in self._entries:
                return candidate
        return None

    def best_hypernym(self, noun: str) -> str | None:
        """Highest-weight hypernym; ties break to the lexicographically
        smallest name for determinism."""
        hypernyms = self.lookup(noun)
        if not hypernyms:
            return None
        return min(hypernyms, key=lambda hw: (-hw[1], hw[0]))[0]

    @classmethod
    def from_file(cls, path: str | Path) -> "Taxonomy":
        """Load ``instance<TAB>hypernym<TAB>weight`` triples."""
        entries: dict[str, list[tuple[str, float]]] = {}
        for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise AnalyticsError(f"{path}:{line_no}: expected instance<TAB>hypernym<TAB>weight")
            instance, hypernym, weight = parts
            entries.setdefault(instance.strip().lower(), []).append(
                (hypernym.strip(), float(weight))
            )
        return cls(entries)


class LexiconNounExtractor:
    """Default noun extractor: taxonomy-key matching over lowercased
    tokens. A real tagger can be plugged in behind the same callable
    interface."""

    def __init__(self, taxonomy: Taxonomy):
        self.taxonomy = taxonomy

    def __call__(self, text: str) -> list[str]:
        nouns = []
        for token in _TOKEN.findall(text.lower()):
            key = self.taxonomy.resolve(token)
            if key is not None:
                nouns.append(key)
        return nouns


def hypernym_distribution(
    intentions: Iterable[str],
    taxonomy: Taxonomy,
    noun_extractor: NounExtractor | None = None,
    top_k: int = 25,
) -> list[tuple[str, int]]:
    """Frequency ranking of the hypernyms of nouns found in the sample.

    Each extracted noun maps to its single highest-weight hypernym; nouns
    absent from the taxonomy contribute nothing. Ties in count break
    lexicographically.
    """
    if top_k < 1:
        raise AnalyticsError("top_k must be >= 1")
    if len(taxonomy) == 0:
        raise EmptyTaxonomy("taxonomy has no entries")
    extractor = noun_extractor or LexiconNounExtractor(taxonomy)
    counts: Counter[str] = Counter()
    for intention in intentions:
        for noun in extractor(intention):
            hypernym = taxonomy.best_hypernym(noun)
            if hypernym is not None:
                counts[hypernym] += 1
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    return ranked[:top_k]


# --- typicality and filter statistics -------------------------------------------


def likert_score(votes: Sequence[int]) -> int:
    """Three binary typicality votes onto a 1..4 scale: 1 + positives."""
    if len(votes) != 3 or any(v not in (0, 1) for v in votes):
        raise AnalyticsError(f"expected exactly 3 binary votes, got {votes!r}")
    return 1 + sum(votes)


def typicality_by_relation(
    annotations: Iterable[tuple[str, Sequence[int]]]
) -> dict[str, float]:
    """Mean Likert typicality per relation over (relation, votes) rows."""
    sums: dict[str, int] = {}
    counts: dict[str, int] = {}
    for relation, votes in annotations:
        score = likert_score(votes)
        sums[relation] = sums.get(relation, 0) + score
        counts[relation] = counts.get(relation, 0) + 1
    return {relation: sums[relation] / counts[relation] for relation in sums}


def rfp_by_relation(kb: IntentionKB) -> dict:
    """Relation-wise filter preserve rate: accepted/(accepted+rejected),
    None when a relation saw no candidates; plus the overall rate."""
    accepted: Counter[str] = Counter()
    rejected: Counter[str] = Counter()
    for record in kb.query():
        (accepted if record.accept else rejected)[record.relation] += 1
    relations = {}
    for name in RELATION_NAMES:
        seen = accepted[name] + rejected[name]
        relations[name] = accepted[name] / seen if seen else None
    total_accepted = sum(accepted.values())
    total_seen = total_accepted + sum(rejected.values())
    return {
        "relations": relations,
        "overall": (total_accepted / total_seen) if total_seen else None,
    }
