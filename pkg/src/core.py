"""
Core Module
Domain types shared by every component of the engine, plus impact and query-weight
quantization.

Documents and queries are sparse vectors over a dense term-id space. Impacts are
quantized to 8 bits with a ceiling quantizer so that block maxima computed on
quantized values remain upper bounds of quantized document contributions.
"""
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

import config

DocId = int
TermId = int
QuantizedImpact = int


# ========================================================================================
# ERRORS
# ========================================================================================
class BMPError(Exception):
    """Root of every error raised by the engine."""


class InvalidArgumentError(BMPError, ValueError):
    """A parameter is outside its documented domain."""


class OutOfRangeError(BMPError, ValueError):
    """A value falls outside the range a structure was fitted on."""


class CorruptInputError(BMPError, ValueError):
    """Input data violates a structural precondition (ordering, bounds, duplicates)."""


class QueryOverflowError(InvalidArgumentError):
    """A query could overflow the 32-bit score accumulators."""


# ========================================================================================
# QUANTIZATION
# ========================================================================================
@dataclass(frozen=True)
class Quantizer:
    """Linear ceiling quantizer mapping (0, max_raw_score] onto {1..levels}."""
    max_raw_score: float
    levels: int = config.QUANTIZATION_LEVELS

    def quantize_many(self, scores) -> np.ndarray:
        """Vectorized quantize_impact over an array of raw scores."""
        values = np.asarray(scores, dtype=np.float64)
        if values.size and (values.min() < 0 or values.max() > self.max_raw_score):
            raise OutOfRangeError(
                f"raw scores must lie in [0, {self.max_raw_score}], "
                f"got [{values.min()}, {values.max()}]"
            )
        quantized = np.ceil(values / self.max_raw_score * self.levels)
        quantized = np.clip(quantized, 1, self.levels)
        quantized[values == 0] = 0
        return quantized.astype(np.uint8)


def fit_quantizer(max_raw_score: float) -> Quantizer:
    """Build a quantizer whose top level corresponds to ``max_raw_score``."""
    try:
        value = float(max_raw_score)
    except (TypeError, ValueError) as e:
        raise InvalidArgumentError(f"max_raw_score must be a number: {max_raw_score!r}") from e
    if not math.isfinite(value) or value <= 0:
        raise InvalidArgumentError(f"max_raw_score must be positive and finite, got {max_raw_score}")
    return Quantizer(max_raw_score=value)


def quantize_impact(q: Quantizer, s: float) -> QuantizedImpact:
    """
    Quantize a raw impact score.

    Returns 0 iff ``s == 0``; otherwise ``ceil(s / max * levels)`` clamped to
    [1, levels].
    """
    if s < 0 or s > q.max_raw_score or math.isnan(s):
        raise OutOfRangeError(f"raw score {s} outside [0, {q.max_raw_score}]")
    if s == 0:
        return 0
    level = math.ceil(s / q.max_raw_score * q.levels)
    return min(max(level, 1), q.levels)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def default_query_scale(weights: Iterable[float]) -> float:
    """1 when every weight is already integral, else the configured scale."""
    weights = list(weights)
    if weights and all(float(w).is_integer() for w in weights):
        return 1.0
    return float(config.QUERY_CONFIG['scale'])


# ========================================================================================
# VECTORS
# ========================================================================================
@dataclass(frozen=True)
class SparseVector:
    """
    Term-id → non-negative real weight, sorted strictly ascending by term id.

    Zero-weight entries are removed at construction; use ``from_dict`` or
    ``from_pairs`` rather than the raw constructor when the input is unsorted.
    """
    entries: Tuple[Tuple[TermId, float], ...] = ()

    def __post_init__(self):
        previous = -1
        for term, weight in self.entries:
            if term <= previous:
                raise CorruptInputError(f"term ids must be strictly ascending, got {term} after {previous}")
            if not weight > 0 or not math.isfinite(weight):
                raise CorruptInputError(f"weight for term {term} must be positive and finite, got {weight}")
            previous = term

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[TermId, float]]) -> "SparseVector":
        seen: Dict[TermId, float] = {}
        for term, weight in pairs:
            if term < 0:
                raise CorruptInputError(f"negative term id {term}")
            if weight < 0:
                raise CorruptInputError(f"negative weight {weight} for term {term}")
            if term in seen:
                raise CorruptInputError(f"duplicate term id {term}")
            seen[term] = float(weight)
        return cls(tuple(sorted((t, w) for t, w in seen.items() if w > 0)))

    @classmethod
    def from_dict(cls, term_weights: Mapping[TermId, float]) -> "SparseVector":
        return cls.from_pairs(term_weights.items())

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[Tuple[TermId, float]]:
        return iter(self.entries)

    @property
    def term_ids(self) -> List[TermId]:
        return [t for t, _ in self.entries]

    @property
    def weights(self) -> List[float]:
        return [w for _, w in self.entries]


@dataclass(frozen=True)
class QuantizedVector:
    """Term-id → positive integer weight, sorted strictly ascending by term id."""
    entries: Tuple[Tuple[TermId, int], ...] = ()

    def __post_init__(self):
        previous = -1
        for term, weight in self.entries:
            if term <= previous:
                raise CorruptInputError(f"term ids must be strictly ascending, got {term} after {previous}")
            if weight < 1 or int(weight) != weight:
                raise CorruptInputError(f"weight for term {term} must be a positive integer, got {weight}")
            previous = term

    @classmethod
    def from_dict(cls, term_weights: Mapping[TermId, int]) -> "QuantizedVector":
        return cls(tuple(sorted((int(t), int(w)) for t, w in term_weights.items())))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[Tuple[TermId, int]]:
        return iter(self.entries)

    def as_dict(self) -> Dict[TermId, int]:
        return dict(self.entries)

    @property
    def term_ids(self) -> np.ndarray:
        return np.fromiter((t for t, _ in self.entries), dtype=np.int64, count=len(self.entries))

    @property
    def weights(self) -> np.ndarray:
        return np.fromiter((w for _, w in self.entries), dtype=np.int64, count=len(self.entries))


QuantizedQuery = QuantizedVector


def quantize_query(v: SparseVector, scale: Optional[float] = None) -> QuantizedQuery:
    """
    Make query weights integral: each weight becomes ``max(1, round(w * scale))``.

    Rounding is half-up. When ``scale`` is omitted it is 1 for all-integral
    inputs and ``QUERY_CONFIG['scale']`` otherwise.
    """
    if scale is None:
        scale = default_query_scale(v.weights)
    if not scale > 0 or not math.isfinite(scale):
        raise InvalidArgumentError(f"scale must be positive and finite, got {scale}")
    return QuantizedVector(tuple((t, max(1, _round_half_up(w * scale))) for t, w in v))


def quantize_document(q: Quantizer, v: SparseVector) -> QuantizedVector:
    """Quantize a document vector; every stored impact is >= 1 because weights are > 0."""
    return QuantizedVector(tuple((t, quantize_impact(q, w)) for t, w in v))


def check_accumulator_bound(query: QuantizedQuery, max_impact: int = config.QUANTIZATION_LEVELS):
    """Reject queries whose worst-case score exceeds the 32-bit accumulator range."""
    worst = int(sum(w for _, w in query)) * max_impact
    if worst > config.ACCUMULATOR_LIMIT:
        raise QueryOverflowError(
            f"query weight sum {worst // max_impact} could overflow 32-bit accumulators"
        )


# ========================================================================================
# COLLECTIONS AND POSTINGS
# ========================================================================================
@dataclass(frozen=True, eq=False)
class QuantizedCollection:
    """
    Quantized documents in compressed-row form: document d owns
    ``term_ids[doc_offsets[d]:doc_offsets[d+1]]`` and the matching impacts.
    """
    doc_offsets: np.ndarray   # int64, length n + 1
    term_ids: np.ndarray      # uint32, ascending within each document
    impacts: np.ndarray       # uint8, >= 1
    vocab_size: int

    @property
    def n(self) -> int:
        return len(self.doc_offsets) - 1

    @classmethod
    def from_documents(cls, documents: Iterable[Tuple[DocId, QuantizedVector]],
                       n: Optional[int] = None,
                       vocab_size: Optional[int] = None) -> "QuantizedCollection":
        """
        Assemble a collection from (DocId, vector) pairs in any order.

        DocIds must be unique and below ``n``; ids never mentioned become
        empty documents.
        """
        by_doc: Dict[DocId, QuantizedVector] = {}
        for doc_id, vector in documents:
            if doc_id in by_doc:
                raise CorruptInputError(f"duplicate DocId {doc_id}")
            if doc_id < 0:
                raise CorruptInputError(f"negative DocId {doc_id}")
            by_doc[doc_id] = vector
        if n is None:
            n = max(by_doc, default=-1) + 1
        if by_doc and max(by_doc) >= n:
            raise CorruptInputError(f"DocId {max(by_doc)} >= collection size {n}")

        lengths = np.zeros(n + 1, dtype=np.int64)
        for doc_id, vector in by_doc.items():
            lengths[doc_id + 1] = len(vector)
        doc_offsets = np.cumsum(lengths)
        total = int(doc_offsets[-1])
        term_ids = np.zeros(total, dtype=np.uint32)
        impacts = np.zeros(total, dtype=np.uint8)
        for doc_id, vector in by_doc.items():
            start = doc_offsets[doc_id]
            for i, (term, impact) in enumerate(vector):
                if not 1 <= impact <= config.QUANTIZATION_LEVELS:
                    raise CorruptInputError(f"impact {impact} of doc {doc_id} outside [1, 255]")
                term_ids[start + i] = term
                impacts[start + i] = impact
        if vocab_size is None:
            vocab_size = int(term_ids.max()) + 1 if total else 0
        elif total and int(term_ids.max()) >= vocab_size:
            raise CorruptInputError(f"term id {int(term_ids.max())} >= vocabulary size {vocab_size}")
        return cls(doc_offsets=doc_offsets, term_ids=term_ids, impacts=impacts, vocab_size=vocab_size)

    def document(self, doc_id: DocId) -> QuantizedVector:
        start, end = self.doc_offsets[doc_id], self.doc_offsets[doc_id + 1]
        return QuantizedVector(tuple(
            (int(t), int(s)) for t, s in zip(self.term_ids[start:end], self.impacts[start:end])
        ))

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[Tuple[DocId, QuantizedVector]]:
        for doc_id in range(self.n):
            yield doc_id, self.document(doc_id)

    def doc_ids_per_entry(self) -> np.ndarray:
        """DocId of every stored entry, aligned with term_ids / impacts."""
        return np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.doc_offsets))

    def to_postings(self) -> "PostingLists":
        """Transpose into per-term posting lists sorted by DocId."""
        docs = self.doc_ids_per_entry()
        order = np.lexsort((docs, self.term_ids))
        counts = np.bincount(self.term_ids, minlength=self.vocab_size) if len(self.term_ids) \
            else np.zeros(self.vocab_size, dtype=np.int64)
        offsets = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        return PostingLists(
            offsets=offsets,
            doc_ids=docs[order].astype(np.uint32),
            impacts=self.impacts[order],
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, QuantizedCollection):
            return NotImplemented
        return (self.vocab_size == other.vocab_size
                and np.array_equal(self.doc_offsets, other.doc_offsets)
                and np.array_equal(self.term_ids, other.term_ids)
                and np.array_equal(self.impacts, other.impacts))


@dataclass(frozen=True, eq=False)
class PostingLists:
    """Per-term (DocId, impact) lists: term t owns ``offsets[t]:offsets[t+1]``."""
    offsets: np.ndarray   # int64, length V + 1
    doc_ids: np.ndarray   # uint32
    impacts: np.ndarray   # uint8

    @property
    def vocab_size(self) -> int:
        return len(self.offsets) - 1

    @classmethod
    def from_lists(cls, lists: Sequence[Sequence[Tuple[DocId, QuantizedImpact]]]) -> "PostingLists":
        lengths = [len(postings) for postings in lists]
        offsets = np.concatenate(([0], np.cumsum(lengths, dtype=np.int64))).astype(np.int64)
        flat = [p for postings in lists for p in postings]
        doc_ids = np.array([d for d, _ in flat], dtype=np.int64)
        impacts = np.array([s for _, s in flat], dtype=np.int64)
        if flat and (doc_ids.min() < 0 or impacts.min() < 1 or impacts.max() > config.QUANTIZATION_LEVELS):
            raise CorruptInputError("postings need DocId >= 0 and impact in [1, 255]")
        return cls(offsets=offsets, doc_ids=doc_ids.astype(np.uint32), impacts=impacts.astype(np.uint8))

    def term(self, t: TermId) -> Tuple[np.ndarray, np.ndarray]:
        if t < 0 or t >= self.vocab_size:
            return np.zeros(0, dtype=np.uint32), np.zeros(0, dtype=np.uint8)
        start, end = self.offsets[t], self.offsets[t + 1]
        return self.doc_ids[start:end], self.impacts[start:end]

    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    def term_ids_per_entry(self) -> np.ndarray:
        return np.repeat(np.arange(self.vocab_size, dtype=np.int64), self.lengths())


# ========================================================================================
# SEARCH PARAMETERS AND RESULTS
# ========================================================================================
@dataclass(frozen=True)
class SearchParams:
    """
    Query-time knobs.

    alpha scales the next block's upper bound in the stopping test; beta is the
    fraction of highest-weight query terms kept. alpha = beta = 1 is safe mode.
    """
    k: int = config.SEARCH_CONFIG['k']
    alpha: float = config.SEARCH_CONFIG['alpha']
    beta: float = config.SEARCH_CONFIG['beta']
    bm_mode: str = config.INDEX_CONFIG['bm_mode']
    max_blocks: Optional[int] = config.SEARCH_CONFIG['max_blocks']

    def __post_init__(self):
        if not isinstance(self.k, (int, np.integer)) or self.k < 1:
            raise InvalidArgumentError(f"k must be a positive integer, got {self.k}")
        if not 0 < self.alpha <= 1:
            raise InvalidArgumentError(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0 < self.beta <= 1:
            raise InvalidArgumentError(f"beta must be in (0, 1], got {self.beta}")
        if self.bm_mode not in config.BM_MODES:
            raise InvalidArgumentError(f"bm_mode must be one of {config.BM_MODES}, got {self.bm_mode!r}")
        if self.max_blocks is not None and self.max_blocks < 1:
            raise InvalidArgumentError(f"max_blocks must be >= 1 when set, got {self.max_blocks}")

    @property
    def is_safe(self) -> bool:
        return self.alpha == 1 and self.beta == 1 and self.max_blocks is None


@dataclass(frozen=True)
class TopKResult:
    """Hits ordered by (score descending, DocId ascending); scores are positive."""
    hits: Tuple[Tuple[DocId, int], ...] = ()

    def __len__(self) -> int:
        return len(self.hits)

    def __iter__(self) -> Iterator[Tuple[DocId, int]]:
        return iter(self.hits)

    @property
    def doc_ids(self) -> List[DocId]:
        return [d for d, _ in self.hits]

    @property
    def scores(self) -> List[int]:
        return [s for _, s in self.hits]

    def truncate(self, k: int) -> "TopKResult":
        return TopKResult(self.hits[:k])
