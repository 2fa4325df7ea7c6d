"""
Block-Forward Index Module
Hybrid of a forward and an inverted index: documents are grouped into blocks of b
consecutive DocIds, and each block keeps a sorted term directory pointing at short
local posting lists of (local doc, impact).
"""
import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple, Union

import numpy as np

from core import (
    CorruptInputError,
    DocId,
    InvalidArgumentError,
    QuantizedCollection,
    QuantizedQuery,
    QuantizedVector,
    TermId,
)
from bmindex import check_block_size, num_blocks_for

logger = logging.getLogger(__name__)

Documents = Union[QuantizedCollection, Iterable[Tuple[DocId, QuantizedVector]]]


@dataclass(frozen=True, eq=False)
class BlockEntry:
    """One block: sorted term directory plus the concatenated local posting lists."""
    terms: np.ndarray             # uint32, strictly ascending
    posting_offsets: np.ndarray   # int64, len(terms) + 1, relative to local_docs
    local_docs: np.ndarray        # uint8, < b
    impacts: np.ndarray           # uint8, >= 1

    def postings(self, t: TermId) -> List[Tuple[int, int]]:
        i = int(np.searchsorted(self.terms, t))
        if i == len(self.terms) or self.terms[i] != t:
            return []
        lo, hi = self.posting_offsets[i], self.posting_offsets[i + 1]
        return [(int(d), int(s)) for d, s in zip(self.local_docs[lo:hi], self.impacts[lo:hi])]


@dataclass(eq=False)
class BlockForwardIndex:
    """
    All blocks, stored as flat arrays.

    Block j owns directory entries ``block_offsets[j]:block_offsets[j+1]`` of
    ``terms``; directory entry e owns postings ``posting_offsets[e]:posting_offsets[e+1]``.
    """
    block_size: int
    n: int
    block_offsets: np.ndarray
    terms: np.ndarray
    posting_offsets: np.ndarray
    local_docs: np.ndarray
    impacts: np.ndarray

    @property
    def num_blocks(self) -> int:
        return len(self.block_offsets) - 1

    def directory_entries(self) -> int:
        """Total term-directory entries over all blocks."""
        return len(self.terms)

    def block(self, j: int) -> BlockEntry:
        self._check_block(j)
        lo, hi = self.block_offsets[j], self.block_offsets[j + 1]
        base = self.posting_offsets[lo]
        end = self.posting_offsets[hi]
        return BlockEntry(
            terms=self.terms[lo:hi],
            posting_offsets=self.posting_offsets[lo:hi + 1] - base,
            local_docs=self.local_docs[base:end],
            impacts=self.impacts[base:end],
        )

    def _check_block(self, j: int):
        if not 0 <= j < self.num_blocks:
            raise InvalidArgumentError(f"block id {j} outside [0, {self.num_blocks})")

    def __eq__(self, other) -> bool:
        if not isinstance(other, BlockForwardIndex):
            return NotImplemented
        return (self.block_size == other.block_size and self.n == other.n
                and all(np.array_equal(getattr(self, name), getattr(other, name))
                        for name in ('block_offsets', 'terms', 'posting_offsets', 'local_docs', 'impacts')))


def build_block_forward(documents: Documents, n: int, b: int) -> BlockForwardIndex:
    """
    Transpose quantized documents into per-block term directories.

    Document d lands in block ``d // b`` with local id ``d % b``.
    """
    check_block_size(b)
    if not isinstance(documents, QuantizedCollection):
        documents = QuantizedCollection.from_documents(documents, n=n)
    elif documents.n != n:
        raise CorruptInputError(f"collection holds {documents.n} documents, expected {n}")

    docs = documents.doc_ids_per_entry()
    terms = documents.term_ids.astype(np.int64)
    blocks = docs // b
    local = docs % b
    order = np.lexsort((local, terms, blocks))
    blocks, terms, local = blocks[order], terms[order], local[order]
    impacts = documents.impacts[order]

    num_blocks = num_blocks_for(n, b)
    if len(terms):
        is_new_entry = np.ones(len(terms), dtype=bool)
        is_new_entry[1:] = (blocks[1:] != blocks[:-1]) | (terms[1:] != terms[:-1])
        entry_starts = np.flatnonzero(is_new_entry)
    else:
        entry_starts = np.zeros(0, dtype=np.int64)
    entry_blocks = blocks[entry_starts]
    block_offsets = np.searchsorted(entry_blocks, np.arange(num_blocks + 1)).astype(np.int64)
    posting_offsets = np.concatenate((entry_starts, [len(terms)])).astype(np.int64)

    logger.info("Built block-forward index: n=%d, b=%d, blocks=%d, directory entries=%d",
                n, b, num_blocks, len(entry_starts))
    return BlockForwardIndex(
        block_size=b,
        n=n,
        block_offsets=block_offsets,
        terms=terms[entry_starts].astype(np.uint32),
        posting_offsets=posting_offsets,
        local_docs=local.astype(np.uint8),
        impacts=impacts.astype(np.uint8),
    )


def _concat_ranges(starts: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Indices of the ranges [starts[i], starts[i] + lengths[i]) laid end to end."""
    total = int(lengths.sum())
    shifts = np.repeat(starts - (np.cumsum(lengths) - lengths), lengths)
    return np.arange(total, dtype=np.int64) + shifts


def score_block(bfi: BlockForwardIndex, j: int, query: QuantizedQuery,
                accumulators: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Exact scores for every document in block j with a positive score.

    :return: (DocIds ascending, scores) as int64 arrays
    """
    bfi._check_block(j)
    b = bfi.block_size
    acc = accumulators if accumulators is not None else np.zeros(b, dtype=np.uint32)
    acc[:b] = 0
    lo, hi = bfi.block_offsets[j], bfi.block_offsets[j + 1]
    if len(query) == 0 or lo == hi:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty

    query_terms = query.term_ids
    query_weights = query.weights
    # merge of two sorted, duplicate-free term lists
    _, query_pos, dir_pos = np.intersect1d(query_terms, bfi.terms[lo:hi],
                                           assume_unique=True, return_indices=True)
    if len(query_pos) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty

    entries = lo + dir_pos
    starts = bfi.posting_offsets[entries]
    lengths = bfi.posting_offsets[entries + 1] - starts
    postings = _concat_ranges(starts, lengths)
    contributions = np.repeat(query_weights[query_pos], lengths) * bfi.impacts[postings]
    np.add.at(acc, bfi.local_docs[postings], contributions.astype(np.uint32))

    local = np.flatnonzero(acc[:b])
    return j * b + local, acc[local].astype(np.int64)


def evaluate_block(bfi: BlockForwardIndex, j: int, query: QuantizedQuery,
                   accumulators: Optional[np.ndarray] = None) -> List[Tuple[DocId, int]]:
    """Score block j against ``query``; returns (DocId, score) for docs scoring > 0."""
    doc_ids, scores = score_block(bfi, j, query, accumulators)
    return [(int(d), int(s)) for d, s in zip(doc_ids, scores)]


def reconstruct_collection(bfi: BlockForwardIndex, vocab_size: int) -> QuantizedCollection:
    """Rebuild the quantized documents from the block postings."""
    entry_blocks = np.repeat(np.arange(bfi.num_blocks, dtype=np.int64), np.diff(bfi.block_offsets))
    posting_entries = np.repeat(np.arange(len(bfi.terms), dtype=np.int64), np.diff(bfi.posting_offsets))
    docs = entry_blocks[posting_entries] * bfi.block_size + bfi.local_docs.astype(np.int64)
    terms = bfi.terms[posting_entries].astype(np.int64)
    order = np.lexsort((terms, docs))
    lengths = np.bincount(docs, minlength=bfi.n) if len(docs) else np.zeros(bfi.n, dtype=np.int64)
    return QuantizedCollection(
        doc_offsets=np.concatenate(([0], np.cumsum(lengths))).astype(np.int64),
        term_ids=terms[order].astype(np.uint32),
        impacts=bfi.impacts[order].astype(np.uint8),
        vocab_size=vocab_size,
    )
