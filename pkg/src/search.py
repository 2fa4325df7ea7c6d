"""
Search Module
The block-max pruning query driver:

1. drop the lowest-weight query terms (beta)
2. compute per-block upper bounds from the block-max index
3. estimate a safe top-k threshold from single-term quantiles
4. counting-sort the blocks whose bound reaches the estimate
5. evaluate blocks in bound order against the block-forward index, keeping a
   size-k heap, until the heap threshold exceeds alpha times the next bound
"""
import bisect
import heapq
import logging
import math
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

import config
from core import (
    InvalidArgumentError,
    PostingLists,
    QuantizedQuery,
    QuantizedVector,
    SearchParams,
    TopKResult,
    check_accumulator_bound,
)
from bmindex import BlockMaxIndex, UpperBounds, compute_upper_bounds
from fwdindex import BlockForwardIndex, score_block

logger = logging.getLogger(__name__)

# tolerance for beta * |q| landing a hair above an integer
_BETA_EPSILON = 1e-9


# ========================================================================================
# TERM QUANTILES
# ========================================================================================
@dataclass(eq=False)
class TermQuantiles:
    """
    ``values[t, i]`` is the ranks[i]-th largest impact in term t's posting list,
    or 0 when the list holds fewer than ranks[i] postings.
    """
    ranks: Tuple[int, ...]
    values: np.ndarray   # uint8, shape (V, len(ranks))

    @property
    def vocab_size(self) -> int:
        return self.values.shape[0]

    def impact_at(self, t: int, rank: int) -> Optional[int]:
        i = self.ranks.index(rank)
        if t >= self.vocab_size or self.values[t, i] == 0:
            return None
        return int(self.values[t, i])

    def __eq__(self, other) -> bool:
        if not isinstance(other, TermQuantiles):
            return NotImplemented
        return tuple(self.ranks) == tuple(other.ranks) and np.array_equal(self.values, other.values)


def check_quantile_ranks(ranks: Sequence[int]) -> Tuple[int, ...]:
    ranks = tuple(int(r) for r in ranks)
    if not ranks or any(r < 1 for r in ranks) or len(set(ranks)) != len(ranks):
        raise InvalidArgumentError(f"quantile ranks must be distinct positive integers, got {ranks}")
    return tuple(sorted(ranks))


def build_term_quantiles(postings: PostingLists,
                         ranks: Sequence[int] = config.INDEX_CONFIG['quantile_ranks']) -> TermQuantiles:
    """Record the impact at each fixed rank of every posting list."""
    ranks = check_quantile_ranks(ranks)
    vocab_size = postings.vocab_size
    values = np.zeros((vocab_size, len(ranks)), dtype=np.uint8)
    lengths = postings.lengths()
    if len(postings.impacts):
        term_of = postings.term_ids_per_entry()
        # impacts descending inside each term
        order = np.lexsort((-postings.impacts.astype(np.int64), term_of))
        sorted_impacts = postings.impacts[order]
        for i, r in enumerate(ranks):
            long_enough = np.flatnonzero(lengths >= r)
            values[long_enough, i] = sorted_impacts[postings.offsets[long_enough] + r - 1]
    return TermQuantiles(ranks=ranks, values=values)


def estimate_threshold(tq: TermQuantiles, query: QuantizedQuery, k: int) -> int:
    """
    Lower bound on the k-th best score: max over query terms of weight times the
    term's impact at the smallest stored rank >= k. Returns 0 when no term has
    such a quantile.
    """
    i = bisect.bisect_left(tq.ranks, k)
    if i == len(tq.ranks):
        return 0
    best = 0
    for t, w in query:
        if t < tq.vocab_size:
            best = max(best, w * int(tq.values[t, i]))
    return best


# ========================================================================================
# QUERY TERM PRUNING
# ========================================================================================
def prune_query_terms(query: QuantizedQuery, beta: float) -> QuantizedQuery:
    """Keep the ceil(beta * |q|) heaviest terms; ties keep the smaller TermId."""
    if not 0 < beta <= 1:
        raise InvalidArgumentError(f"beta must be in (0, 1], got {beta}")
    if beta == 1 or len(query) == 0:
        return query
    keep = max(1, math.ceil(beta * len(query) - _BETA_EPSILON))
    heaviest = sorted(query.entries, key=lambda e: (-e[1], e[0]))[:keep]
    return QuantizedVector(tuple(sorted(heaviest)))


# ========================================================================================
# PARTIAL SORT
# ========================================================================================
@dataclass(frozen=True, eq=False)
class CandidateQueue:
    """Blocks ordered by (upper bound desc, block id asc)."""
    block_ids: np.ndarray
    bounds: np.ndarray

    def __len__(self) -> int:
        return len(self.block_ids)

    def __iter__(self) -> Iterator[Tuple[int, int]]:
        return zip(self.block_ids.tolist(), self.bounds.tolist())

    def as_list(self) -> List[Tuple[int, int]]:
        return list(self)


def _empty_queue() -> CandidateQueue:
    return CandidateQueue(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))


def partial_sort_blocks(ub: UpperBounds, threshold: int,
                        max_buckets: int = config.COUNTING_SORT_MAX_BUCKETS) -> CandidateQueue:
    """
    Order the blocks with ``ub >= threshold`` and ``ub > 0`` by bound, descending.

    Counting sort over [threshold, max_ub]; falls back to a comparison sort when
    that range needs more than ``max_buckets`` buckets.
    """
    floor = max(int(threshold), 1)
    candidates = np.flatnonzero(ub >= floor)
    if len(candidates) == 0:
        return _empty_queue()
    bounds = ub[candidates].astype(np.int64)
    max_ub = int(bounds.max())
    num_buckets = max_ub - floor + 1

    if num_buckets > max_buckets:
        logger.debug("Counting sort needs %d buckets; using comparison sort", num_buckets)
        order = np.lexsort((candidates, -bounds))
        return CandidateQueue(candidates[order], bounds[order])

    # bucket 0 holds max_ub, so ascending buckets give descending bounds
    keys = max_ub - bounds
    counts = np.bincount(keys, minlength=num_buckets)
    next_slot = (np.cumsum(counts) - counts).tolist()
    ordered = [0] * len(candidates)
    # candidates are visited in ascending block id, which keeps ties in block order
    for block_id, key in zip(candidates.tolist(), keys.tolist()):
        ordered[next_slot[key]] = block_id
        next_slot[key] += 1
    block_ids = np.array(ordered, dtype=np.int64)
    return CandidateQueue(block_ids, ub[block_ids].astype(np.int64))


# ========================================================================================
# QUERY DRIVER
# ========================================================================================
@dataclass
class SearchStats:
    blocks_total: int = 0
    candidate_blocks: int = 0
    blocks_evaluated: int = 0
    threshold_estimate: int = 0
    final_threshold: int = 0
    query_terms: int = 0
    kept_terms: int = 0
    stop_reason: str = 'exhausted'   # 'exhausted' | 'threshold' | 'budget'


@dataclass
class SearchScratch:
    """Per-thread buffers reused across queries."""
    upper_bounds: np.ndarray
    accumulators: np.ndarray

    @classmethod
    def for_index(cls, bm: BlockMaxIndex) -> "SearchScratch":
        return cls(
            upper_bounds=np.zeros(bm.num_blocks, dtype=np.uint32),
            accumulators=np.zeros(bm.block_size, dtype=np.uint32),
        )


class TopKHeap:
    """
    Size-k min-heap over (score, -DocId): the root is the worst held hit under
    the (score desc, DocId asc) order.
    """

    def __init__(self, k: int):
        self.k = k
        self.heap: List[Tuple[int, int]] = []

    def threshold(self) -> int:
        return self.heap[0][0] if len(self.heap) == self.k else 0

    def offer(self, doc_id: int, score: int):
        entry = (score, -doc_id)
        if len(self.heap) < self.k:
            heapq.heappush(self.heap, entry)
        elif entry > self.heap[0]:
            heapq.heapreplace(self.heap, entry)

    def offer_block(self, doc_ids: np.ndarray, scores: np.ndarray):
        if len(self.heap) == self.k:
            keep = scores >= self.heap[0][0]
            doc_ids, scores = doc_ids[keep], scores[keep]
        for doc_id, score in zip(doc_ids.tolist(), scores.tolist()):
            self.offer(doc_id, score)

    def result(self) -> TopKResult:
        ranked = sorted(self.heap, key=lambda e: (-e[0], -e[1]))
        return TopKResult(tuple((-neg_doc, score) for score, neg_doc in ranked))


def _check_compatible(bm: BlockMaxIndex, bfi: BlockForwardIndex, params: SearchParams):
    if bm.block_size != bfi.block_size or bm.num_blocks != bfi.num_blocks:
        raise InvalidArgumentError(
            f"block-max index (b={bm.block_size}, blocks={bm.num_blocks}) does not match "
            f"block-forward index (b={bfi.block_size}, blocks={bfi.num_blocks})"
        )
    if params.bm_mode != bm.mode:
        raise InvalidArgumentError(f"search asked for bm_mode={params.bm_mode!r}, index is {bm.mode!r}")


def search_with_stats(bm: BlockMaxIndex, bfi: BlockForwardIndex, tq: TermQuantiles,
                      query: QuantizedQuery, params: SearchParams,
                      scratch: Optional[SearchScratch] = None) -> Tuple[TopKResult, SearchStats]:
    """Run one query and report how much of the index it touched."""
    _check_compatible(bm, bfi, params)
    check_accumulator_bound(query)
    stats = SearchStats(blocks_total=bm.num_blocks, query_terms=len(query))

    pruned = prune_query_terms(query, params.beta)
    stats.kept_terms = len(pruned)
    if len(pruned) == 0 or bm.num_blocks == 0:
        return TopKResult(), stats

    ub = compute_upper_bounds(bm, pruned, scratch.upper_bounds if scratch else None)
    tau = estimate_threshold(tq, pruned, params.k)
    queue = partial_sort_blocks(ub, tau)
    stats.threshold_estimate = tau
    stats.candidate_blocks = len(queue)

    heap = TopKHeap(params.k)
    accumulators = scratch.accumulators if scratch else np.zeros(bfi.block_size, dtype=np.uint32)
    for block_id, bound in queue:
        if heap.threshold() > params.alpha * bound:
            stats.stop_reason = 'threshold'
            break
        if params.max_blocks is not None and stats.blocks_evaluated >= params.max_blocks:
            stats.stop_reason = 'budget'
            break
        doc_ids, scores = score_block(bfi, block_id, pruned, accumulators)
        heap.offer_block(doc_ids, scores)
        stats.blocks_evaluated += 1

    stats.final_threshold = heap.threshold()
    logger.debug("Query done: %d/%d candidate blocks evaluated, tau=%d, theta=%d, stop=%s",
                 stats.blocks_evaluated, stats.candidate_blocks, tau,
                 stats.final_threshold, stats.stop_reason)
    return heap.result(), stats


def search(bm: BlockMaxIndex, bfi: BlockForwardIndex, tq: TermQuantiles,
           query: QuantizedQuery, params: SearchParams,
           scratch: Optional[SearchScratch] = None) -> TopKResult:
    result, _ = search_with_stats(bm, bfi, tq, query, params, scratch)
    return result
