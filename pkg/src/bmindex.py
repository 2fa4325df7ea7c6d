"""
Block-Max Index Module
Per-term, per-block maximum impacts and the weighted aggregation that turns them
into per-block score upper bounds for a query.

Two layouts are supported:
- raw: a dense (V, num_blocks) uint8 matrix, one contiguous row per term
- compressed: per term, the non-zero blocks as delta-encoded, bit-packed block ids
  followed by their impacts as plain bytes
"""
import concurrent.futures
import logging
import struct
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

import config
from core import (
    CorruptInputError,
    InvalidArgumentError,
    PostingLists,
    QuantizedQuery,
    TermId,
    check_accumulator_bound,
)

logger = logging.getLogger(__name__)

UpperBounds = np.ndarray

# count (uint32) + bit width (uint8)
TERM_HEADER = struct.Struct('<IB')


def num_blocks_for(n: int, b: int) -> int:
    return -(-n // b)


def check_block_size(b: int):
    if b not in config.SUPPORTED_BLOCK_SIZES:
        raise InvalidArgumentError(
            f"unsupported block size {b}; expected one of {config.SUPPORTED_BLOCK_SIZES}"
        )


def check_bm_mode(mode: str):
    if mode not in config.BM_MODES:
        raise InvalidArgumentError(f"unsupported bm_mode {mode!r}; expected one of {config.BM_MODES}")


# ========================================================================================
# COMPRESSED TERM CODEC
# ========================================================================================
def encode_term_blocks(block_ids: np.ndarray, impacts: np.ndarray) -> bytes:
    """
    Encode one term's non-zero blocks.

    Layout: header (count, width) | deltas packed LSB-first at ``width`` bits |
    ``count`` impact bytes. The first delta is the first block id itself.
    """
    count = len(block_ids)
    if count == 0:
        return TERM_HEADER.pack(0, 0)
    ids = block_ids.astype(np.int64)
    deltas = np.diff(ids, prepend=0)
    width = int(deltas.max()).bit_length()
    if width:
        bits = ((deltas[:, None] >> np.arange(width, dtype=np.int64)) & 1).astype(np.uint8)
        packed = np.packbits(bits.ravel(), bitorder='little').tobytes()
    else:
        packed = b''
    return TERM_HEADER.pack(count, width) + packed + impacts.astype(np.uint8).tobytes()


def decode_term_blocks(buffer, offset: int = 0) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    Decode one term record starting at ``offset``.

    :return: (block_ids, impacts, offset just past the record)
    """
    if offset + TERM_HEADER.size > len(buffer):
        raise CorruptInputError(f"term header at byte {offset} runs past the block-max data")
    count, width = TERM_HEADER.unpack_from(buffer, offset)
    offset += TERM_HEADER.size
    if count == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.uint8), offset
    packed_len = (count * width + 7) // 8
    end = offset + packed_len + count
    if end > len(buffer):
        raise CorruptInputError(f"term record at byte {offset} runs past the block-max data")
    data = np.frombuffer(buffer, dtype=np.uint8, count=packed_len + count, offset=offset)
    if width:
        bits = np.unpackbits(data[:packed_len], count=count * width, bitorder='little')
        deltas = bits.reshape(count, width).astype(np.int64) @ (np.int64(1) << np.arange(width, dtype=np.int64))
    else:
        deltas = np.zeros(count, dtype=np.int64)
    return np.cumsum(deltas), data[packed_len:].copy(), end


# ========================================================================================
# INDEX
# ========================================================================================
@dataclass(eq=False)
class BlockMaxIndex:
    """
    Block-max impacts for every term.

    Exactly one of ``raw`` (dense uint8 matrix) or ``compressed`` (concatenated
    term records, located through ``term_offsets``) is populated, per ``mode``.
    """
    block_size: int
    num_blocks: int
    vocab_size: int
    mode: str
    raw: Optional[np.ndarray] = None
    compressed: Optional[bytes] = None
    term_offsets: Optional[np.ndarray] = None

    def term_blocks(self, t: TermId) -> Tuple[np.ndarray, np.ndarray]:
        """Sparse view of one term: ascending non-zero block ids and their impacts."""
        if t < 0 or t >= self.vocab_size:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.uint8)
        if self.mode == 'raw':
            row = self.raw[t]
            ids = np.flatnonzero(row)
            return ids, row[ids]
        block_ids, impacts, _ = decode_term_blocks(self.compressed, int(self.term_offsets[t]))
        return block_ids, impacts

    def raw_size_bytes(self) -> int:
        """Impact slots of the dense layout: V x num_blocks."""
        return self.vocab_size * self.num_blocks

    def compressed_size_bytes(self) -> int:
        if self.mode == 'compressed':
            return len(self.compressed)
        return sum(len(encode_term_blocks(*self.term_blocks(t))) for t in range(self.vocab_size))

    def __eq__(self, other) -> bool:
        if not isinstance(other, BlockMaxIndex):
            return NotImplemented
        if (self.block_size, self.num_blocks, self.vocab_size, self.mode) != \
                (other.block_size, other.num_blocks, other.vocab_size, other.mode):
            return False
        if self.mode == 'raw':
            return np.array_equal(self.raw, other.raw)
        return self.compressed == other.compressed and np.array_equal(self.term_offsets, other.term_offsets)


def _validate_postings(postings: PostingLists, n: int):
    docs = postings.doc_ids.astype(np.int64)
    if len(docs) and docs.max() >= n:
        bad = int(np.flatnonzero(docs >= n)[0])
        raise CorruptInputError(f"posting DocId {int(docs[bad])} >= collection size {n}")
    if len(docs) > 1:
        # a posting must exceed its predecessor unless it starts a new term
        increasing = np.diff(docs) > 0
        starts_term = np.zeros(len(docs), dtype=bool)
        starts_term[postings.offsets[:-1][postings.lengths() > 0]] = True
        if not np.all(increasing | starts_term[1:]):
            raise CorruptInputError("posting lists must be sorted by strictly ascending DocId")


def _term_block_maxima(postings: PostingLists, b: int, num_blocks: int):
    """(term, block, max impact) triples for every non-empty (term, block) pair."""
    terms = postings.term_ids_per_entry()
    if len(terms) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0, dtype=np.uint8)
    keys = terms * num_blocks + postings.doc_ids.astype(np.int64) // b
    # keys are non-decreasing because postings are sorted by (term, DocId)
    starts = np.flatnonzero(np.diff(keys, prepend=-1))
    maxima = np.maximum.reduceat(postings.impacts, starts)
    unique_keys = keys[starts]
    return unique_keys // num_blocks, unique_keys % num_blocks, maxima


def build_block_max(postings: PostingLists, n: int, b: int, mode: str = 'raw',
                    index_config: Optional[Dict[str, Any]] = None) -> BlockMaxIndex:
    """
    Build the block-max index from per-term posting lists.

    :param postings: per-term lists sorted by DocId
    :param n: collection size
    :param b: block size, one of SUPPORTED_BLOCK_SIZES
    :param mode: 'raw' | 'compressed'
    :param index_config: overrides for 'parallel_build' / 'build_workers'
    """
    check_block_size(b)
    check_bm_mode(mode)
    _validate_postings(postings, n)
    index_config = index_config or config.INDEX_CONFIG
    num_blocks = num_blocks_for(n, b)
    vocab_size = postings.vocab_size
    terms, blocks, maxima = _term_block_maxima(postings, b, num_blocks)

    if mode == 'raw':
        raw = np.zeros((vocab_size, num_blocks), dtype=np.uint8)
        raw[terms, blocks] = maxima
        logger.info("Built raw block-max index: V=%d, blocks=%d, b=%d", vocab_size, num_blocks, b)
        return BlockMaxIndex(b, num_blocks, vocab_size, mode, raw=raw)

    bounds = np.searchsorted(terms, np.arange(vocab_size + 1))

    def encode(t: int) -> bytes:
        lo, hi = bounds[t], bounds[t + 1]
        return encode_term_blocks(blocks[lo:hi], maxima[lo:hi])

    if index_config.get('parallel_build', False) and vocab_size > 1:
        workers = index_config.get('build_workers', 4)
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
            # map keeps term order, so the output does not depend on scheduling
            records = list(executor.map(encode, range(vocab_size)))
    else:
        records = [encode(t) for t in range(vocab_size)]

    lengths = np.fromiter((len(r) for r in records), dtype=np.int64, count=vocab_size)
    term_offsets = np.concatenate(([0], np.cumsum(lengths))).astype(np.int64)
    compressed = b''.join(records)
    logger.info("Built compressed block-max index: V=%d, blocks=%d, b=%d, %d bytes",
                vocab_size, num_blocks, b, len(compressed))
    return BlockMaxIndex(b, num_blocks, vocab_size, mode, compressed=compressed, term_offsets=term_offsets)


def index_compressed_records(compressed: bytes, vocab_size: int) -> np.ndarray:
    """Recover per-term record offsets by walking the headers."""
    offsets = np.zeros(vocab_size + 1, dtype=np.int64)
    position = 0
    for t in range(vocab_size):
        offsets[t] = position
        if position + TERM_HEADER.size > len(compressed):
            raise CorruptInputError(f"block-max record for term {t} is truncated")
        count, width = TERM_HEADER.unpack_from(compressed, position)
        position += TERM_HEADER.size + (count * width + 7) // 8 + count
    if position != len(compressed):
        raise CorruptInputError(
            f"block-max data holds {len(compressed)} bytes, records account for {position}"
        )
    offsets[vocab_size] = position
    return offsets


def densify_term(bm: BlockMaxIndex, t: TermId) -> np.ndarray:
    """Dense num_blocks-long row of block maxima for ``t``; all zeros for unknown terms."""
    if bm.mode == 'raw' and 0 <= t < bm.vocab_size:
        return bm.raw[t].copy()
    dense = np.zeros(bm.num_blocks, dtype=np.uint8)
    block_ids, impacts = bm.term_blocks(t)
    dense[block_ids] = impacts
    return dense


def compute_upper_bounds(bm: BlockMaxIndex, query: QuantizedQuery,
                         scratch: Optional[np.ndarray] = None) -> UpperBounds:
    """
    Weighted sum of block maxima: ``ub[j] = sum(w * blockmax[t][j])``.

    Out-of-vocabulary terms contribute nothing. ``scratch`` is an optional
    caller-owned uint32 buffer of length num_blocks, reused across queries.
    """
    check_accumulator_bound(query)
    if scratch is None:
        ub = np.zeros(bm.num_blocks, dtype=np.uint32)
    else:
        ub = scratch
        ub[:] = 0
    for t, w in query:
        if t >= bm.vocab_size:
            logger.debug("Query term %d is outside the vocabulary; ignored", t)
            continue
        if bm.mode == 'raw':
            ub += bm.raw[t].astype(np.uint32) * np.uint32(w)
        else:
            block_ids, impacts = bm.term_blocks(t)
            # block ids are unique within a term, so fancy-index addition is exact
            ub[block_ids] += impacts.astype(np.uint32) * np.uint32(w)
    return ub
