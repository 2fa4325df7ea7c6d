"""
Storage Module
Collection ingestion (JSONL documents, optional DocId permutation) and the versioned
binary index file holding lexicons, block-max, block-forward and term-quantile
sections.

File layout (little-endian):
    header   magic "BMPI" | version u16 | b u16 | n u64 | V u64 | quantizer max f64 |
             bm_mode u8 | section count u16
    table    per section: id u16 | offset u64 | length u64 | blake2b-64 checksum u64
    sections lexicons, block-max, block-forward, term-quantiles
"""
import hashlib
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from core import (
    BMPError,
    CorruptInputError,
    InvalidArgumentError,
    QuantizedCollection,
    Quantizer,
    SparseVector,
    fit_quantizer,
)
from bmindex import BlockMaxIndex, index_compressed_records
from fwdindex import BlockForwardIndex
from file_utils import MalformedRecordError, PermutationError, read_permutation, read_vector_records
from search import TermQuantiles

logger = logging.getLogger(__name__)

MAGIC = b'BMPI'
FORMAT_VERSION = 1

HEADER = struct.Struct('<4sHHQQdBH')
SECTION_ENTRY = struct.Struct('<HQQQ')
BLOCK_MAX_HEADER = struct.Struct('<IIB')
BLOCK_FORWARD_HEADER = struct.Struct('<HQQQ')
QUANTILES_HEADER = struct.Struct('<IB')
U32 = struct.Struct('<I')

SECTION_LEXICONS = 1
SECTION_BLOCK_MAX = 2
SECTION_BLOCK_FORWARD = 3
SECTION_TERM_QUANTILES = 4

SECTION_NAMES = {
    SECTION_LEXICONS:       'lexicons',
    SECTION_BLOCK_MAX:      'block_max',
    SECTION_BLOCK_FORWARD:  'block_forward',
    SECTION_TERM_QUANTILES: 'term_quantiles',
}

BM_MODE_FLAGS = {'raw': 0, 'compressed': 1}


# ========================================================================================
# ERRORS
# ========================================================================================
class IndexFormatError(BMPError):
    """The index file cannot be read."""


class TruncatedIndexError(IndexFormatError):
    pass


class BadMagicError(IndexFormatError):
    pass


class UnsupportedVersionError(IndexFormatError):
    pass


class ChecksumMismatchError(IndexFormatError):
    pass


# ========================================================================================
# MANIFEST AND INGESTION
# ========================================================================================
@dataclass
class CollectionManifest:
    n: int = 0
    vocab_size: int = 0
    quantizer: Optional[Quantizer] = None
    term_lexicon: Dict[str, int] = field(default_factory=dict)
    doc_lexicon: Dict[str, int] = field(default_factory=dict)

    def doc_names(self) -> List[str]:
        """External document names indexed by DocId."""
        names = [''] * self.n
        for name, doc_id in self.doc_lexicon.items():
            names[doc_id] = name
        return names

    def vectorize(self, term_weights: Dict[str, float]) -> SparseVector:
        """Map string terms to TermIds; terms outside the lexicon are dropped."""
        pairs = []
        for term, weight in term_weights.items():
            term_id = self.term_lexicon.get(term)
            if term_id is None:
                logger.debug("Term %r is not in the vocabulary; dropped", term)
                continue
            pairs.append((term_id, weight))
        return SparseVector.from_pairs(pairs)


def _apply_permutation(external_ids: List[str], permutation: List[str]) -> List[int]:
    """DocId of each input document (by input position) under ``permutation``."""
    position = {name: i for i, name in enumerate(external_ids)}
    if len(permutation) != len(external_ids):
        raise PermutationError(
            f"permutation lists {len(permutation)} ids, collection has {len(external_ids)} documents"
        )
    doc_ids = [-1] * len(external_ids)
    for doc_id, name in enumerate(permutation):
        i = position.get(name)
        if i is None:
            raise PermutationError(f"permutation line {doc_id + 1}: unknown document {name!r}")
        if doc_ids[i] != -1:
            raise PermutationError(f"permutation line {doc_id + 1}: document {name!r} listed twice")
        doc_ids[i] = doc_id
    return doc_ids


def ingest_collection(path, reorder=None) -> Tuple[CollectionManifest, QuantizedCollection]:
    """
    Read a JSONL documents file and quantize it.

    TermIds follow first occurrence; the quantizer is fitted on the largest weight
    in the collection. With ``reorder`` (a permutation file, line i = external id
    of DocId i) DocIds follow the permutation, otherwise input order.
    """
    permutation = read_permutation(reorder) if reorder is not None else None
    manifest, collection = ingest_records(read_vector_records(path), source=path, permutation=permutation)
    if reorder is not None:
        logger.info("Applied permutation from %s", reorder)
    return manifest, collection


def ingest_records(records: Iterable[Tuple[int, str, Dict[str, float]]], source='<memory>',
                   permutation: Optional[List[str]] = None) -> Tuple[CollectionManifest, QuantizedCollection]:
    """
    Quantize (line number, external id, term → weight) records.

    :param source: name used in error messages
    :param permutation: external id of each DocId, in DocId order
    """
    term_lexicon: Dict[str, int] = {}
    external_ids: List[str] = []
    seen_ids: Dict[str, int] = {}
    doc_terms: List[List[int]] = []
    doc_weights: List[List[float]] = []

    for line_number, external_id, vector in records:
        if external_id in seen_ids:
            raise MalformedRecordError(source, line_number,
                                       f"duplicate document id {external_id!r} (first on line {seen_ids[external_id]})")
        seen_ids[external_id] = line_number
        terms, weights = [], []
        for term, weight in vector.items():
            term_id = term_lexicon.setdefault(term, len(term_lexicon))
            if weight > 0:
                terms.append(term_id)
                weights.append(weight)
        external_ids.append(external_id)
        doc_terms.append(terms)
        doc_weights.append(weights)

    n = len(external_ids)
    if permutation is not None:
        doc_ids = _apply_permutation(external_ids, permutation)
    else:
        doc_ids = list(range(n))

    lengths = np.zeros(n, dtype=np.int64)
    for i, terms in enumerate(doc_terms):
        lengths[doc_ids[i]] = len(terms)
    if n and not lengths.all():
        logger.warning("%d documents have empty vectors and will never match", int((lengths == 0).sum()))

    by_doc = [0] * n
    for i, doc_id in enumerate(doc_ids):
        by_doc[doc_id] = i
    flat_terms = np.fromiter((t for i in by_doc for t in doc_terms[i]), dtype=np.int64, count=int(lengths.sum()))
    flat_weights = np.fromiter((w for i in by_doc for w in doc_weights[i]), dtype=np.float64, count=int(lengths.sum()))
    doc_offsets = np.concatenate(([0], np.cumsum(lengths))).astype(np.int64)
    entry_docs = np.repeat(np.arange(n, dtype=np.int64), lengths)
    order = np.lexsort((flat_terms, entry_docs))

    max_weight = float(flat_weights.max()) if len(flat_weights) else 0.0
    quantizer = fit_quantizer(max_weight) if max_weight > 0 else None
    impacts = quantizer.quantize_many(flat_weights[order]) if quantizer else np.zeros(0, dtype=np.uint8)

    manifest = CollectionManifest(
        n=n,
        vocab_size=len(term_lexicon),
        quantizer=quantizer,
        term_lexicon=term_lexicon,
        doc_lexicon={external_ids[i]: doc_ids[i] for i in range(n)},
    )
    collection = QuantizedCollection(
        doc_offsets=doc_offsets,
        term_ids=flat_terms[order].astype(np.uint32),
        impacts=impacts,
        vocab_size=len(term_lexicon),
    )
    logger.info("Ingested %d documents, %d terms, max weight %.4f from %s",
                n, len(term_lexicon), max_weight, source)
    return manifest, collection


# ========================================================================================
# SECTION CODECS
# ========================================================================================
def _encode_strings(strings: List[str]) -> bytes:
    parts = [U32.pack(len(strings))]
    for s in strings:
        data = s.encode('utf-8')
        parts.append(U32.pack(len(data)))
        parts.append(data)
    return b''.join(parts)


def _decode_strings(buffer: bytes, offset: int) -> Tuple[List[str], int]:
    (count,) = U32.unpack_from(buffer, offset)
    offset += U32.size
    strings = []
    for _ in range(count):
        (length,) = U32.unpack_from(buffer, offset)
        offset += U32.size
        strings.append(buffer[offset:offset + length].decode('utf-8'))
        offset += length
    return strings, offset


def _encode_lexicons(manifest: CollectionManifest) -> bytes:
    terms = [''] * manifest.vocab_size
    for term, term_id in manifest.term_lexicon.items():
        terms[term_id] = term
    return _encode_strings(terms) + _encode_strings(manifest.doc_names())


def _decode_lexicons(buffer: bytes) -> Tuple[Dict[str, int], Dict[str, int]]:
    terms, offset = _decode_strings(buffer, 0)
    docs, offset = _decode_strings(buffer, offset)
    if offset != len(buffer):
        raise CorruptInputError("trailing bytes after lexicons")
    return {t: i for i, t in enumerate(terms)}, {d: i for i, d in enumerate(docs)}


def _encode_block_max(bm: BlockMaxIndex) -> bytes:
    header = BLOCK_MAX_HEADER.pack(bm.vocab_size, bm.num_blocks, BM_MODE_FLAGS[bm.mode])
    if bm.mode == 'raw':
        return header + np.ascontiguousarray(bm.raw, dtype=np.uint8).tobytes()
    return header + bm.compressed


def _decode_block_max(buffer: bytes, block_size: int) -> BlockMaxIndex:
    vocab_size, num_blocks, flag = BLOCK_MAX_HEADER.unpack_from(buffer, 0)
    body = buffer[BLOCK_MAX_HEADER.size:]
    if flag == BM_MODE_FLAGS['raw']:
        if len(body) != vocab_size * num_blocks:
            raise CorruptInputError(f"raw block-max holds {len(body)} bytes, expected {vocab_size * num_blocks}")
        raw = np.frombuffer(body, dtype=np.uint8, count=vocab_size * num_blocks).reshape(vocab_size, num_blocks).copy()
        return BlockMaxIndex(block_size, num_blocks, vocab_size, 'raw', raw=raw)
    if flag == BM_MODE_FLAGS['compressed']:
        offsets = index_compressed_records(body, vocab_size)
        return BlockMaxIndex(block_size, num_blocks, vocab_size, 'compressed',
                             compressed=bytes(body), term_offsets=offsets)
    raise CorruptInputError(f"unknown bm_mode flag {flag}")


def _encode_block_forward(bfi: BlockForwardIndex) -> bytes:
    header = BLOCK_FORWARD_HEADER.pack(bfi.block_size, bfi.n, len(bfi.terms), len(bfi.local_docs))
    return b''.join([
        header,
        bfi.block_offsets.astype('<u8').tobytes(),
        bfi.terms.astype('<u4').tobytes(),
        bfi.posting_offsets.astype('<u8').tobytes(),
        bfi.local_docs.astype(np.uint8).tobytes(),
        bfi.impacts.astype(np.uint8).tobytes(),
    ])


def _decode_block_forward(buffer: bytes, num_blocks: int) -> BlockForwardIndex:
    block_size, n, entries, postings = BLOCK_FORWARD_HEADER.unpack_from(buffer, 0)
    offset = BLOCK_FORWARD_HEADER.size

    def take(dtype, count):
        nonlocal offset
        array = np.frombuffer(buffer, dtype=dtype, count=count, offset=offset)
        offset += array.nbytes
        return array

    expected = offset + 8 * (num_blocks + 1) + 4 * entries + 8 * (entries + 1) + 2 * postings
    if expected != len(buffer):
        raise CorruptInputError(f"block-forward section holds {len(buffer)} bytes, expected {expected}")
    return BlockForwardIndex(
        block_size=block_size,
        n=n,
        block_offsets=take('<u8', num_blocks + 1).astype(np.int64),
        terms=take('<u4', entries).astype(np.uint32),
        posting_offsets=take('<u8', entries + 1).astype(np.int64),
        local_docs=take(np.uint8, postings).copy(),
        impacts=take(np.uint8, postings).copy(),
    )


def _encode_quantiles(tq: TermQuantiles) -> bytes:
    header = QUANTILES_HEADER.pack(tq.vocab_size, len(tq.ranks))
    ranks = np.array(tq.ranks, dtype='<u4').tobytes()
    return header + ranks + np.ascontiguousarray(tq.values, dtype=np.uint8).tobytes()


def _decode_quantiles(buffer: bytes) -> TermQuantiles:
    vocab_size, num_ranks = QUANTILES_HEADER.unpack_from(buffer, 0)
    offset = QUANTILES_HEADER.size
    if len(buffer) != offset + 4 * num_ranks + vocab_size * num_ranks:
        raise CorruptInputError("term-quantile section has the wrong size")
    ranks = tuple(int(r) for r in np.frombuffer(buffer, dtype='<u4', count=num_ranks, offset=offset))
    offset += 4 * num_ranks
    values = np.frombuffer(buffer, dtype=np.uint8, count=vocab_size * num_ranks, offset=offset).reshape(vocab_size, num_ranks).copy()
    return TermQuantiles(ranks=ranks, values=values)


def checksum(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), 'little')


# ========================================================================================
# READ / WRITE
# ========================================================================================
def _check_consistent(manifest: CollectionManifest, bm: BlockMaxIndex,
                      bfi: BlockForwardIndex, tq: TermQuantiles):
    if bm.block_size != bfi.block_size or bm.num_blocks != bfi.num_blocks:
        raise InvalidArgumentError("block-max and block-forward indexes disagree on b or block count")
    if manifest.n != bfi.n:
        raise InvalidArgumentError(f"manifest n={manifest.n} but block-forward index has n={bfi.n}")
    if not manifest.vocab_size == bm.vocab_size == tq.vocab_size:
        raise InvalidArgumentError("manifest, block-max and term quantiles disagree on vocabulary size")


def _encode_sections(manifest: CollectionManifest, bm: BlockMaxIndex, bfi: BlockForwardIndex,
                     tq: TermQuantiles) -> List[Tuple[int, bytes]]:
    _check_consistent(manifest, bm, bfi, tq)
    return [
        (SECTION_LEXICONS, _encode_lexicons(manifest)),
        (SECTION_BLOCK_MAX, _encode_block_max(bm)),
        (SECTION_BLOCK_FORWARD, _encode_block_forward(bfi)),
        (SECTION_TERM_QUANTILES, _encode_quantiles(tq)),
    ]


def section_sizes(manifest: CollectionManifest, bm: BlockMaxIndex, bfi: BlockForwardIndex,
                  tq: TermQuantiles) -> Dict[str, int]:
    """Serialized byte size of every section, keyed by section name."""
    return {SECTION_NAMES[section_id]: len(data)
            for section_id, data in _encode_sections(manifest, bm, bfi, tq)}


def write_index(manifest: CollectionManifest, bm: BlockMaxIndex, bfi: BlockForwardIndex,
                tq: TermQuantiles, path) -> Dict[str, int]:
    """
    Serialize all structures to ``path``.

    :return: byte size of every section, keyed by section name
    """
    sections = _encode_sections(manifest, bm, bfi, tq)
    max_score = manifest.quantizer.max_raw_score if manifest.quantizer else 0.0
    header = HEADER.pack(MAGIC, FORMAT_VERSION, bm.block_size, manifest.n, manifest.vocab_size,
                         max_score, BM_MODE_FLAGS[bm.mode], len(sections))

    offset = HEADER.size + SECTION_ENTRY.size * len(sections)
    table = []
    for section_id, data in sections:
        table.append(SECTION_ENTRY.pack(section_id, offset, len(data), checksum(data)))
        offset += len(data)

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(header)
        f.write(b''.join(table))
        for _, data in sections:
            f.write(data)

    sizes = {SECTION_NAMES[section_id]: len(data) for section_id, data in sections}
    logger.info("Wrote index %s (%d bytes): %s", path, offset, sizes)
    return sizes


def read_sections(path) -> Tuple[tuple, Dict[int, bytes]]:
    """Validate the envelope of an index file and return (header fields, section id → bytes)."""
    with open(path, 'rb') as f:
        data = f.read()
    if len(data) < len(MAGIC):
        raise TruncatedIndexError(f"{path}: file too short for the magic number")
    if data[:len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {data[:len(MAGIC)]!r}")
    if len(data) < HEADER.size:
        raise TruncatedIndexError(f"{path}: file too short for the header")
    header = HEADER.unpack_from(data, 0)
    version, section_count = header[1], header[7]
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    table_end = HEADER.size + SECTION_ENTRY.size * section_count
    if len(data) < table_end:
        raise TruncatedIndexError(f"{path}: file too short for the section table")

    sections: Dict[int, bytes] = {}
    previous_end = table_end
    for i in range(section_count):
        section_id, offset, length, expected = SECTION_ENTRY.unpack_from(data, HEADER.size + i * SECTION_ENTRY.size)
        if offset < previous_end:
            raise IndexFormatError(f"{path}: section {section_id} overlaps its predecessor")
        if offset + length > len(data):
            raise TruncatedIndexError(
                f"{path}: section {SECTION_NAMES.get(section_id, section_id)} ends at byte "
                f"{offset + length}, file has {len(data)}"
            )
        payload = data[offset:offset + length]
        if checksum(payload) != expected:
            raise ChecksumMismatchError(f"{path}: checksum mismatch in section {SECTION_NAMES.get(section_id, section_id)}")
        sections[section_id] = payload
        previous_end = offset + length
    missing = set(SECTION_NAMES) - set(sections)
    if missing:
        raise IndexFormatError(f"{path}: missing sections {sorted(SECTION_NAMES[m] for m in missing)}")
    return header, sections


def read_index(path) -> Tuple[CollectionManifest, BlockMaxIndex, BlockForwardIndex, TermQuantiles]:
    header, sections = read_sections(path)
    _, _, block_size, n, vocab_size, max_score, mode_flag, _ = header
    try:
        term_lexicon, doc_lexicon = _decode_lexicons(sections[SECTION_LEXICONS])
        bm = _decode_block_max(sections[SECTION_BLOCK_MAX], block_size)
        bfi = _decode_block_forward(sections[SECTION_BLOCK_FORWARD], bm.num_blocks)
        tq = _decode_quantiles(sections[SECTION_TERM_QUANTILES])
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        raise IndexFormatError(f"{path}: corrupt section contents ({e})") from e
    if mode_flag != BM_MODE_FLAGS[bm.mode]:
        raise IndexFormatError(f"{path}: header bm_mode flag {mode_flag} but block-max section is {bm.mode}")
    if len(term_lexicon) != vocab_size or len(doc_lexicon) != n:
        raise IndexFormatError(
            f"{path}: header has n={n}, V={vocab_size} but lexicons hold "
            f"{len(doc_lexicon)} documents and {len(term_lexicon)} terms"
        )
    manifest = CollectionManifest(
        n=n,
        vocab_size=vocab_size,
        quantizer=Quantizer(max_raw_score=max_score) if max_score > 0 else None,
        term_lexicon=term_lexicon,
        doc_lexicon=doc_lexicon,
    )
    try:
        _check_consistent(manifest, bm, bfi, tq)
    except InvalidArgumentError as e:
        raise IndexFormatError(f"{path}: {e}") from e
    logger.info("Loaded index %s: n=%d, V=%d, b=%d, bm_mode=%s", path, n, vocab_size, block_size, bm.mode)
    return manifest, bm, bfi, tq
