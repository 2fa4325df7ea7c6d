"""
Engine Module
Wires ingestion, index construction, persistence, query processing, benchmarking
and oracle comparison into one object used by the command line.
"""
import logging
import time
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence, Set, Tuple

from tqdm import tqdm

import config
from core import InvalidArgumentError, QuantizedCollection, QuantizedQuery, SearchParams, TopKResult, quantize_query
from bmindex import BlockMaxIndex, build_block_max, check_block_size, check_bm_mode
from fwdindex import BlockForwardIndex, build_block_forward, reconstruct_collection
from search import SearchScratch, SearchStats, TermQuantiles, build_term_quantiles, search_with_stats
from oracle import oracle_topk
from storage import CollectionManifest, ingest_collection, ingest_records, read_index, section_sizes, write_index
from evaluation import QueryMetrics, aggregate, overlap, reciprocal_rank
from file_utils import read_vector_records
from logging_utils import print_stage

logger = logging.getLogger(__name__)

ParsedQuery = Tuple[str, QuantizedQuery]


@dataclass
class QueryOutcome:
    qid: str
    result: TopKResult
    stats: SearchStats


class BMPEngine:
    """
    Holds one built or loaded index (manifest, block-max, block-forward, term
    quantiles) and runs queries against it.
    """

    def __init__(self, index_config: Optional[Dict[str, Any]] = None,
                 query_config: Optional[Dict[str, Any]] = None):
        index_config = index_config or config.INDEX_CONFIG
        query_config = query_config or config.QUERY_CONFIG
        self.index_config = index_config
        self.block_size = index_config.get('block_size', config.INDEX_CONFIG['block_size'])
        self.bm_mode = index_config.get('bm_mode', config.INDEX_CONFIG['bm_mode'])
        self.quantile_ranks = tuple(index_config.get('quantile_ranks', config.INDEX_CONFIG['quantile_ranks']))
        # None lets quantize_query pick 1 for integral queries, else QUERY_CONFIG['scale']
        self.query_scale = query_config.get('fixed_scale')
        check_block_size(self.block_size)
        check_bm_mode(self.bm_mode)

        self.manifest: Optional[CollectionManifest] = None
        self.bm: Optional[BlockMaxIndex] = None
        self.bfi: Optional[BlockForwardIndex] = None
        self.tq: Optional[TermQuantiles] = None
        self._collection: Optional[QuantizedCollection] = None
        self._doc_names: Optional[List[str]] = None

    # ------------------------------------------------------------------
    # Build / persist
    # ------------------------------------------------------------------
    def build(self, input_path, permutation=None) -> "BMPEngine":
        """Ingest a documents file and build every index structure."""
        manifest, collection = ingest_collection(input_path, reorder=permutation)
        return self.build_from_collection(manifest, collection)

    def build_from_records(self, records, permutation: Optional[List[str]] = None) -> "BMPEngine":
        """Same as ``build`` for in-memory (record number, id, term → weight) records."""
        manifest, collection = ingest_records(records, permutation=permutation)
        return self.build_from_collection(manifest, collection)

    def build_from_collection(self, manifest: CollectionManifest, collection: QuantizedCollection) -> "BMPEngine":
        postings = collection.to_postings()
        self.manifest = manifest
        self.bm = build_block_max(postings, collection.n, self.block_size, self.bm_mode, self.index_config)
        self.bfi = build_block_forward(collection, collection.n, self.block_size)
        self.tq = build_term_quantiles(postings, self.quantile_ranks)
        self._collection = collection
        self._doc_names = None
        print_stage('Index', f"Built n={collection.n}, V={collection.vocab_size}, "
                             f"b={self.block_size}, blocks={self.bm.num_blocks}, bm_mode={self.bm_mode}")
        return self

    def save(self, path) -> Dict[str, int]:
        self._require_index()
        return write_index(self.manifest, self.bm, self.bfi, self.tq, path)

    @classmethod
    def load(cls, path, query_config: Optional[Dict[str, Any]] = None) -> "BMPEngine":
        manifest, bm, bfi, tq = read_index(path)
        engine = cls({'block_size': bm.block_size, 'bm_mode': bm.mode, 'quantile_ranks': tq.ranks},
                     query_config)
        engine.manifest, engine.bm, engine.bfi, engine.tq = manifest, bm, bfi, tq
        return engine

    def _require_index(self):
        if self.bm is None:
            raise InvalidArgumentError("no index has been built or loaded")

    @property
    def collection(self) -> QuantizedCollection:
        """Quantized documents; recovered from the block-forward index after a load."""
        self._require_index()
        if self._collection is None:
            self._collection = reconstruct_collection(self.bfi, self.manifest.vocab_size)
        return self._collection

    @property
    def doc_names(self) -> List[str]:
        if self._doc_names is None:
            self._doc_names = self.manifest.doc_names()
        return self._doc_names

    def size_report(self) -> Dict[str, Any]:
        """Collection shape, directory size and serialized byte size of every section."""
        self._require_index()
        report = {
            'n': self.manifest.n,
            'vocab_size': self.manifest.vocab_size,
            'block_size': self.bm.block_size,
            'bm_mode': self.bm.mode,
            'num_blocks': self.bm.num_blocks,
            'directory_entries': self.bfi.directory_entries(),
            'block_max_slots': self.bm.raw_size_bytes(),
            'block_max_compressed_bytes': self.bm.compressed_size_bytes(),
        }
        report.update({f"{name}_bytes": size for name, size in
                       section_sizes(self.manifest, self.bm, self.bfi, self.tq).items()})
        return report

    # ------------------------------------------------------------------
    # Queries
    # ------------------------------------------------------------------
    def quantize(self, term_weights: Dict[str, float]) -> QuantizedQuery:
        self._require_index()
        return quantize_query(self.manifest.vectorize(term_weights), self.query_scale)

    def parse_queries(self, path) -> List[ParsedQuery]:
        return self.parse_query_records((qid, vector) for _, qid, vector in read_vector_records(path))

    def parse_query_records(self, records: Iterable[Tuple[str, Dict[str, float]]]) -> List[ParsedQuery]:
        queries = []
        dropped = 0
        for qid, vector in records:
            query = self.quantize(vector)
            dropped += len(vector) - len(query)
            queries.append((qid, query))
        if dropped:
            logger.warning("Dropped %d out-of-vocabulary or zero-weight query terms", dropped)
        return queries

    def params(self, k: int = config.SEARCH_CONFIG['k'], alpha: float = config.SEARCH_CONFIG['alpha'],
               beta: float = config.SEARCH_CONFIG['beta'],
               max_blocks: Optional[int] = config.SEARCH_CONFIG['max_blocks']) -> SearchParams:
        self._require_index()
        return SearchParams(k=k, alpha=alpha, beta=beta, bm_mode=self.bm.mode, max_blocks=max_blocks)

    def search(self, query: QuantizedQuery, params: SearchParams,
               scratch: Optional[SearchScratch] = None) -> Tuple[TopKResult, SearchStats]:
        self._require_index()
        return search_with_stats(self.bm, self.bfi, self.tq, query, params, scratch)

    def search_many(self, queries: Sequence[ParsedQuery], params: SearchParams,
                    progress: bool = False) -> List[QueryOutcome]:
        scratch = SearchScratch.for_index(self.bm)
        outcomes = []
        for qid, query in tqdm(queries, desc='Search', disable=not progress):
            result, stats = self.search(query, params, scratch)
            outcomes.append(QueryOutcome(qid, result, stats))
        return outcomes

    def exact(self, queries: Sequence[ParsedQuery], k: int) -> List[TopKResult]:
        """Oracle top-k of every query."""
        collection = self.collection
        return [oracle_topk(collection, query, k) for _, query in queries]

    def to_run(self, outcomes: Iterable[QueryOutcome]) -> List[Tuple[str, List[Tuple[str, int]]]]:
        names = self.doc_names
        return [(o.qid, [(names[d], score) for d, score in o.result]) for o in outcomes]

    def compare(self, queries: Sequence[ParsedQuery], k: int) -> List[str]:
        """Run safe mode and the oracle on every query; returns the ids of queries that differ."""
        outcomes = self.search_many(queries, self.params(k=k))
        mismatches = []
        for outcome, expected in zip(outcomes, self.exact(queries, k)):
            if outcome.result != expected:
                logger.error("Query %s: BMP %s != oracle %s", outcome.qid,
                             outcome.result.hits[:5], expected.hits[:5])
                mismatches.append(outcome.qid)
        return mismatches

    # ------------------------------------------------------------------
    # Benchmark
    # ------------------------------------------------------------------
    def bench(self, queries: Sequence[ParsedQuery], k: int,
              alphas: Sequence[float] = config.BENCH_CONFIG['alphas'],
              betas: Sequence[float] = config.BENCH_CONFIG['betas'],
              warmup: int = config.BENCH_CONFIG['warmup'],
              runs: int = config.BENCH_CONFIG['runs'],
              qrels: Optional[Dict[str, Set[str]]] = None,
              progress: bool = False) -> List[Dict[str, Any]]:
        """
        Time every (alpha, beta) configuration single-threaded.

        Each configuration runs ``warmup`` untimed passes, then ``runs`` timed
        passes; every (query, pass) pair contributes one QueryMetrics sample.
        Overlap is measured against the safe run.

        :return: one summary row per configuration
        """
        if runs < 1:
            raise InvalidArgumentError(f"runs must be >= 1, got {runs}")
        if warmup < 0:
            raise InvalidArgumentError(f"warmup must be >= 0, got {warmup}")
        safe = [o.result for o in self.search_many(queries, self.params(k=k))]
        scratch = SearchScratch.for_index(self.bm)
        rows = []
        for alpha in alphas:
            for beta in betas:
                params = self.params(k=k, alpha=alpha, beta=beta)
                for _ in range(warmup):
                    for _, query in queries:
                        self.search(query, params, scratch)
                samples: List[QueryMetrics] = []
                for run in range(runs):
                    for (qid, query), exact in tqdm(list(zip(queries, safe)), disable=not progress,
                                                    desc=f"Bench a={alpha} b={beta} run {run + 1}"):
                        start = time.perf_counter_ns()
                        result, stats = self.search(query, params, scratch)
                        latency = time.perf_counter_ns() - start
                        rr = reciprocal_rank(result, qrels.get(qid, set()), k, self.doc_names) \
                            if qrels is not None else None
                        samples.append(QueryMetrics(
                            rr_at_k=rr,
                            overlap_at_k=overlap(result, exact, k),
                            latency_ns=latency,
                            blocks_evaluated=stats.blocks_evaluated,
                            blocks_total=stats.blocks_total,
                        ))
                if not samples:
                    continue
                row = {'b': self.bm.block_size, 'alpha': alpha, 'beta': beta, 'k': k, 'bm_mode': self.bm.mode}
                row.update(aggregate(samples))
                print_stage('Bench', f"b={row['b']} alpha={alpha} beta={beta} k={k}: "
                                     f"MRT {row['mrt_ms']:.3f} ms, overlap {row['mean_overlap']:.4f}, "
                                     f"blocks {row['block_fraction']:.2%}")
                rows.append(row)
        return rows
