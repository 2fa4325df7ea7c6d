"""
End-to-end properties of the whole engine on seeded synthetic data.

The default run uses reduced collections; the ``slow`` variants repeat the checks
at full size (20,000 documents, 200 queries) and run with ``pytest -m slow``.
"""
import numpy as np
import pytest

import config
from bmindex import compute_upper_bounds
from core import QuantizedVector, fit_quantizer, quantize_impact
from engine import BMPEngine
from file_utils import write_run
from oracle import oracle_topk, score_all
from search import build_term_quantiles, estimate_threshold, partial_sort_blocks, prune_query_terms
from storage import read_index, write_index
from synthetic import SyntheticCollection, as_records, random_collection, random_query
from conftest import build_structures

BLOCK_SIZES = config.SUPPORTED_BLOCK_SIZES
ALPHAS = (0.60, 0.75, 0.85, 1.0)
BETAS = tuple(b / 10 for b in range(1, 11))


def build_engine(records, b, mode='raw'):
    return BMPEngine({'block_size': b, 'bm_mode': mode, 'parallel_build': False}).build_from_records(records)


def check_safe_equivalence(records, query_records, ks=(10, 100, 1000)):
    reference = build_engine(records, 8)
    queries = reference.parse_query_records(query_records)
    exact = {k: reference.exact(queries, k) for k in ks}
    for b in BLOCK_SIZES:
        for mode in config.BM_MODES:
            engine = build_engine(records, b, mode)
            for k in ks:
                outcomes = engine.search_many(queries, engine.params(k=k))
                mismatched = [o.qid for o, e in zip(outcomes, exact[k]) if o.result != e]
                assert not mismatched, f"b={b} mode={mode} k={k}: {mismatched}"


def alpha_sweep(engine, queries, k=10):
    """Mean overlap and mean evaluated blocks for each alpha."""
    safe = [o.result for o in engine.search_many(queries, engine.params(k=k))]
    overlaps, evaluated = [], []
    for alpha in ALPHAS:
        outcomes = engine.search_many(queries, engine.params(k=k, alpha=alpha))
        per_query = []
        for o, exact in zip(outcomes, safe):
            shared = set(o.result.doc_ids) & set(exact.doc_ids)
            per_query.append(len(shared) / len(exact) if len(exact) else 1.0)
        overlaps.append(float(np.mean(per_query)))
        evaluated.append(float(np.mean([o.stats.blocks_evaluated for o in outcomes])))
    return overlaps, evaluated


@pytest.fixture(scope='module')
def topical():
    """5,000 topical documents at b=64 with 30 queries."""
    generator = SyntheticCollection({'n_docs': 5000, 'vocab_size': 2000, 'n_topics': 25, 'n_queries': 30},
                                    seed=11)
    records = as_records(generator.documents())
    engine = build_engine(records, 64)
    return engine, engine.parse_query_records(generator.queries())


class TestSafeEquivalence:
    def test_every_block_size_mode_and_k(self, small_synthetic):
        records, query_records = small_synthetic
        check_safe_equivalence(records, query_records)

    @pytest.mark.slow
    def test_full_scale(self):
        generator = SyntheticCollection(seed=config.SYNTHETIC_CONFIG['seed'])
        check_safe_equivalence(as_records(generator.documents()), generator.queries())


class TestBoundsAreSafe:
    def test_upper_bounds_and_threshold_estimates(self):
        rng = np.random.default_rng(2024)
        ranks = (1, 10, 100)
        for _ in range(50):
            n = int(rng.integers(1, 501))
            vocab_size = int(rng.integers(1, 40))
            b = int(rng.choice(BLOCK_SIZES))
            collection = random_collection(rng, n, vocab_size, avg_terms=5)
            _, bm, _, _ = build_structures(collection, b, str(rng.choice(config.BM_MODES)))
            tq = build_term_quantiles(collection.to_postings(), ranks)
            block_of = np.arange(n) // b
            for _ in range(5):
                query = random_query(rng, vocab_size)
                scores = score_all(collection, query)
                assert np.all(compute_upper_bounds(bm, query)[block_of].astype(np.int64) >= scores)
                for k in (1, 10, 100):
                    tau = estimate_threshold(tq, query, k)
                    if tau > 0:
                        top = oracle_topk(collection, query, k)
                        assert len(top) == k and top.scores[-1] >= tau


class TestApproximation:
    def test_alpha_trade_off(self, topical):
        engine, queries = topical
        overlaps, evaluated = alpha_sweep(engine, queries)
        assert overlaps == sorted(overlaps)
        assert overlaps[-1] == 1.0
        assert evaluated == sorted(evaluated)

    def test_pruning_skips_most_blocks(self, topical):
        engine, queries = topical
        outcomes = engine.search_many(queries, engine.params(k=10))
        fraction = np.mean([o.stats.blocks_evaluated / o.stats.blocks_total for o in outcomes])
        assert fraction < 0.5

    def test_beta_grid(self, topical, tmp_path):
        engine, queries = topical
        for _, query in queries:
            lengths = [len(prune_query_terms(query, beta)) for beta in BETAS]
            assert lengths == sorted(lengths) and lengths[-1] == len(query)

        unpruned = [(qid, [(engine.doc_names[d], s) for d, s in result])
                    for (qid, _), result in zip(queries, engine.exact(queries, 10))]
        write_run(tmp_path / 'unpruned.txt', unpruned, 'bmp')
        outcomes = engine.search_many(queries, engine.params(k=10, beta=1.0))
        write_run(tmp_path / 'beta1.txt', engine.to_run(outcomes), 'bmp')
        assert (tmp_path / 'beta1.txt').read_bytes() == (tmp_path / 'unpruned.txt').read_bytes()

    @pytest.mark.slow
    def test_full_scale_trade_off(self):
        generator = SyntheticCollection(seed=config.SYNTHETIC_CONFIG['seed'])
        engine = build_engine(as_records(generator.documents()), 64)
        queries = engine.parse_query_records(generator.queries())
        overlaps, evaluated = alpha_sweep(engine, queries)
        assert overlaps == sorted(overlaps) and overlaps[-1] == 1.0
        assert evaluated == sorted(evaluated)
        outcomes = engine.search_many(queries, engine.params(k=10))
        assert np.mean([o.stats.blocks_evaluated / o.stats.blocks_total for o in outcomes]) < 0.5


class TestSizesAndStorage:
    def test_raw_block_max_size_law(self):
        """V x ceil(n/b) slots plus a 9-byte section header; halving b doubles the slots."""
        generator = SyntheticCollection({'n_docs': 4096, 'vocab_size': 500, 'n_topics': 8, 'avg_terms': 10}, seed=3)
        records = as_records(generator.documents())
        slots = {}
        for b in BLOCK_SIZES:
            report = build_engine(records, b).size_report()
            assert report['block_max_slots'] == report['vocab_size'] * (4096 // b)
            assert report['block_max_bytes'] == report['block_max_slots'] + 9
            slots[b] = report['block_max_slots']
            compressed = build_engine(records, b, 'compressed').size_report()
            assert compressed['block_max_bytes'] == report['block_max_compressed_bytes'] + 9
        for b in BLOCK_SIZES[:-1]:
            assert slots[b] == 2 * slots[2 * b]

    def test_storage_round_trips(self, tmp_path):
        rng = np.random.default_rng(99)
        for i in range(50):
            collection = random_collection(rng, int(rng.integers(0, 300)), int(rng.integers(1, 60)))
            structures = build_structures(collection, int(rng.choice(BLOCK_SIZES)), str(rng.choice(config.BM_MODES)))
            first, second = tmp_path / f"{i}a.bmp", tmp_path / f"{i}b.bmp"
            write_index(*structures, first)
            write_index(*structures, second)
            assert first.read_bytes() == second.read_bytes()
            manifest, bm, bfi, tq = read_index(first)
            assert (manifest, bm, bfi, tq) == tuple(structures)


class TestPartialSortAtScale:
    @staticmethod
    def check(rng, arrays, max_length):
        for _ in range(arrays):
            ub = rng.integers(0, int(rng.choice([10, 1000, 2 ** 24])),
                              size=int(rng.integers(1, max_length + 1))).astype(np.uint32)
            threshold = int(rng.integers(0, int(ub.max()) + 2))
            keep = np.flatnonzero((ub >= threshold) & (ub > 0))
            order = np.lexsort((keep, -ub[keep].astype(np.int64)))
            expected = [(int(keep[i]), int(ub[keep[i]])) for i in order]
            assert partial_sort_blocks(ub, threshold).as_list() == expected

    def test_random_arrays(self):
        self.check(np.random.default_rng(5), 100, 20_000)

    @pytest.mark.slow
    def test_full_scale(self):
        self.check(np.random.default_rng(5), 1000, 100_000)


class TestQuantizationError:
    def test_error_bound(self):
        """With integral query weights, each term contributes at most weight x max/255 of error."""
        rng = np.random.default_rng(17)
        pairs, terms = 10_000, 16
        doc_weights = rng.uniform(0, 4.0, size=(pairs, terms)) * (rng.random((pairs, terms)) < 0.6)
        query_weights = rng.integers(0, 20, size=(pairs, terms))
        q = fit_quantizer(float(doc_weights.max()))
        impacts = q.quantize_many(doc_weights.ravel()).reshape(pairs, terms).astype(np.int64)
        float_scores = (doc_weights * query_weights).sum(axis=1)
        dequantized = (impacts * query_weights).sum(axis=1) * q.max_raw_score / q.levels
        bound = query_weights.sum(axis=1) * q.max_raw_score / q.levels
        assert np.all(np.abs(float_scores - dequantized) <= bound + 1e-9)

    def test_oracle_on_quantized_vectors(self):
        q = fit_quantizer(4.0)
        docs = [(0, QuantizedVector(((0, quantize_impact(q, 1.0)), (1, quantize_impact(q, 4.0))))),
                (1, QuantizedVector(((0, quantize_impact(q, 3.9)),)))]
        assert oracle_topk(docs, QuantizedVector(((0, 1), (1, 1))), 2).doc_ids == [0, 1]
