import numpy as np
import pytest

from core import InvalidArgumentError, PostingLists, QuantizedCollection, SearchParams, TopKResult
from search import (
    SearchScratch,
    TermQuantiles,
    TopKHeap,
    build_term_quantiles,
    estimate_threshold,
    partial_sort_blocks,
    prune_query_terms,
    search,
    search_with_stats,
)
from oracle import oracle_topk, top_k_from_scores
from synthetic import random_collection, random_query
from conftest import build_structures, qv

RANKS = (10, 100, 1000)


def quantiles(rows):
    return TermQuantiles(ranks=RANKS, values=np.array(rows, dtype=np.uint8))


class TestPruneQueryTerms:
    def test_keeps_heaviest_with_term_id_ties(self):
        pruned = prune_query_terms(qv({1: 9, 2: 1, 3: 5, 4: 5}), 0.5)
        assert pruned.as_dict() == {1: 9, 3: 5}
        assert pruned.term_ids.tolist() == [1, 3]

    def test_identity_at_one(self):
        query = qv({1: 9, 2: 1, 3: 5})
        assert prune_query_terms(query, 1.0) == query

    def test_keeps_at_least_one(self):
        assert prune_query_terms(qv({1: 9}), 0.1).as_dict() == {1: 9}

    def test_float_noise_does_not_add_a_term(self):
        query = qv({t: t + 1 for t in range(10)})
        assert len(prune_query_terms(query, 0.3)) == 3

    def test_length_non_decreasing_in_beta(self, rng):
        query = random_query(rng, 200, max_terms=40)
        lengths = [len(prune_query_terms(query, beta / 10)) for beta in range(1, 11)]
        assert lengths == sorted(lengths)
        assert lengths[-1] == len(query)

    @pytest.mark.parametrize('beta', [0.0, -0.5, 1.5])
    def test_rejects_out_of_range(self, beta):
        with pytest.raises(InvalidArgumentError):
            prune_query_terms(qv({1: 1}), beta)


class TestTermQuantiles:
    def test_ranked_impacts(self):
        long_list = [(d, d + 1) for d in range(12)]   # impacts 1..12
        postings = PostingLists.from_lists([long_list, [(0, 50)] * 1])
        tq = build_term_quantiles(postings, RANKS)
        assert tq.impact_at(0, 10) == 3
        assert tq.impact_at(0, 100) is None
        assert tq.impact_at(1, 10) is None
        assert tq.impact_at(7, 10) is None

    def test_non_increasing_in_rank(self, rng):
        postings = random_collection(rng, 2000, 10, avg_terms=4).to_postings()
        tq = build_term_quantiles(postings, (1, 10, 100, 500))
        values = tq.values.astype(np.int64)
        present = values > 0
        for i in range(values.shape[1] - 1):
            assert np.all(values[:, i][present[:, i + 1]] >= values[:, i + 1][present[:, i + 1]])

    @pytest.mark.parametrize('ranks', [(), (0, 10), (10, 10)])
    def test_invalid_ranks(self, ranks):
        with pytest.raises(InvalidArgumentError):
            build_term_quantiles(PostingLists.from_lists([[]]), ranks)


class TestEstimateThreshold:
    def test_examples(self):
        assert estimate_threshold(quantiles([[5, 0, 0]]), qv({0: 2}), 10) == 10
        assert estimate_threshold(quantiles([[0, 0, 0], [0, 0, 0]]), qv({0: 2, 1: 3}), 10) == 0
        assert estimate_threshold(quantiles([[5, 0, 0], [4, 0, 0]]), qv({0: 2, 1: 3}), 10) == 12

    def test_uses_smallest_rank_at_least_k(self):
        tq = quantiles([[9, 6, 2]])
        assert estimate_threshold(tq, qv({0: 1}), 1) == 9
        assert estimate_threshold(tq, qv({0: 1}), 11) == 6
        assert estimate_threshold(tq, qv({0: 1}), 1000) == 2
        assert estimate_threshold(tq, qv({0: 1}), 1001) == 0

    def test_unknown_terms_contribute_nothing(self):
        assert estimate_threshold(quantiles([[5, 0, 0]]), qv({3: 100}), 10) == 0


class TestPartialSort:
    def test_examples(self):
        ub = np.array([5, 9, 9, 2], dtype=np.uint32)
        assert partial_sort_blocks(ub, 4).as_list() == [(1, 9), (2, 9), (0, 5)]
        assert partial_sort_blocks(np.zeros(2, dtype=np.uint32), 0).as_list() == []
        assert partial_sort_blocks(np.array([7], dtype=np.uint32), 8).as_list() == []

    def test_matches_comparison_sort(self, rng):
        for _ in range(200):
            ub = rng.integers(0, int(rng.choice([5, 300, 100_000])), size=int(rng.integers(1, 3000))).astype(np.uint32)
            threshold = int(rng.integers(0, int(ub.max()) + 2))
            expected = sorted(((j, int(u)) for j, u in enumerate(ub) if u >= threshold and u > 0),
                              key=lambda e: (-e[1], e[0]))
            assert partial_sort_blocks(ub, threshold).as_list() == expected
            assert partial_sort_blocks(ub, threshold, max_buckets=4).as_list() == expected


class TestTopKHeap:
    def test_tie_break_prefers_smaller_doc(self):
        heap = TopKHeap(1)
        heap.offer(5, 10)
        heap.offer(3, 10)
        heap.offer(7, 10)
        assert heap.result() == TopKResult(((3, 10),))

    def test_threshold_is_zero_until_full(self):
        heap = TopKHeap(2)
        heap.offer(0, 8)
        assert heap.threshold() == 0
        heap.offer(1, 4)
        assert heap.threshold() == 4
        heap.offer_block(np.array([2, 3]), np.array([4, 9]))
        assert heap.result().hits == ((3, 9), (0, 8))

    def test_agrees_with_oracle_selection_under_ties(self, rng):
        """Heap and oracle realise the same (score desc, DocId asc) order on tie-heavy scores."""
        for k in (1, 5, 60):
            scores = rng.integers(0, 4, size=200).astype(np.uint32)
            heap = TopKHeap(k)
            heap.offer_block(np.arange(200), scores)
            assert heap.result() == top_k_from_scores(scores, k)


class TestSearch:
    def test_two_block_trace(self, two_block_collection):
        _, bm, bfi, tq = build_structures(two_block_collection, 8)
        result, stats = search_with_stats(bm, bfi, tq, qv({0: 1}), SearchParams(k=1))
        assert result.hits == ((8, 7),)
        assert stats.candidate_blocks == 2
        assert stats.blocks_evaluated == 1
        assert stats.stop_reason == 'threshold'

        relaxed, relaxed_stats = search_with_stats(bm, bfi, tq, qv({0: 1}), SearchParams(k=1, alpha=0.4))
        assert relaxed == result
        assert relaxed_stats.blocks_evaluated == 1

    def test_block_bound_equal_to_theta_is_evaluated(self):
        """Stopping needs theta strictly above the bound, so a later tie with a smaller DocId still wins."""
        collection = QuantizedCollection.from_documents(
            [(3, qv({0: 7})), (9, qv({0: 7})), (10, qv({1: 9}))], n=16, vocab_size=2)
        _, bm, bfi, tq = build_structures(collection, 8)
        result, stats = search_with_stats(bm, bfi, tq, qv({0: 1, 1: 1}), SearchParams(k=2))
        assert result.hits == ((10, 9), (3, 7))
        assert stats.blocks_evaluated == 2

    def test_empty_query_and_no_match(self, two_block_collection):
        _, bm, bfi, tq = build_structures(two_block_collection, 8)
        assert len(search(bm, bfi, tq, qv({}), SearchParams())) == 0
        assert len(search(bm, bfi, tq, qv({5: 3}), SearchParams())) == 0

    @pytest.mark.parametrize('b,mode', [(8, 'raw'), (16, 'compressed'), (64, 'raw'), (256, 'compressed')])
    def test_safe_mode_equals_oracle(self, rng, b, mode):
        collection = random_collection(rng, 700, 50)
        _, bm, bfi, tq = build_structures(collection, b, mode)
        scratch = SearchScratch.for_index(bm)
        for _ in range(25):
            query = random_query(rng, 50)
            for k in (1, 10, 100):
                params = SearchParams(k=k, bm_mode=mode)
                assert search(bm, bfi, tq, query, params, scratch) == oracle_topk(collection, query, k)

    def test_alpha_monotone(self, rng):
        collection = random_collection(rng, 1000, 40)
        _, bm, bfi, tq = build_structures(collection, 16)
        for _ in range(15):
            query = random_query(rng, 40)
            evaluated = [search_with_stats(bm, bfi, tq, query, SearchParams(k=10, alpha=a))[1].blocks_evaluated
                         for a in (0.2, 0.5, 0.8, 1.0)]
            assert evaluated == sorted(evaluated)

    def test_beta_one_is_unpruned(self, rng):
        collection = random_collection(rng, 300, 30)
        _, bm, bfi, tq = build_structures(collection, 32)
        query = random_query(rng, 30)
        _, stats = search_with_stats(bm, bfi, tq, query, SearchParams(beta=1.0))
        assert stats.kept_terms == stats.query_terms == len(query)

    def test_block_budget(self, rng):
        collection = random_collection(rng, 800, 10)
        _, bm, bfi, tq = build_structures(collection, 8)
        query = qv({t: 1 for t in range(10)})
        result, stats = search_with_stats(bm, bfi, tq, query, SearchParams(k=1000, max_blocks=3))
        assert stats.blocks_evaluated == 3
        assert stats.stop_reason == 'budget'
        assert 0 < len(result) <= 3 * 8

    def test_mismatched_indexes(self, rng):
        collection = random_collection(rng, 64, 10)
        _, bm, _, tq = build_structures(collection, 8)
        _, _, bfi16, _ = build_structures(collection, 16)
        with pytest.raises(InvalidArgumentError):
            search(bm, bfi16, tq, qv({0: 1}), SearchParams())
        _, compressed, bfi, _ = build_structures(collection, 8, 'compressed')
        with pytest.raises(InvalidArgumentError):
            search(compressed, bfi, tq, qv({0: 1}), SearchParams(bm_mode='raw'))

    def test_deterministic(self, rng):
        collection = random_collection(rng, 500, 30)
        _, bm, bfi, tq = build_structures(collection, 32)
        query = random_query(rng, 30)
        params = SearchParams(k=10, alpha=0.7, beta=0.6)
        first = search(bm, bfi, tq, query, params)
        assert all(search(bm, bfi, tq, query, params, SearchScratch.for_index(bm)) == first for _ in range(3))

    def test_empty_collection(self):
        collection = QuantizedCollection.from_documents([], n=0, vocab_size=1)
        _, bm, bfi, tq = build_structures(collection, 8)
        assert bm.num_blocks == 0
        assert len(search(bm, bfi, tq, qv({0: 1}), SearchParams())) == 0
