"""
Synthetic Data Module
Seeded generators for learned-sparse-style collections and queries, used by the
test suite and by ``bmp.py generate``.

Documents draw most of their terms from a per-topic vocabulary and the rest from a
Zipf background distribution over the whole vocabulary. Consecutive documents share
a topic, which gives blocks of neighbouring DocIds overlapping vocabulary.
"""
import logging
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

import config
from core import QuantizedCollection, QuantizedQuery, QuantizedVector
from file_utils import write_vector_records

logger = logging.getLogger(__name__)

Records = List[Tuple[str, Dict[str, float]]]


def zipf_probabilities(vocab_size: int, exponent: float) -> np.ndarray:
    ranks = np.arange(1, vocab_size + 1, dtype=np.float64)
    weights = ranks ** -exponent
    return weights / weights.sum()


def _term_name(t: int) -> str:
    return f"t{t}"


class SyntheticCollection:
    """Draws documents and queries from one seeded generator."""

    def __init__(self, synthetic_config: Optional[Dict[str, Any]] = None, seed: Optional[int] = None):
        cfg = dict(config.SYNTHETIC_CONFIG)
        cfg.update(synthetic_config or {})
        self.cfg = cfg
        self.seed = cfg['seed'] if seed is None else seed
        self.rng = np.random.default_rng(self.seed)
        self.vocab_size = cfg['vocab_size']
        self.background = zipf_probabilities(self.vocab_size, cfg['zipf_exponent'])
        topic_terms = min(cfg['topic_terms'], self.vocab_size)
        self.topics = [self.rng.choice(self.vocab_size, size=topic_terms, replace=False)
                       for _ in range(cfg['n_topics'])]

    def documents(self, n_docs: Optional[int] = None) -> Records:
        n_docs = self.cfg['n_docs'] if n_docs is None else n_docs
        max_weight = self.cfg['max_weight']
        background_cap = max_weight * self.cfg['background_weight']
        lengths = np.maximum(1, self.rng.poisson(self.cfg['avg_terms'], size=n_docs))
        topic_counts = self.rng.binomial(lengths, self.cfg['topic_share'])
        background_counts = lengths - np.minimum(topic_counts, len(self.topics[0]))
        background_terms = self.rng.choice(self.vocab_size, size=int(background_counts.sum()), p=self.background)
        background_weights = self.rng.uniform(0.01, background_cap, size=len(background_terms))

        records = []
        cursor = 0
        for i in range(n_docs):
            topic = self.topics[i * len(self.topics) // n_docs]
            vector: Dict[str, float] = {}
            end = cursor + int(background_counts[i])
            for t, w in zip(background_terms[cursor:end].tolist(), background_weights[cursor:end].tolist()):
                vector[_term_name(t)] = round(w, 4)
            cursor = end
            count = min(int(topic_counts[i]), len(topic))
            chosen = self.rng.choice(topic, size=count, replace=False)
            for t, w in zip(chosen.tolist(), self.rng.uniform(0.01, max_weight, size=count).tolist()):
                vector[_term_name(t)] = round(w, 4)
            records.append((f"d{i}", vector))
        logger.info("Generated %d synthetic documents (seed=%d)", n_docs, self.seed)
        return records

    def queries(self, n_queries: Optional[int] = None) -> Records:
        n_queries = self.cfg['n_queries'] if n_queries is None else n_queries
        low, high = self.cfg['query_weight_range']
        records = []
        for i in range(n_queries):
            topic = self.topics[int(self.rng.integers(len(self.topics)))]
            size = int(self.rng.integers(self.cfg['min_query_terms'], self.cfg['max_query_terms'] + 1))
            from_topic = min(int(self.rng.binomial(size, self.cfg['topic_share'])), len(topic))
            terms = np.concatenate((
                self.rng.choice(topic, size=from_topic, replace=False),
                self.rng.choice(self.vocab_size, size=size - from_topic, p=self.background),
            ))
            weights = self.rng.uniform(low, high, size=len(terms))
            records.append((f"q{i}", {_term_name(t): round(w, 3) for t, w in zip(terms.tolist(), weights.tolist())}))
        return records


def generate_files(docs_path, queries_path, synthetic_config: Optional[Dict[str, Any]] = None,
                   seed: Optional[int] = None) -> Tuple[int, int]:
    """Write a documents file and a queries file; returns (documents, queries) written."""
    generator = SyntheticCollection(synthetic_config, seed)
    documents = generator.documents()
    queries = generator.queries()
    write_vector_records(docs_path, documents)
    write_vector_records(queries_path, queries)
    return len(documents), len(queries)


def as_records(records: Records) -> List[Tuple[int, str, Dict[str, float]]]:
    """Attach 1-based record numbers, the shape ingestion consumes."""
    return [(i, name, vector) for i, (name, vector) in enumerate(records, start=1)]


# ========================================================================================
# QUANTIZED INSTANCES
# ========================================================================================
def random_collection(rng: np.random.Generator, n: int, vocab_size: int,
                      avg_terms: float = 6.0) -> QuantizedCollection:
    """Uniformly random quantized documents; some may be empty."""
    documents = []
    for doc_id in range(n):
        length = min(int(rng.poisson(avg_terms)), vocab_size)
        terms = np.sort(rng.choice(vocab_size, size=length, replace=False))
        impacts = rng.integers(1, config.QUANTIZATION_LEVELS + 1, size=length)
        documents.append((doc_id, QuantizedVector(tuple(zip(terms.tolist(), impacts.tolist())))))
    return QuantizedCollection.from_documents(documents, n=n, vocab_size=vocab_size)


def random_query(rng: np.random.Generator, vocab_size: int, max_terms: int = 8,
                 max_weight: int = 50) -> QuantizedQuery:
    size = int(rng.integers(1, min(max_terms, vocab_size) + 1))
    terms = np.sort(rng.choice(vocab_size, size=size, replace=False))
    weights = rng.integers(1, max_weight + 1, size=size)
    return QuantizedVector(tuple(zip(terms.tolist(), weights.tolist())))
