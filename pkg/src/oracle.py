"""
Exhaustive reference scorer. Scores every document by the integer dot product with
the query and keeps the top k under (score desc, DocId asc). Used as ground truth
for safe-mode equivalence and for measuring approximate runs.
"""
from typing import Iterable, Tuple, Union

import numpy as np

from core import DocId, QuantizedCollection, QuantizedQuery, QuantizedVector, TopKResult


def score_all(collection: QuantizedCollection, query: QuantizedQuery) -> np.ndarray:
    """Quantized score of every document (int64, length n)."""
    weights = np.zeros(collection.vocab_size, dtype=np.int64)
    for t, w in query:
        if t < collection.vocab_size:
            weights[t] = w
    contributions = weights[collection.term_ids] * collection.impacts.astype(np.int64)
    scores = np.zeros(collection.n, dtype=np.int64)
    np.add.at(scores, collection.doc_ids_per_entry(), contributions)
    return scores


def top_k_from_scores(scores: np.ndarray, k: int) -> TopKResult:
    candidates = np.flatnonzero(scores > 0)
    order = np.lexsort((candidates, -scores[candidates]))[:k]
    return TopKResult(tuple((int(candidates[i]), int(scores[candidates[i]])) for i in order))


def oracle_topk(collection: Union[QuantizedCollection, Iterable[Tuple[DocId, QuantizedVector]]],
                query: QuantizedQuery, k: int) -> TopKResult:
    if not isinstance(collection, QuantizedCollection):
        collection = QuantizedCollection.from_documents(collection)
    if len(query) == 0 or collection.n == 0:
        return TopKResult()
    return top_k_from_scores(score_all(collection, query), k)
