import math
import os
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence, Set

import ir_measures
import pandas as pd

from core import InvalidArgumentError, TopKResult
from settings import RESULT_DIR, ensure_dirs

SUMMARY_COLUMNS = [
    'b', 'alpha', 'beta', 'k', 'bm_mode', 'queries',
    'mean_rr', 'mean_overlap', 'mrt_ms', 'median_ms', 'p95_ms', 'p99_ms',
    'block_fraction',
]


@dataclass
class QueryMetrics:
    rr_at_k: Optional[float]     # None when no qrels are available
    overlap_at_k: float
    latency_ns: int
    blocks_evaluated: int
    blocks_total: int

    def __post_init__(self):
        if self.blocks_evaluated > self.blocks_total:
            raise InvalidArgumentError(
                f"blocks_evaluated={self.blocks_evaluated} exceeds blocks_total={self.blocks_total}"
            )


def _ranked_ids(result, doc_names: Optional[Sequence[str]]) -> List:
    ids = result.doc_ids if isinstance(result, TopKResult) else list(result)
    if doc_names is not None:
        return [doc_names[d] for d in ids]
    return ids


def reciprocal_rank(result, relevant: Set, k: int, doc_names: Optional[Sequence[str]] = None) -> float:
    """
    1 / rank of the first relevant document within the top k, else 0.

    :param result: TopKResult or ranked sequence of document identifiers
    :param relevant: identifiers of relevant documents
    :param doc_names: optional DocId → name mapping applied to ``result`` first
    """
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    for rank, doc in enumerate(_ranked_ids(result, doc_names)[:k], start=1):
        if doc in relevant:
            return 1.0 / rank
    return 0.0


def overlap(approx, exact, k: int) -> float:
    """Share of the exact top-k that the approximate top-k also retrieved; two empty results overlap fully."""
    approx_docs = set(_ranked_ids(approx, None)[:k])
    exact_docs = set(_ranked_ids(exact, None)[:k])
    if not exact_docs:
        return 1.0 if not approx_docs else 0.0
    return len(approx_docs & exact_docs) / len(exact_docs)


def nearest_rank(sorted_values: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: the value at 1-based rank ceil(p * N)."""
    rank = max(1, math.ceil(p * len(sorted_values)))
    return sorted_values[rank - 1]


def aggregate(metrics: Sequence[QueryMetrics]) -> Dict[str, Any]:
    """Mean RR / overlap, latency order statistics (ms) and mean evaluated-block fraction."""
    if not metrics:
        raise InvalidArgumentError("aggregate needs at least one QueryMetrics")
    rrs = [m.rr_at_k for m in metrics if m.rr_at_k is not None]
    latencies = sorted(m.latency_ns for m in metrics)
    fractions = [m.blocks_evaluated / m.blocks_total if m.blocks_total else 0.0 for m in metrics]
    return {
        'queries':        len(metrics),
        'mean_rr':        sum(rrs) / len(rrs) if rrs else None,
        'mean_overlap':   sum(m.overlap_at_k for m in metrics) / len(metrics),
        'mrt_ms':         sum(latencies) / len(latencies) / 1e6,
        'median_ms':      nearest_rank(latencies, 0.50) / 1e6,
        'p95_ms':         nearest_rank(latencies, 0.95) / 1e6,
        'p99_ms':         nearest_rank(latencies, 0.99) / 1e6,
        'block_fraction': sum(fractions) / len(fractions),
    }


def mean_reciprocal_rank(run: Dict[str, List[tuple]], qrels: Dict[str, Set[str]], k: int) -> float:
    """
    Mean RR@k over every query present in ``run``; queries without qrels score 0.

    :param run: qid → [(doc name, rank, score)] as returned by ``read_run``
    :param qrels: qid → relevant doc names as returned by ``read_qrels``
    """
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    if not run:
        return 0.0
    judged = {qid: {doc: 1 for doc in relevant}
              for qid, relevant in qrels.items() if relevant and qid in run}
    per_query: Dict[str, float] = {}
    if judged:
        # negated ranks as scores: the file's rank column decides, not tied scores
        scored = {qid: {doc: -float(rank) for doc, rank, _ in run[qid][:k]} for qid in judged}
        per_query = {m.query_id: m.value for m in ir_measures.iter_calc([ir_measures.RR @ k], judged, scored)}
    return sum(per_query.get(qid, 0.0) for qid in run) / len(run)


def save_summary_csv(rows: Iterable[Dict[str, Any]], path: Optional[str] = None,
                     exp_name: str = 'bmp_bench') -> str:
    """Write one row per configuration; returns the file path."""
    if path is None:
        ensure_dirs(RESULT_DIR)
        path = os.path.join(RESULT_DIR, f"{exp_name}_summary.csv")
    elif os.path.dirname(path):
        os.makedirs(os.path.dirname(path), exist_ok=True)
    df = pd.DataFrame(list(rows), columns=SUMMARY_COLUMNS)
    df.to_csv(path, index=False)
    return path
