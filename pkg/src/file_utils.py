import json
import logging
import math
import os
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Sequence, Set, Tuple

from core import CorruptInputError

logger = logging.getLogger(__name__)


class MalformedRecordError(CorruptInputError):
    """A line of an input file could not be parsed."""

    def __init__(self, path, line_number: int, reason: str):
        self.path = str(path)
        self.line_number = line_number
        self.reason = reason
        super().__init__(f"{self.path}:{line_number}: {reason}")


class PermutationError(CorruptInputError):
    """A permutation file is not a bijection over the collection's documents."""


def iter_lines(path) -> Iterator[Tuple[int, str]]:
    """
    Yield (line number, stripped text) for every non-blank line of a UTF-8 file.

    :raises MalformedRecordError: on a line that is not valid UTF-8
    """
    with open(path, 'rb') as f:
        for line_number, raw in enumerate(f, start=1):
            try:
                line = raw.decode('utf-8').strip()
            except UnicodeDecodeError as e:
                raise MalformedRecordError(path, line_number, "invalid UTF-8") from e
            if line:
                yield line_number, line


def iter_jsonl(path) -> Iterator[Tuple[int, dict]]:
    """
    Yield (line number, parsed object) for every non-blank line of a JSONL file.

    :param path: Path to the file
    :raises MalformedRecordError: on invalid UTF-8, invalid JSON or a non-object line
    """
    logger.debug("Reading JSONL records from %s", path)
    for line_number, line in iter_lines(path):
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise MalformedRecordError(path, line_number, f"invalid JSON ({e.msg})") from e
        if not isinstance(record, dict):
            raise MalformedRecordError(path, line_number, "expected a JSON object")
        yield line_number, record


def read_vector_records(path) -> Iterator[Tuple[int, str, Dict[str, float]]]:
    """
    Yield (line number, external id, term → weight) from a documents or queries file.

    Each line looks like ``{"id": "d1", "vector": {"term": 1.5, ...}}``.
    """
    for line_number, record in iter_jsonl(path):
        external_id = record.get('id')
        vector = record.get('vector')
        if external_id is None or isinstance(external_id, (dict, list)):
            raise MalformedRecordError(path, line_number, "missing or invalid 'id'")
        if not isinstance(vector, dict):
            raise MalformedRecordError(path, line_number, "missing or invalid 'vector'")
        weights = {}
        for term, weight in vector.items():
            if isinstance(weight, bool) or not isinstance(weight, (int, float)):
                raise MalformedRecordError(path, line_number, f"weight of term {term!r} is not a number")
            if weight < 0 or not math.isfinite(weight):
                raise MalformedRecordError(path, line_number, f"weight of term {term!r} must be finite and >= 0")
            weights[str(term)] = float(weight)
        yield line_number, str(external_id), weights


def write_vector_records(path, records: Iterable[Tuple[str, Mapping[str, float]]]):
    """Write (external id, term → weight) pairs as JSONL."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for external_id, vector in records:
            f.write(json.dumps({'id': external_id, 'vector': dict(vector)}) + '\n')


def read_permutation(path) -> List[str]:
    """One external document id per line; line i names the document given DocId i."""
    return [line for _, line in iter_lines(path)]


def write_permutation(path, external_ids: Sequence[str]):
    with open(path, 'w', encoding='utf-8') as f:
        for external_id in external_ids:
            f.write(f"{external_id}\n")


# ========================================================================================
# TREC FORMATS
# ========================================================================================
def write_run(path, runs: Iterable[Tuple[str, Sequence[Tuple[str, int]]]], run_tag: str):
    """
    Write a TREC run file: ``qid Q0 docname rank score runtag``.

    :param runs: (query id, [(doc name, integer score), ...] in rank order)
    """
    if os.path.dirname(str(path)):
        os.makedirs(os.path.dirname(str(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for qid, hits in runs:
            for rank, (doc_name, score) in enumerate(hits, start=1):
                f.write(f"{qid} Q0 {doc_name} {rank} {score} {run_tag}\n")


def read_run(path) -> Dict[str, List[Tuple[str, int, float]]]:
    """Parse a TREC run file into qid → [(doc name, rank, score)] sorted by rank."""
    run: Dict[str, List[Tuple[str, int, float]]] = {}
    for line_number, line in iter_lines(path):
        parts = line.split()
        if len(parts) != 6:
            raise MalformedRecordError(path, line_number, f"expected 6 columns, got {len(parts)}")
        qid, _, doc_name, rank, score, _ = parts
        try:
            run.setdefault(qid, []).append((doc_name, int(rank), float(score)))
        except ValueError as e:
            raise MalformedRecordError(path, line_number, "rank/score are not numeric") from e
    for hits in run.values():
        hits.sort(key=lambda h: h[1])
    return run


def read_qrels(path) -> Dict[str, Set[str]]:
    """Parse TREC qrels (``qid 0 docid relevance``) into qid → relevant doc names."""
    qrels: Dict[str, Set[str]] = {}
    for line_number, line in iter_lines(path):
        parts = line.split()
        if len(parts) != 4:
            raise MalformedRecordError(path, line_number, f"expected 4 columns, got {len(parts)}")
        qid, _, doc_name, relevance = parts
        try:
            relevance = int(relevance)
        except ValueError as e:
            raise MalformedRecordError(path, line_number, f"relevance {relevance!r} is not an integer") from e
        relevant = qrels.setdefault(qid, set())
        if relevance > 0:
            relevant.add(doc_name)
    return qrels
