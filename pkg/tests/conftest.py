import os
import sys

import numpy as np
import pytest

SRC_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'src')
if SRC_DIR not in sys.path:
    sys.path.insert(0, SRC_DIR)

from core import QuantizedCollection, QuantizedVector, fit_quantizer  # noqa: E402
from bmindex import build_block_max  # noqa: E402
from fwdindex import build_block_forward  # noqa: E402
from search import build_term_quantiles  # noqa: E402
from storage import CollectionManifest  # noqa: E402
from synthetic import SyntheticCollection, as_records  # noqa: E402

SERIAL_BUILD = {'parallel_build': False}


def qv(entries):
    """Shorthand for a QuantizedVector from a {TermId: weight} dict."""
    return QuantizedVector.from_dict(entries)


def build_structures(collection: QuantizedCollection, b: int, mode: str = 'raw',
                     ranks=(10, 100, 1000), index_config=None):
    """Manifest plus every index structure for a quantized collection."""
    postings = collection.to_postings()
    manifest = CollectionManifest(
        n=collection.n,
        vocab_size=collection.vocab_size,
        quantizer=fit_quantizer(1.0),
        term_lexicon={f"t{t}": t for t in range(collection.vocab_size)},
        doc_lexicon={f"d{d}": d for d in range(collection.n)},
    )
    bm = build_block_max(postings, collection.n, b, mode, index_config or SERIAL_BUILD)
    bfi = build_block_forward(collection, collection.n, b)
    tq = build_term_quantiles(postings, ranks)
    return manifest, bm, bfi, tq


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def structures():
    return build_structures


@pytest.fixture
def two_block_collection():
    """n=16, b=8: doc 0 holds term 0 at impact 3, doc 8 holds it at impact 7."""
    return QuantizedCollection.from_documents([(0, qv({0: 3})), (8, qv({0: 7}))], n=16, vocab_size=1)


@pytest.fixture(scope='session')
def small_synthetic():
    """Seeded topical collection of 2000 documents and 25 queries (records, query records)."""
    generator = SyntheticCollection({'n_docs': 2000, 'vocab_size': 1000, 'n_topics': 10,
                                     'n_queries': 25}, seed=7)
    return as_records(generator.documents()), generator.queries()
