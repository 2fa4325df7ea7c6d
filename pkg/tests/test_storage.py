import json

import pytest

import storage
from core import InvalidArgumentError, QuantizedCollection
from file_utils import MalformedRecordError, PermutationError, write_permutation, write_vector_records
from storage import (
    BadMagicError,
    ChecksumMismatchError,
    IndexFormatError,
    TruncatedIndexError,
    UnsupportedVersionError,
    ingest_collection,
    read_index,
    section_sizes,
    write_index,
)
from synthetic import random_collection
from conftest import build_structures


@pytest.fixture
def two_doc_file(tmp_path):
    path = tmp_path / 'docs.jsonl'
    write_vector_records(path, [('a', {'x': 1.0}), ('b', {'x': 2.0})])
    return path


def write_lines(path, lines):
    path.write_text(''.join(line + '\n' for line in lines), encoding='utf-8')
    return path


@pytest.fixture
def index_file(tmp_path, rng):
    structures = build_structures(random_collection(rng, 300, 40), 16)
    path = tmp_path / 'idx.bmp'
    write_index(*structures, path)
    return path


class TestIngestCollection:
    def test_input_order(self, two_doc_file):
        manifest, collection = ingest_collection(two_doc_file)
        assert manifest.n == collection.n == 2
        assert manifest.quantizer.max_raw_score == 2.0
        assert manifest.doc_lexicon == {'a': 0, 'b': 1}
        assert collection.document(0).as_dict() == {0: 128}
        assert collection.document(1).as_dict() == {0: 255}

    def test_permutation(self, two_doc_file, tmp_path):
        perm = tmp_path / 'perm.txt'
        write_permutation(perm, ['b', 'a'])
        manifest, collection = ingest_collection(two_doc_file, reorder=perm)
        assert manifest.doc_lexicon == {'b': 0, 'a': 1}
        assert collection.document(0).as_dict() == {0: 255}
        assert manifest.doc_names() == ['b', 'a']

    def test_empty_file(self, tmp_path):
        manifest, collection = ingest_collection(write_lines(tmp_path / 'empty.jsonl', []))
        assert manifest.n == collection.n == 0
        assert manifest.quantizer is None
        assert manifest.vocab_size == 0

    def test_term_ids_follow_first_occurrence(self, tmp_path):
        path = tmp_path / 'docs.jsonl'
        write_vector_records(path, [('a', {'y': 1.0, 'z': 0.0}), ('b', {'x': 2.0, 'y': 2.0})])
        manifest, collection = ingest_collection(path)
        assert manifest.term_lexicon == {'y': 0, 'z': 1, 'x': 2}
        assert collection.document(0).as_dict() == {0: 128}
        assert collection.document(1).as_dict() == {0: 255, 2: 255}

    def test_empty_vectors_are_kept(self, tmp_path):
        path = tmp_path / 'docs.jsonl'
        write_vector_records(path, [('a', {}), ('b', {'x': 1.0})])
        manifest, collection = ingest_collection(path)
        assert manifest.n == 2
        assert len(collection.document(0)) == 0

    @pytest.mark.parametrize('bad_line', [
        'not json',
        '[1, 2]',
        json.dumps({'vector': {'x': 1.0}}),
        json.dumps({'id': 'c', 'vector': {'x': -1.0}}),
        json.dumps({'id': 'c', 'vector': {'x': 'heavy'}}),
    ])
    def test_malformed_line_names_line_number(self, tmp_path, bad_line):
        good = json.dumps({'id': 'a', 'vector': {'x': 1.0}})
        path = write_lines(tmp_path / 'docs.jsonl', [good, '', bad_line])
        with pytest.raises(MalformedRecordError) as e:
            ingest_collection(path)
        assert e.value.line_number == 3
        assert ':3:' in str(e.value)

    def test_invalid_utf8_names_line_number(self, tmp_path):
        path = tmp_path / 'docs.jsonl'
        path.write_bytes(b'{"id": "a", "vector": {"x": 1.0}}\n{"id": "b", "vector": {"\xff\xfe": 1.0}}\n')
        with pytest.raises(MalformedRecordError) as e:
            ingest_collection(path)
        assert e.value.line_number == 2
        assert 'invalid UTF-8' in str(e.value)

    def test_invalid_utf8_in_permutation(self, two_doc_file, tmp_path):
        perm = tmp_path / 'perm.txt'
        perm.write_bytes(b'b\n\xc3\x28\n')
        with pytest.raises(MalformedRecordError) as e:
            ingest_collection(two_doc_file, reorder=perm)
        assert e.value.line_number == 2

    def test_duplicate_id(self, tmp_path):
        path = tmp_path / 'docs.jsonl'
        write_vector_records(path, [('a', {'x': 1.0}), ('a', {'y': 1.0})])
        with pytest.raises(MalformedRecordError) as e:
            ingest_collection(path)
        assert e.value.line_number == 2

    @pytest.mark.parametrize('ids', [['a'], ['a', 'c'], ['a', 'a'], ['a', 'b', 'c']])
    def test_permutation_must_be_bijection(self, two_doc_file, tmp_path, ids):
        perm = tmp_path / 'perm.txt'
        write_permutation(perm, ids)
        with pytest.raises(PermutationError):
            ingest_collection(two_doc_file, reorder=perm)


class TestIndexFile:
    @pytest.mark.parametrize('b,mode', [(8, 'raw'), (8, 'compressed'), (64, 'raw'), (256, 'compressed')])
    def test_round_trip(self, tmp_path, rng, b, mode):
        structures = build_structures(random_collection(rng, 500, 70), b, mode)
        path = tmp_path / 'idx.bmp'
        write_index(*structures, path)
        manifest, bm, bfi, tq = read_index(path)
        assert manifest == structures[0]
        assert bm == structures[1]
        assert bfi == structures[2]
        assert tq == structures[3]

    def test_bytes_are_deterministic(self, tmp_path, rng):
        structures = build_structures(random_collection(rng, 200, 30), 32, 'compressed')
        write_index(*structures, tmp_path / 'one.bmp')
        write_index(*structures, tmp_path / 'two.bmp')
        assert (tmp_path / 'one.bmp').read_bytes() == (tmp_path / 'two.bmp').read_bytes()

    def test_empty_collection_round_trips(self, tmp_path):
        structures = build_structures(QuantizedCollection.from_documents([], n=0, vocab_size=3), 8)
        write_index(*structures, tmp_path / 'empty.bmp')
        manifest, bm, _, _ = read_index(tmp_path / 'empty.bmp')
        assert manifest.n == 0 and bm.num_blocks == 0

    def test_bad_magic(self, index_file):
        data = index_file.read_bytes()
        index_file.write_bytes(b'XXXX' + data[4:])
        with pytest.raises(BadMagicError):
            read_index(index_file)

    def test_truncated_at_section_boundary(self, index_file):
        data = index_file.read_bytes()
        _, offset, length, _ = storage.SECTION_ENTRY.unpack_from(data, storage.HEADER.size)
        index_file.write_bytes(data[:offset + length - 1])
        with pytest.raises(TruncatedIndexError):
            read_index(index_file)

    def test_truncated_header(self, index_file):
        index_file.write_bytes(index_file.read_bytes()[:storage.HEADER.size - 1])
        with pytest.raises(TruncatedIndexError):
            read_index(index_file)

    def test_unsupported_version(self, index_file):
        data = bytearray(index_file.read_bytes())
        data[4:6] = (storage.FORMAT_VERSION + 1).to_bytes(2, 'little')
        index_file.write_bytes(bytes(data))
        with pytest.raises(UnsupportedVersionError):
            read_index(index_file)

    def test_checksum_mismatch(self, index_file):
        data = bytearray(index_file.read_bytes())
        data[-1] ^= 0xFF
        index_file.write_bytes(bytes(data))
        with pytest.raises(ChecksumMismatchError):
            read_index(index_file)

    @pytest.mark.parametrize('field', [3, 4, 6], ids=['n', 'vocab_size', 'bm_mode'])
    def test_header_disagreeing_with_sections(self, index_file, field):
        """n, V and the bm_mode flag in the header must match the decoded sections."""
        data = bytearray(index_file.read_bytes())
        header = list(storage.HEADER.unpack_from(data, 0))
        header[field] += 1
        data[:storage.HEADER.size] = storage.HEADER.pack(*header)
        index_file.write_bytes(bytes(data))
        with pytest.raises(IndexFormatError):
            read_index(index_file)

    def test_inconsistent_structures_rejected(self, tmp_path, rng):
        collection = random_collection(rng, 100, 10)
        manifest, bm, _, tq = build_structures(collection, 8)
        _, _, bfi16, _ = build_structures(collection, 16)
        with pytest.raises(InvalidArgumentError):
            write_index(manifest, bm, bfi16, tq, tmp_path / 'bad.bmp')

    def test_raw_block_max_section_size(self, rng):
        """Raw section is V x ceil(n/b) bytes after a 9-byte header."""
        collection = random_collection(rng, 1000, 50)
        for b in (8, 32, 256):
            sizes = section_sizes(*build_structures(collection, b))
            assert sizes['block_max'] == 50 * -(-1000 // b) + storage.BLOCK_MAX_HEADER.size
            assert storage.BLOCK_MAX_HEADER.size == 9
