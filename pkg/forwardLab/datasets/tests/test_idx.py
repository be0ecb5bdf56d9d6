"""
Tests for reading and writing IDX files.
"""
import struct
import tempfile
from pathlib import Path

import numpy as np
from numpy.testing import assert_array_equal
from django.test import SimpleTestCase

from datasets.idx import encode_idx, parse_idx, read_idx, write_idx
from engine.exceptions import DatasetError


class ParseIdxTest(SimpleTestCase):
    """Test parse_idx on hand-built payloads."""

    def test_unsigned_bytes(self):
        payload = b'\x00\x00\x08\x02' + struct.pack('>II', 2, 3) + bytes(range(6))

        data = parse_idx(payload)

        self.assertEqual(data.dtype, np.uint8)
        assert_array_equal(data, [[0, 1, 2], [3, 4, 5]])

    def test_big_endian_floats(self):
        payload = b'\x00\x00\x0d\x01' + struct.pack('>I', 2) + struct.pack('>ff', 1.5, -2.0)

        data = parse_idx(payload)

        self.assertTrue(data.dtype.isnative)
        assert_array_equal(data, np.array([1.5, -2.0], dtype=np.float32))

    def test_labels_vector(self):
        payload = b'\x00\x00\x08\x01' + struct.pack('>I', 4) + bytes([7, 0, 9, 3])

        assert_array_equal(parse_idx(payload), [7, 0, 9, 3])

    def test_bad_magic(self):
        for header in (b'\x00\x01\x08\x01', b'\x00\x00\x07\x01'):
            with self.subTest(header=header):
                with self.assertRaisesMessage(DatasetError, 'bad IDX magic'):
                    parse_idx(header + struct.pack('>I', 1) + b'\x00')

    def test_truncated(self):
        with self.assertRaises(DatasetError):
            parse_idx(b'\x00\x00')
        with self.assertRaisesMessage(DatasetError, 'truncated'):
            parse_idx(b'\x00\x00\x08\x02' + struct.pack('>I', 2))
        with self.assertRaisesMessage(DatasetError, 'expected 6'):
            parse_idx(b'\x00\x00\x08\x02' + struct.pack('>II', 2, 3) + bytes(5))

    def test_unsupported_dtype(self):
        with self.assertRaises(DatasetError):
            encode_idx(np.zeros(3, dtype=np.int64))


class IdxFileTest(SimpleTestCase):
    """Test read_idx and write_idx on disk."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_plain_and_gzip(self):
        images = np.arange(2 * 3 * 4, dtype=np.uint8).reshape(2, 3, 4)
        for name in ('images.idx', 'images.idx.gz'):
            with self.subTest(name=name):
                path = write_idx(self.root / name, images)

                assert_array_equal(read_idx(path), images)

        self.assertEqual((self.root / 'images.idx.gz').read_bytes()[:2], b'\x1f\x8b')
        self.assertEqual((self.root / 'images.idx').read_bytes()[:4], b'\x00\x00\x08\x03')

    def test_missing_file(self):
        with self.assertRaisesMessage(DatasetError, 'cannot read IDX file'):
            read_idx(self.root / 'missing.idx')
