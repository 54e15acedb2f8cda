# -*- coding: utf-8 -*-
# Copyright 2024 Google LLC
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Unittests for utility classes."""
import io
import pathlib
import struct
import tempfile
import unittest

import numpy as np

from elasticnas import errors
from elasticnas import utils


class TestStreamDecoder(unittest.TestCase):
  """Unit tests for the StreamDecoder class."""

  def test_num_remaining_bytes(self):
    """Tests the NumRemainingBytes method."""
    decoder = utils.StreamDecoder(io.BytesIO(b'test'))
    self.assertEqual(decoder.NumRemainingBytes(), 4)
    decoder.ReadBytes(1)
    self.assertEqual(decoder.NumRemainingBytes(), 3)

  def test_read_bytes(self):
    """Tests the ReadBytes method."""
    data = b'test decoder'
    stream = io.BytesIO(data)
    decoder = utils.StreamDecoder(stream)

    with self.subTest('all bytes'):
      offset, result = decoder.ReadBytes()
      self.assertEqual(offset, 0)
      self.assertEqual(result, data)

    with self.subTest('some bytes'):
      stream.seek(0)
      offset, result = decoder.ReadBytes(4)
      self.assertEqual(offset, 0)
      self.assertEqual(result, b'test')

    with self.subTest('too few bytes'):
      stream.seek(0)
      with self.assertRaises(errors.DecoderError):
        decoder.ReadBytes(20)

    with self.subTest('no bytes'):
      stream.seek(len(data))
      with self.assertRaises(errors.DecoderError):
        decoder.ReadBytes()

  def test_decode_uint32(self):
    """Tests the DecodeUint32 method."""
    decoder = utils.StreamDecoder(
        io.BytesIO(b'\x00\x00\x08\x03\x03\x08\x00\x00'))
    self.assertEqual(decoder.DecodeUint32(byte_order='big'), (0, 0x0803))
    self.assertEqual(decoder.DecodeUint32(), (4, 0x0803))

  def test_decode_float32_array(self):
    """Tests the DecodeFloat32Array method."""
    data = struct.pack('<3f', 1.0, -2.5, 0.125)
    offset, values = utils.StreamDecoder(
        io.BytesIO(data)).DecodeFloat32Array(3)
    self.assertEqual(offset, 0)
    self.assertEqual(values.dtype, np.float32)
    np.testing.assert_array_equal(values, [1.0, -2.5, 0.125])

  def test_decode_uint8_array(self):
    """Tests the DecodeUint8Array method."""
    _, values = utils.StreamDecoder(
        io.BytesIO(b'\x01\x02\xff')).DecodeUint8Array(3)
    np.testing.assert_array_equal(values, [1, 2, 255])


class TestFnv1a64(unittest.TestCase):
  """Unit tests for the Fnv1a64 function."""

  def test_known_values(self):
    """Tests published FNV-1a 64-bit values."""
    self.assertEqual(utils.Fnv1a64(b''), 0xcbf29ce484222325)
    self.assertEqual(utils.Fnv1a64(b'a'), 0xaf63dc4c8601ec8c)

  def test_sensitive_to_order(self):
    """Tests that permuted inputs hash differently."""
    self.assertNotEqual(utils.Fnv1a64(b'\x00\x01'), utils.Fnv1a64(b'\x01\x00'))

  def test_long_payload(self):
    """Tests a weight-sized payload against the byte-wise definition."""
    payload = np.random.default_rng(0).integers(
        0, 256, size=1 << 16, dtype=np.uint8).tobytes()
    expected = utils.FNV1A_64_OFFSET_BASIS
    for byte in payload:
      expected = ((expected ^ byte) * utils.FNV1A_64_PRIME) % (1 << 64)
    self.assertEqual(utils.Fnv1a64(payload), expected)
    self.assertEqual(utils.Fnv1a64(bytearray(payload)), expected)


class TestAtomicWriter(unittest.TestCase):
  """Unit tests for the AtomicWriter function."""

  def setUp(self):
    self.directory = tempfile.TemporaryDirectory()
    self.path = pathlib.Path(self.directory.name) / 'out.txt'

  def tearDown(self):
    self.directory.cleanup()

  def test_writes_on_success(self):
    """Tests the file appears once the body completes."""
    with utils.AtomicWriter(self.path, mode='w') as file_object:
      file_object.write('done')
    self.assertEqual(self.path.read_text(encoding='utf-8'), 'done')
    self.assertEqual(
        [path.name for path in self.path.parent.iterdir()], ['out.txt'])

  def test_leaves_nothing_on_failure(self):
    """Tests nothing is written when the body raises."""
    with self.assertRaises(RuntimeError):
      with utils.AtomicWriter(self.path) as file_object:
        file_object.write(b'partial')
        raise RuntimeError('interrupted')
    self.assertEqual(list(self.path.parent.iterdir()), [])

  def test_keeps_previous_file_on_failure(self):
    """Tests an existing file is untouched when the body raises."""
    self.path.write_text('old', encoding='utf-8')
    with self.assertRaises(RuntimeError):
      with utils.AtomicWriter(self.path, mode='w') as file_object:
        file_object.write('new')
        raise RuntimeError('interrupted')
    self.assertEqual(self.path.read_text(encoding='utf-8'), 'old')

  def test_missing_directory(self):
    """Tests a missing parent directory raises IoError."""
    with self.assertRaises(errors.IoError):
      with utils.AtomicWriter(self.path.parent / 'missing' / 'out.bin'):
        pass


if __name__ == '__main__':
  unittest.main()
