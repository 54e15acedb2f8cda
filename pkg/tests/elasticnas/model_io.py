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
"""Unittests for model serialization."""
import json
import pathlib
import tempfile
import unittest

from elasticnas import errors
from elasticnas import model_io
from elasticnas.ir import builder as builder_lib
from elasticnas.ir import models


class ModelIoTest(unittest.TestCase):
  """Unit tests for saving and loading models."""

  def setUp(self):
    self.directory = tempfile.TemporaryDirectory()
    self.root = pathlib.Path(self.directory.name)
    self.graph = models.BuildToyResNet(seed=1, randomize_batch_norm=True)

  def tearDown(self):
    self.directory.cleanup()

  def _Paths(self, name):
    return self.root / f'{name}.json', self.root / f'{name}.bin'

  def test_round_trip(self):
    """Tests a saved model loads back equal."""
    manifest_path, weights_path = self._Paths('model')
    model_io.SaveModel(self.graph, manifest_path, weights_path)
    loaded = model_io.LoadModel(manifest_path, weights_path)
    self.assertTrue(loaded.SameTopology(self.graph))
    self.assertTrue(loaded.weights.Equals(self.graph.weights))
    self.assertEqual(loaded.weights.Keys(), self.graph.weights.Keys())

  def test_byte_identical(self):
    """Tests two saves of the same graph write identical files."""
    first = self._Paths('first')
    second = self._Paths('second')
    model_io.SaveModel(self.graph, *first)
    model_io.SaveModel(self.graph, *second)
    for left, right in zip(first, second):
      with self.subTest(suffix=left.suffix):
        self.assertEqual(left.read_bytes(), right.read_bytes())

  def test_manifest_index(self):
    """Tests the weight index covers the payload contiguously."""
    manifest_bytes, payload_bytes = model_io.EncodeModel(self.graph)
    manifest = model_io.ModelManifest.FromBytes(manifest_bytes)
    offset = 0
    for entry in manifest.weight_index:
      self.assertEqual(entry.offset, offset)
      offset = entry.end_offset
    self.assertEqual(offset, len(payload_bytes))
    self.assertEqual(len(payload_bytes), 4 * self.graph.weights.NumElements())

  def test_no_weights(self):
    """Tests a pooling-only model has an empty payload."""
    builder = builder_lib.GraphBuilder()
    node = builder.Input((2, 4, 4))
    node = builder.GlobalAvgPool('pool', node)
    node = builder.Flatten('flatten', node)
    builder.Output(node)
    graph = builder.Build()
    manifest_bytes, payload_bytes = model_io.EncodeModel(graph)
    self.assertEqual(payload_bytes, b'')
    decoded = model_io.DecodeModel(manifest_bytes, payload_bytes)
    self.assertEqual(len(decoded.weights), 0)

  def test_truncated_payload(self):
    """Tests a truncated payload raises WeightIndexOutOfBounds."""
    manifest_bytes, payload_bytes = model_io.EncodeModel(self.graph)
    with self.assertRaises(errors.WeightIndexOutOfBounds):
      model_io.DecodeModel(manifest_bytes, payload_bytes[:-4])

  def test_checksum_mismatch(self):
    """Tests a corrupted payload raises ChecksumMismatch."""
    manifest_bytes, payload_bytes = model_io.EncodeModel(self.graph)
    corrupted = bytearray(payload_bytes)
    corrupted[10] ^= 0xff
    with self.assertRaises(errors.ChecksumMismatch):
      model_io.DecodeModel(manifest_bytes, bytes(corrupted))

  def test_unsupported_version(self):
    """Tests a manifest of another version raises ParserError."""
    manifest_bytes, payload_bytes = model_io.EncodeModel(self.graph)
    document = json.loads(manifest_bytes)
    document['format_version'] = 2
    with self.assertRaisesRegex(errors.ParserError, 'version'):
      model_io.DecodeModel(json.dumps(document).encode(), payload_bytes)

  def test_malformed_manifest(self):
    """Tests malformed manifests raise ParserError."""
    manifest_bytes, payload_bytes = model_io.EncodeModel(self.graph)
    document = json.loads(manifest_bytes)
    document['weight_index'][0]['count'] += 1
    bad_kind = json.loads(manifest_bytes)
    bad_kind['nodes'][1]['kind'] = 'Softmax'
    for name, raw_data in (
        ('not json', b'{'),
        ('count mismatch', json.dumps(document).encode()),
        ('unknown kind', json.dumps(bad_kind).encode())):
      with self.subTest(name=name):
        with self.assertRaises(errors.ParserError):
          model_io.DecodeModel(raw_data, payload_bytes)

  def test_invalid_graph_not_saved(self):
    """Tests saving an invalid graph raises InvalidGraph."""
    weights = self.graph.weights.Copy()
    weights.Set('classifier.bias', [0.0])
    manifest_path, weights_path = self._Paths('invalid')
    with self.assertRaises(errors.InvalidGraph):
      model_io.SaveModel(
          self.graph.WithWeights(weights), manifest_path, weights_path)
    self.assertFalse(manifest_path.exists())

  def test_missing_file(self):
    """Tests a missing file raises ParserError."""
    with self.assertRaises(errors.ParserError):
      model_io.LoadModel(*self._Paths('missing'))


if __name__ == '__main__':
  unittest.main()
