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
"""Unittests for super-network conversion and checkpoints."""
import json
import pathlib
import tempfile
import unittest

import numpy as np

from elasticnas import config
from elasticnas import definitions
from elasticnas import errors
from elasticnas.elasticity import conversion
from elasticnas.elasticity import network as network_lib
from elasticnas.elasticity import space
from elasticnas.engine import executor
from elasticnas.ir import builder as builder_lib
from elasticnas.ir import models


class ConvertTest(unittest.TestCase):
  """Unit tests for the Convert function."""

  def test_fidelity(self):
    """Tests the maximal subnetwork reproduces every bundled model."""
    for name, build in models.ARCHITECTURES.items():
      with self.subTest(name=name):
        model = build(seed=4, randomize_batch_norm=True)
        network = conversion.Convert(model)
        rng = np.random.default_rng(8)
        for _ in range(8):
          inputs = rng.uniform(0.0, 1.0, (definitions.FIDELITY_BATCH_SIZE,)
                               + model.input_shape.dims[1:])
          max_abs_diff = conversion.CheckFidelity(model, network, inputs)
          self.assertLessEqual(
              max_abs_diff, definitions.FIDELITY_TOLERANCE)

  def test_model_unchanged(self):
    """Tests conversion copies the weights before reordering them."""
    model = models.BuildToyResNet(seed=3)
    original = model.weights.Copy()
    network = conversion.Convert(model)
    self.assertTrue(model.weights.Equals(original))
    self.assertIsNot(network.weights, model.weights)
    self.assertFalse(network.weights.Equals(original))
    self.assertEqual(network.active, space.MaximalConfig(network.space))

  def test_without_reordering(self):
    """Tests the weights are kept as they are when reordering is off."""
    model = models.BuildToyResNet(seed=3)
    network = conversion.Convert(
        model, config.ElasticityPolicy(reorder_channels=False))
    self.assertTrue(network.weights.Equals(model.weights))

  def test_reordered_importance(self):
    """Tests the channels of a group are sorted by descending L1 norm."""
    network = conversion.Convert(models.BuildPlainCnn(seed=1))
    weight = network.weights.Get('block0.conv.weight')
    importance = np.abs(weight.astype(np.float64)).reshape(
        weight.shape[0], -1).sum(axis=1)
    self.assertTrue(np.all(np.diff(importance) <= 0.0))

  def test_empty_space(self):
    """Tests a model with nothing elastic raises EmptySpace."""
    builder = builder_lib.GraphBuilder()
    node = builder.Input((1, 4, 4))
    node = builder.Conv2D('conv', node, 8, kernel_size=1)
    node = builder.GlobalAvgPool('pool', node)
    node = builder.Flatten('flatten', node)
    node = builder.Linear('classifier', node, 2)
    builder.Output(node)
    with self.assertRaises(errors.EmptySpace):
      conversion.Convert(builder.Build())

  def test_fidelity_failure(self):
    """Tests a diverging super-network fails the check."""
    model = models.BuildPlainCnn(seed=1)
    network = conversion.Convert(model)
    weights = network.weights.Copy()
    weights.Get('classifier.bias')[:] += 1.0
    with self.assertRaises(errors.FidelityCheckFailed) as context:
      conversion.CheckFidelity(model, network.WithWeights(weights))
    self.assertAlmostEqual(context.exception.max_abs_diff, 1.0, places=5)

  def test_dtype(self):
    """Tests the forward pass keeps the dtype of the inputs."""
    network = conversion.Convert(models.BuildPlainCnn())
    for dtype in (np.float32, np.float64):
      with self.subTest(dtype=dtype):
        inputs = np.zeros((2, 1, 8, 8), dtype=dtype)
        self.assertEqual(executor.Forward(network, inputs).dtype, dtype)


class SuperNetworkCheckpointTest(unittest.TestCase):
  """Unit tests for saving and loading super-networks."""

  def setUp(self):
    self.directory = tempfile.TemporaryDirectory()
    self.root = pathlib.Path(self.directory.name) / 'supernet'
    self.network = conversion.Convert(
        models.BuildToyResNet(seed=6, randomize_batch_norm=True))

  def tearDown(self):
    self.directory.cleanup()

  def test_round_trip(self):
    """Tests a checkpoint loads back the same network."""
    minimal = space.MinimalConfig(self.network.space)
    self.network.active = minimal
    conversion.SaveSuperNetwork(self.network, self.root)
    loaded = conversion.LoadSuperNetwork(self.root)
    self.assertTrue(loaded.weights.Equals(self.network.weights))
    self.assertEqual(loaded.space.ToDict(), self.network.space.ToDict())
    self.assertEqual(loaded.policy, self.network.policy)
    self.assertEqual(loaded.active, minimal)
    inputs = np.random.default_rng(0).uniform(0.0, 1.0, (3, 3, 8, 8))
    np.testing.assert_array_equal(
        executor.Forward(loaded, inputs),
        executor.Forward(self.network, inputs))

  def test_byte_identical(self):
    """Tests two saves write identical files."""
    other = pathlib.Path(self.directory.name) / 'other'
    conversion.SaveSuperNetwork(self.network, self.root)
    conversion.SaveSuperNetwork(self.network, other)
    for name in (definitions.MODEL_MANIFEST_NAME,
                 definitions.MODEL_WEIGHTS_NAME, definitions.SPACE_NAME):
      with self.subTest(name=name):
        self.assertEqual(
            (self.root / name).read_bytes(), (other / name).read_bytes())

  def test_space_mismatch(self):
    """Tests a space description that does not match raises ParserError."""
    conversion.SaveSuperNetwork(self.network, self.root)
    path = self.root / definitions.SPACE_NAME
    document = json.loads(path.read_text(encoding='utf-8'))
    document['space']['width_groups'][0]['options'] = [16]
    path.write_text(json.dumps(document), encoding='utf-8')
    with self.assertRaises(errors.ParserError):
      conversion.LoadSuperNetwork(self.root)

  def test_bad_active(self):
    """Tests an active configuration outside the space raises ParserError."""
    conversion.SaveSuperNetwork(self.network, self.root)
    path = self.root / definitions.SPACE_NAME
    document = json.loads(path.read_text(encoding='utf-8'))
    document['active']['width']['g1'] = 100
    path.write_text(json.dumps(document), encoding='utf-8')
    with self.assertRaises(errors.ParserError):
      conversion.LoadSuperNetwork(self.root)

  def test_missing(self):
    """Tests a missing checkpoint raises ParserError."""
    with self.assertRaises(errors.ParserError):
      conversion.LoadSuperNetwork(self.root)

  def test_static_wrapper_forward(self):
    """Tests the static wrapper runs the model unchanged."""
    model = models.BuildToyResNet(seed=6, randomize_batch_norm=True)
    inputs = np.random.default_rng(1).uniform(0.0, 1.0, (2, 3, 8, 8))
    wrapped = executor.Forward(
        network_lib.SuperNetwork.FromStaticModel(model), inputs)
    self.assertEqual(wrapped.shape, (2, 10))
    np.testing.assert_array_equal(
        wrapped, executor.Execute(model, inputs).logits)


if __name__ == '__main__':
  unittest.main()
