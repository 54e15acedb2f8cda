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
"""Unittests for the graph executor."""
import unittest

import numpy as np

from elasticnas import config
from elasticnas import datasets
from elasticnas import errors
from elasticnas.elasticity import conversion
from elasticnas.elasticity import space
from elasticnas.engine import executor
from elasticnas.engine import losses
from elasticnas.ir import builder as builder_lib
from elasticnas.ir import models


def _SmoothModel():
  """Returns a model without ReLU or max pooling kinks."""
  builder = builder_lib.GraphBuilder(seed=11, randomize_batch_norm=True)
  node = builder.Input((2, 8, 8))
  node = builder.Conv2D('c1', node, 8, kernel_size=5)
  node = builder.BatchNorm('b1', node)
  node = builder.DepthwiseConv2D('dw', node, kernel_size=5)
  node = builder.AvgPool2D('pool', node)
  node = builder.Conv2D('c2', node, 8, kernel_size=3)
  node = builder.BatchNorm('b2', node)
  node = builder.GlobalAvgPool('gap', node)
  node = builder.Flatten('flatten', node)
  node = builder.Linear('classifier', node, 3)
  builder.Output(node)
  return builder.Build()


class ForwardBackwardTest(unittest.TestCase):
  """Unit tests for the ForwardBackward function."""

  @classmethod
  def setUpClass(cls):
    cls.network = conversion.Convert(
        _SmoothModel(), config.ElasticityPolicy(min_width=2))
    rng = np.random.default_rng(2)
    cls.batch = datasets.Batch(
        inputs=rng.normal(size=(4, 2, 8, 8)),
        labels=np.array([0, 2, 1, 2]))

  def _Loss(self, weights, config_value):
    logits = executor.Forward(
        self.network.WithWeights(weights), self.batch.inputs, training=True,
        update_running_stats=False, config=config_value)
    return losses.CrossEntropy(logits, self.batch.labels)

  def _NumericGradient(self, key, index, config_value, epsilon=1e-3):
    """Returns the central difference of the loss for one stored weight.

    Weights are stored in float32, so the difference is divided by the
    distance between the representable perturbed values.
    """
    weights = self.network.weights.Copy()
    tensor = weights.Get(key)
    original = tensor[index]
    tensor[index] = original + epsilon
    plus_value = float(tensor[index])
    plus = self._Loss(weights, config_value)
    tensor[index] = original - epsilon
    minus_value = float(tensor[index])
    minus = self._Loss(weights, config_value)
    return (plus - minus) / (plus_value - minus_value)

  def _Configs(self):
    minimal = space.MinimalConfig(self.network.space)
    maximal = space.MaximalConfig(self.network.space)
    half = space.SubnetworkConfig(
        width_choice={
            group_id: options[len(options) // 2]
            for group_id, options in (
                (group.group_id, group.options)
                for group in self.network.space.width_groups)},
        kernel_choice=maximal.kernel_choice, skip_mask={})
    cropped = space.SubnetworkConfig(
        width_choice=maximal.width_choice,
        kernel_choice=minimal.kernel_choice, skip_mask={})
    return (('full', maximal), ('half width', half),
            ('cropped kernel', cropped), ('minimal', minimal))

  def test_gradients(self):
    """Tests shared-weight gradients against finite differences."""
    rng = np.random.default_rng(0)
    for name, config_value in self._Configs():
      result = executor.ForwardBackward(
          self.network, self.batch, config=config_value,
          update_running_stats=False)
      for key, grad in result.gradients.Items():
        active = np.argwhere(result.gradients.Mask(key))
        for row in rng.choice(len(active), size=min(3, len(active)),
                              replace=False):
          index = tuple(int(value) for value in active[row])
          analytic = float(grad[index])
          numeric = self._NumericGradient(key, index, config_value)
          with self.subTest(name=name, key=key, index=index):
            self.assertLessEqual(
                abs(analytic - numeric),
                1e-4 * max(abs(analytic), abs(numeric)) + 1e-7)

  def test_masks(self):
    """Tests gradients are zero outside of the active slices."""
    minimal = space.MinimalConfig(self.network.space)
    result = executor.ForwardBackward(
        self.network, self.batch, config=minimal, update_running_stats=False)
    mask = result.gradients.Mask('c1.weight')
    self.assertEqual(mask.shape, (8, 2, 5, 5))
    self.assertEqual(int(mask.sum()), 2 * 2 * 3 * 3)
    self.assertTrue(mask[:2, :, 1:4, 1:4].all())
    for key, grad in result.gradients.Items():
      with self.subTest(key=key):
        self.assertEqual(grad.shape, self.network.weights.Shape(key).dims)
        self.assertFalse(np.any(grad[~result.gradients.Mask(key)]))
    self.assertNotIn('b1.running_mean', result.gradients)

  def test_running_stats(self):
    """Tests only the running statistics of active channels change."""
    network = conversion.Convert(
        _SmoothModel(), config.ElasticityPolicy(min_width=2))
    before = network.weights.Copy()
    minimal = space.MinimalConfig(network.space)
    executor.ForwardBackward(network, self.batch, config=minimal)
    for key in ('b1.running_mean', 'b1.running_var'):
      with self.subTest(key=key):
        after = network.weights.Get(key)
        self.assertFalse(np.array_equal(after[:2], before.Get(key)[:2]))
        np.testing.assert_array_equal(after[2:], before.Get(key)[2:])
    np.testing.assert_array_equal(
        network.weights.Get('c1.weight'), before.Get('c1.weight'))

  def test_backward(self):
    """Tests Backward returns the loss and gradients of ForwardBackward."""
    network = conversion.Convert(
        _SmoothModel(), config.ElasticityPolicy(min_width=2))
    expected = executor.ForwardBackward(
        network.WithWeights(network.weights.Copy()), self.batch)
    loss, grads = executor.Backward(network, self.batch)
    self.assertEqual(loss, expected.loss)
    self.assertTrue(grads.Equals(expected.gradients))


class ExecuteTest(unittest.TestCase):
  """Unit tests for the Execute and Predict functions."""

  @classmethod
  def setUpClass(cls):
    cls.network = conversion.Convert(
        models.BuildPlainCnn(seed=3), check_fidelity=False)
    cls.inputs = np.random.default_rng(4).uniform(0.0, 1.0, (7, 1, 8, 8))

  def test_shape_mismatch(self):
    """Tests inputs of the wrong shape raise ShapeMismatch."""
    with self.assertRaises(errors.ShapeMismatch):
      executor.Execute(self.network.base, np.zeros((2, 3, 8, 8)))

  def test_non_finite(self):
    """Tests NaN inputs raise NonFiniteActivation."""
    inputs = self.inputs.copy()
    inputs[0, 0, 0, 0] = np.nan
    with self.assertRaises(errors.NonFiniteActivation):
      executor.Execute(self.network.base, inputs)

  def test_tape(self):
    """Tests the tape records every node output."""
    tape = executor.Execute(self.network.base, self.inputs)
    self.assertEqual(set(tape.values), set(self.network.base.NodeIds()))
    self.assertEqual(tape.logits.shape, (7, 10))
    self.assertEqual(tape.running_stats, {})

  def test_training_mode(self):
    """Tests training mode uses batch statistics without side effects."""
    before = self.network.weights.Copy()
    evaluation = executor.Forward(self.network, self.inputs)
    training = executor.Forward(
        self.network, self.inputs, training=True, update_running_stats=False)
    self.assertFalse(np.allclose(evaluation, training))
    self.assertTrue(self.network.weights.Equals(before))

  def test_predict(self):
    """Tests predictions do not depend on the evaluation batch size."""
    minimal = space.MinimalConfig(self.network.space)
    expected = executor.Forward(
        self.network, self.inputs, config=minimal).argmax(axis=1)
    for batch_size in (1, 3, 256):
      with self.subTest(batch_size=batch_size):
        np.testing.assert_array_equal(
            executor.Predict(
                self.network, self.inputs, minimal, batch_size=batch_size),
            expected)
    self.assertEqual(
        executor.Predict(self.network, self.inputs[:0]).shape, (0,))


if __name__ == '__main__':
  unittest.main()
