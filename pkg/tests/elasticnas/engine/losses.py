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
"""Unittests for the losses."""
import unittest

import numpy as np

from elasticnas.engine import losses


def _NumericGradient(function, logits, epsilon=1e-6):
  grad = np.zeros_like(logits)
  for index in np.ndindex(*logits.shape):
    original = logits[index]
    logits[index] = original + epsilon
    plus = function(logits)
    logits[index] = original - epsilon
    minus = function(logits)
    logits[index] = original
    grad[index] = (plus - minus) / (2 * epsilon)
  return grad


class SoftmaxTest(unittest.TestCase):
  """Unit tests for the LogSoftmax and Softmax functions."""

  def test_stable(self):
    """Tests large logits do not overflow."""
    logits = np.array([[1000.0, 1000.0], [0.0, -1000.0]])
    probs = losses.Softmax(logits)
    np.testing.assert_allclose(probs[0], [0.5, 0.5])
    np.testing.assert_allclose(probs[1], [1.0, 0.0], atol=1e-12)
    self.assertTrue(np.all(np.isfinite(losses.LogSoftmax(logits))))


class CrossEntropyTest(unittest.TestCase):
  """Unit tests for the cross-entropy loss."""

  def test_uniform(self):
    """Tests equal logits give log K."""
    logits = np.zeros((3, 10))
    labels = np.array([0, 4, 9])
    self.assertAlmostEqual(losses.CrossEntropy(logits, labels), np.log(10))

  def test_value(self):
    """Tests a hand-computed value."""
    logits = np.array([[2.0, 0.0], [0.0, 0.0]])
    labels = np.array([0, 1])
    expected = (np.log(1 + np.exp(-2.0)) + np.log(2.0)) / 2
    self.assertAlmostEqual(losses.CrossEntropy(logits, labels), expected)

  def test_gradient(self):
    """Tests the logit gradient against finite differences."""
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(4, 5))
    labels = np.array([0, 1, 4, 2])
    loss, grad = losses.CrossEntropyObjective()(logits, labels)
    self.assertAlmostEqual(loss, losses.CrossEntropy(logits, labels))
    numeric = _NumericGradient(
        lambda value: losses.CrossEntropy(value, labels), logits)
    np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-7)

  def test_dtype(self):
    """Tests the gradient keeps the dtype of the logits."""
    logits = np.zeros((2, 3), dtype=np.float32)
    _, grad = losses.CrossEntropyObjective()(logits, np.array([0, 1]))
    self.assertEqual(grad.dtype, np.float32)


class DistillationTest(unittest.TestCase):
  """Unit tests for the distillation loss."""

  def setUp(self):
    rng = np.random.default_rng(5)
    self.student = rng.normal(size=(4, 6))
    self.teacher = rng.normal(size=(4, 6))
    self.labels = np.array([1, 0, 5, 3])

  def test_same_logits(self):
    """Tests the divergence term vanishes for identical logits."""
    loss = losses.DistillationLoss(
        self.student, self.student.copy(), self.labels, alpha=0.5,
        temperature=4.0)
    self.assertAlmostEqual(
        loss, 0.5 * losses.CrossEntropy(self.student, self.labels))

  def test_alpha_zero(self):
    """Tests alpha 0 is plain cross-entropy."""
    loss = losses.DistillationLoss(
        self.student, self.teacher, self.labels, alpha=0.0, temperature=2.0)
    self.assertAlmostEqual(
        loss, losses.CrossEntropy(self.student, self.labels))

  def test_value(self):
    """Tests the divergence term against a direct computation."""
    temperature = 3.0
    teacher_probs = losses.Softmax(self.teacher / temperature)
    student_probs = losses.Softmax(self.student / temperature)
    divergence = (teacher_probs * np.log(teacher_probs / student_probs)).sum()
    expected = temperature**2 * divergence / 4
    loss = losses.DistillationLoss(
        self.student, self.teacher, self.labels, alpha=1.0,
        temperature=temperature)
    self.assertAlmostEqual(loss, expected)
    self.assertGreater(loss, 0.0)

  def test_gradient(self):
    """Tests the logit gradient against finite differences."""
    for alpha, temperature in ((0.5, 4.0), (1.0, 1.0), (0.2, 2.0)):
      with self.subTest(alpha=alpha, temperature=temperature):
        objective = losses.DistillationObjective(
            self.teacher, alpha=alpha, temperature=temperature)
        loss, grad = objective(self.student, self.labels)
        numeric = _NumericGradient(
            lambda value, a=alpha, t=temperature: losses.DistillationLoss(
                value, self.teacher, self.labels, a, t),
            self.student.copy())
        np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-7)
        self.assertAlmostEqual(
            loss, losses.DistillationLoss(
                self.student, self.teacher, self.labels, alpha, temperature))


if __name__ == '__main__':
  unittest.main()
