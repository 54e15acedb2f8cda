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
"""Unittests for elastic layer detection."""
import unittest

from elasticnas import definitions
from elasticnas.elasticity import roles
from elasticnas.ir import builder as builder_lib
from elasticnas.ir import models

Elasticity = definitions.Elasticity


class DetectElasticLayersTest(unittest.TestCase):
  """Unit tests for the DetectElasticLayers function."""

  def setUp(self):
    self.graph = models.BuildToyMobileNet()
    self.roles = roles.DetectElasticLayers(self.graph)

  def test_every_node(self):
    """Tests every node gets a role."""
    self.assertCountEqual(self.roles, self.graph.NodeIds())

  def test_conv_roles(self):
    """Tests the capability table."""
    cases = (
        ('stem.conv', Elasticity.WIDTH | Elasticity.KERNEL, (16,), (3,)),
        ('block1.expand.conv', Elasticity.WIDTH, (32,), ()),
        ('block1.dw.conv', Elasticity.KERNEL, (), (5,)),
        ('head.conv', Elasticity.WIDTH, (32,), ()),
    )
    for node_id, elasticity, widths, kernels in cases:
      with self.subTest(node_id=node_id):
        role = self.roles[node_id]
        self.assertEqual(role.elasticity, elasticity)
        self.assertEqual(role.width_options, widths)
        self.assertEqual(role.kernel_options, kernels)

  def test_static_roles(self):
    """Tests the classifier and parameter-free layers are static."""
    for node_id in ('classifier', 'stem.bn', 'block1.add', 'pool', 'input'):
      with self.subTest(node_id=node_id):
        self.assertTrue(self.roles[node_id].is_static)
        self.assertEqual(str(self.roles[node_id]), 'Static')

  def test_role_str(self):
    """Tests the text form of combined roles."""
    self.assertEqual(
        str(self.roles['stem.conv']), 'ElasticWidth[16]+ElasticKernel[3]')


class FindClassifierTest(unittest.TestCase):
  """Unit tests for the FindClassifier function."""

  def test_through_flatten(self):
    """Tests the search walks back to the last Linear layer."""
    self.assertEqual(
        roles.FindClassifier(models.BuildToyResNet()), 'classifier')

  def test_no_classifier(self):
    """Tests a model ending in pooling has no classifier."""
    builder = builder_lib.GraphBuilder()
    node = builder.Input((1, 4, 4))
    node = builder.Conv2D('conv', node, 4)
    node = builder.Add('add', node, builder.ReLU('relu', node))
    node = builder.GlobalAvgPool('pool', node)
    node = builder.Flatten('flatten', node)
    builder.Output(node)
    self.assertIsNone(roles.FindClassifier(builder.Build()))


if __name__ == '__main__':
  unittest.main()
