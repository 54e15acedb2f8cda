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
"""Detection of elasticity-capable layers."""
from __future__ import annotations
import dataclasses
from typing import Dict, Optional, Tuple

from elasticnas import definitions
from elasticnas.ir import graph as graph_lib

OpKind = definitions.OpKind
Elasticity = definitions.Elasticity


@dataclasses.dataclass(frozen=True)
class ElasticityRole:
  """The elasticity of one layer.

  Attributes:
    elasticity: the elastic dimensions, STATIC if none.
    width_options: the output width options, descending.
    kernel_options: the kernel size options, descending.
  """
  elasticity: Elasticity
  width_options: Tuple[int, ...] = ()
  kernel_options: Tuple[int, ...] = ()

  @property
  def is_static(self) -> bool:
    """True if the layer has a single configuration."""
    return self.elasticity == Elasticity.STATIC

  @property
  def has_width(self) -> bool:
    """True if the output width is elastic."""
    return bool(self.elasticity & Elasticity.WIDTH)

  @property
  def has_kernel(self) -> bool:
    """True if the kernel size is elastic."""
    return bool(self.elasticity & Elasticity.KERNEL)

  def __str__(self) -> str:
    if self.is_static:
      return 'Static'
    parts = []
    if self.has_width:
      parts.append(f'ElasticWidth{list(self.width_options)}')
    if self.has_kernel:
      parts.append(f'ElasticKernel{list(self.kernel_options)}')
    return '+'.join(parts)


STATIC = ElasticityRole(Elasticity.STATIC)


def FindClassifier(graph: graph_lib.ModelGraph) -> Optional[str]:
  """Returns the weight-bearing layer producing the Output logits.

  Walks back from the Output node through single-input layers.

  Args:
    graph: the graph.

  Returns:
    the classifier node id, or None if the logits do not come from a single
    weight-bearing layer.
  """
  node = graph.GetNode(graph.output_id)
  while len(node.inputs) == 1:
    node = graph.GetNode(node.inputs[0])
    if node.is_weight_bearing:
      return node.id
  return None


def _OutputWidth(node: graph_lib.LayerNode) -> int:
  if node.kind == OpKind.LINEAR:
    return node.Attr('out_features')
  return node.Attr('out_channels')


def DetectElasticLayers(
    graph: graph_lib.ModelGraph) -> Dict[str, ElasticityRole]:
  """Assigns an elasticity role to every node from the capability table.

  Conv2D and Linear layers get an elastic width, convolutions with a kernel
  larger than 1 an elastic kernel. The classifier is always static. Option
  lists hold only the pre-trained value until the search space is
  generated.

  Args:
    graph: a valid graph.

  Returns:
    a map of node id to role, covering every node.
  """
  classifier_id = FindClassifier(graph)
  roles = {}
  for node in graph.nodes:
    capability = definitions.CAPABILITIES.get(node.kind, Elasticity.STATIC)
    if node.id == classifier_id or capability == Elasticity.STATIC:
      roles[node.id] = STATIC
      continue

    elasticity = Elasticity.STATIC
    width_options = ()
    kernel_options = ()
    if capability & Elasticity.WIDTH:
      elasticity |= Elasticity.WIDTH
      width_options = (_OutputWidth(node),)
    kernel_size = node.Attr('kernel_size')
    if capability & Elasticity.KERNEL and kernel_size > 1:
      elasticity |= Elasticity.KERNEL
      kernel_options = (kernel_size,)
    roles[node.id] = ElasticityRole(
        elasticity=elasticity, width_options=width_options,
        kernel_options=kernel_options)
  return roles
