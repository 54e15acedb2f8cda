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
"""Multiply-accumulate and parameter counts."""
from __future__ import annotations
import dataclasses
from typing import Dict, Optional, Tuple

from elasticnas import definitions
from elasticnas.elasticity import network as network_lib
from elasticnas.elasticity import space as space_lib
from elasticnas.ir import graph as graph_lib
from elasticnas.ir import shapes as shapes_lib

OpKind = definitions.OpKind


@dataclasses.dataclass(frozen=True)
class CostBreakdown:
  """The costs of a graph.

  Attributes:
    total_macs: the multiply-accumulate count of one sample.
    total_params: the parameter count.
    per_node: a map of node id to its (macs, params).
  """
  total_macs: int
  total_params: int
  per_node: Dict[str, Tuple[int, int]]


def _NodeMacs(
    node: graph_lib.LayerNode,
    shapes: Dict[str, graph_lib.TensorShape]) -> int:
  """Bias additions and elementwise ops count as zero."""
  output = shapes[node.id]
  if node.kind == OpKind.CONV2D:
    in_channels = shapes[node.inputs[0]][1]
    return (output[2] * output[3] * output[1] * in_channels
            * node.Attr('kernel_size')**2)
  if node.kind == OpKind.DEPTHWISE_CONV2D:
    return output[2] * output[3] * output[1] * node.Attr('kernel_size')**2
  if node.kind == OpKind.LINEAR:
    return shapes[node.inputs[0]][1] * output[1]
  return 0


def CountGraphCosts(graph: graph_lib.ModelGraph) -> CostBreakdown:
  """Counts the MACs and parameters of every node of a graph.

  Raises:
    errors.ShapeMismatch: if shape inference fails.
  """
  shapes = shapes_lib.InferShapes(graph)
  per_node = {}
  for node_id in graph.order:
    node = graph.GetNode(node_id)
    params = sum(
        graph.weights.Shape(key).NumElements()
        for key in node.weight_refs.values())
    per_node[node_id] = (int(_NodeMacs(node, shapes)), int(params))
  return CostBreakdown(
      total_macs=sum(macs for macs, _ in per_node.values()),
      total_params=sum(params for _, params in per_node.values()),
      per_node=per_node)


def CountCosts(
    network: network_lib.SuperNetwork,
    config: Optional[space_lib.SubnetworkConfig] = None) -> CostBreakdown:
  """Counts the costs of a subnetwork; skipped blocks are absent."""
  if config is not None:
    network.space.Validate(config)
  return CountGraphCosts(network_lib.ExtractSubnetwork(network, config))


def CountMacs(
    network: network_lib.SuperNetwork,
    config: Optional[space_lib.SubnetworkConfig] = None) -> CostBreakdown:
  """Returns the cost breakdown of a subnetwork, MACs first.

  Args:
    network: the super-network.
    config: the configuration, defaults to the active one.

  Raises:
    errors.InvalidChoice: if the config is not in the space.
  """
  return CountCosts(network, config)


def CountParams(
    network: network_lib.SuperNetwork,
    config: Optional[space_lib.SubnetworkConfig] = None) -> int:
  """Returns the parameter count of a subnetwork."""
  return CountCosts(network, config).total_params


def MacsRatio(reference: int, candidate: int) -> float:
  """Returns how many times fewer MACs candidate needs than reference.

  Raises:
    ValueError: if candidate is not positive.
  """
  if candidate <= 0:
    raise ValueError('candidate MACs must be positive')
  return reference / candidate
