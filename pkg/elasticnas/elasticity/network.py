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
"""The super-network and the extraction of active subnetworks."""
from __future__ import annotations
import dataclasses
from typing import Dict, Mapping, Optional, Tuple

from elasticnas import config as config_lib
from elasticnas import definitions
from elasticnas.elasticity import blocks as blocks_lib
from elasticnas.elasticity import groups as groups_lib
from elasticnas.elasticity import roles as roles_lib
from elasticnas.elasticity import space as space_lib
from elasticnas.ir import graph as graph_lib
from elasticnas.ir import shapes as shapes_lib

OpKind = definitions.OpKind

# Index of the active part of a stored tensor.
TensorIndex = Tuple[slice, ...]


@dataclasses.dataclass
class SuperNetwork:
  """A weight-sharing super-network.

  The weights of base are the only copy of the shared weights; every
  subnetwork reads slices of them.

  Attributes:
    base: the graph of the maximal subnetwork and the shared weights.
    space: the search space.
    roles: a map of node id to elasticity role.
    grouping: the width groups, static ones included.
    policy: the policy the space was generated with.
    active: the active configuration.
    classifier_id: the static classifier layer, if any.
  """
  base: graph_lib.ModelGraph
  space: space_lib.SearchSpace
  roles: Dict[str, roles_lib.ElasticityRole]
  grouping: groups_lib.WidthGrouping
  policy: config_lib.ElasticityPolicy
  active: space_lib.SubnetworkConfig
  classifier_id: Optional[str] = None

  @property
  def weights(self) -> graph_lib.WeightStore:
    """The shared weights."""
    return self.base.weights

  @classmethod
  def FromStaticModel(cls, graph: graph_lib.ModelGraph) -> SuperNetwork:
    """Wraps a plain model as a super-network with a single subnetwork.

    The weights are shared with graph, not copied.
    """
    groups = groups_lib.BuildWidthGroups(
        graph, {node.id: roles_lib.STATIC for node in graph.nodes})
    return cls(
        base=graph,
        space=space_lib.SearchSpace(),
        roles={node.id: roles_lib.STATIC for node in graph.nodes},
        grouping=groups,
        policy=config_lib.ElasticityPolicy(reorder_channels=False),
        active=space_lib.SubnetworkConfig(),
        classifier_id=roles_lib.FindClassifier(graph))

  def WithActive(self, config: space_lib.SubnetworkConfig) -> SuperNetwork:
    """Returns a view with its own activation state over the same weights.

    Raises:
      errors.InvalidChoice: if the config is not in the space.
    """
    self.space.Validate(config)
    return dataclasses.replace(self, active=config)

  def WithWeights(self, weights: graph_lib.WeightStore) -> SuperNetwork:
    """Returns a view over another weight store."""
    return dataclasses.replace(self, base=self.base.WithWeights(weights))

  def GroupWidth(
      self, group_id: str, config: space_lib.SubnetworkConfig) -> int:
    """Returns the active channels of a width group."""
    width = config.width_choice.get(group_id)
    if width is None:
      return self.grouping.GetGroup(group_id).max_channels
    return width


@dataclasses.dataclass(frozen=True)
class ActiveSubnetwork:
  """A subnetwork materialized from the shared weights.

  Attributes:
    graph: the standalone graph with sliced weight copies.
    slices: a map of weight key to the index of the slice in the shared
        tensor.
  """
  graph: graph_lib.ModelGraph
  slices: Mapping[str, TensorIndex]


def _KernelIndex(kernel_size: int, active_size: int) -> Tuple[slice, slice]:
  """Returns the index of the centered active_size window."""
  offset = (kernel_size - active_size) // 2
  window = slice(offset, offset + active_size)
  return window, window


def MaterializeSubnetwork(
    network: SuperNetwork,
    config: Optional[space_lib.SubnetworkConfig] = None) -> ActiveSubnetwork:
  """Builds the standalone graph of a subnetwork.

  Skipped blocks are removed. Convolutions and linear layers keep the
  leading output channels of their group and the leading input channels
  delivered by their input; elastic kernels keep the centered window with
  the padding reduced by the crop.

  Args:
    network: the super-network.
    config: the configuration, defaults to the active one.

  Returns:
    the ActiveSubnetwork.
  """
  config = network.active if config is None else config
  base_shapes = shapes_lib.InferShapes(network.base)
  skipped = blocks_lib.SkippedBlocks(
      network.space.skippable_blocks, config.skip_mask)
  reduced = blocks_lib.RemoveBlocks(network.base, skipped)

  channels: Dict[str, int] = {}
  nodes: Dict[str, graph_lib.LayerNode] = {}
  weights = graph_lib.WeightStore()
  slices: Dict[str, TensorIndex] = {}

  def _Take(key: str, index: TensorIndex):
    slices[key] = index
    weights.Set(key, network.weights.Get(key)[index])

  for node_id in reduced.order:
    node = reduced.GetNode(node_id)
    in_channels = channels[node.inputs[0]] if node.inputs else None
    attrs = dict(node.attrs)

    if node.kind == OpKind.INPUT:
      channels[node_id] = node.Attr('shape')[0]

    elif node.kind in definitions.CONV_KINDS:
      kernel_size = node.Attr('kernel_size')
      active_kernel = config.kernel_choice.get(node_id, kernel_size)
      attrs['kernel_size'] = active_kernel
      attrs['padding'] = node.Attr('padding') - (
          kernel_size - active_kernel) // 2
      window = _KernelIndex(kernel_size, active_kernel)
      if node.kind == OpKind.CONV2D:
        out_channels = network.GroupWidth(network.grouping.node_group[node_id],
                                          config)
        attrs['out_channels'] = out_channels
        _Take(node.weight_refs['weight'],
              (slice(0, out_channels), slice(0, in_channels)) + window)
      else:
        out_channels = in_channels
        _Take(node.weight_refs['weight'],
              (slice(0, out_channels), slice(0, 1)) + window)
      channels[node_id] = out_channels

    elif node.kind == OpKind.LINEAR:
      out_features = network.GroupWidth(network.grouping.node_group[node_id],
                                        config)
      attrs['out_features'] = out_features
      _Take(node.weight_refs['weight'],
            (slice(0, out_features), slice(0, in_channels)))
      if 'bias' in node.weight_refs:
        _Take(node.weight_refs['bias'], (slice(0, out_features),))
      channels[node_id] = out_features

    elif node.kind == OpKind.BATCH_NORM:
      for key in node.weight_refs.values():
        _Take(key, (slice(0, in_channels),))
      channels[node_id] = in_channels

    elif node.kind == OpKind.FLATTEN:
      spatial = base_shapes[node.inputs[0]].NumElements() // (
          base_shapes[node.inputs[0]][0] * base_shapes[node.inputs[0]][1])
      channels[node_id] = in_channels * spatial

    else:
      channels[node_id] = in_channels

    nodes[node_id] = dataclasses.replace(node, attrs=attrs)

  graph = graph_lib.ModelGraph(
      nodes=tuple(nodes[node.id] for node in reduced.nodes),
      input_id=reduced.input_id,
      output_id=reduced.output_id, weights=weights)
  return ActiveSubnetwork(graph=graph, slices=slices)


def ExtractSubnetwork(
    network: SuperNetwork,
    config: Optional[space_lib.SubnetworkConfig] = None
) -> graph_lib.ModelGraph:
  """Returns a subnetwork as a standalone graph with sliced weight copies.

  Args:
    network: the super-network.
    config: the configuration, defaults to the active one.

  Returns:
    the subnetwork graph.
  """
  return MaterializeSubnetwork(network, config).graph
