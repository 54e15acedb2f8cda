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
"""Channel-consistency width groups."""
from __future__ import annotations
import dataclasses
import logging
from typing import Dict, Hashable, List, Mapping, Tuple

from elasticnas import definitions
from elasticnas import errors
from elasticnas.elasticity import roles as roles_lib
from elasticnas.ir import graph as graph_lib
from elasticnas.ir import shapes as shapes_lib

logger = logging.getLogger(__name__)

OpKind = definitions.OpKind


class UnionFind:
  """A disjoint-set forest with union by rank and path compression."""

  def __init__(self):
    self._parents: Dict[Hashable, Hashable] = {}
    self._ranks: Dict[Hashable, int] = {}

  def Union(self, a: Hashable, b: Hashable):
    """Merges the sets of a and b."""
    root_a = self.Find(a)
    root_b = self.Find(b)
    if root_a == root_b:
      return
    rank_a = self._ranks.setdefault(root_a, 1)
    rank_b = self._ranks.setdefault(root_b, 1)
    if rank_a < rank_b:
      self._parents[root_a] = root_b
    elif rank_a > rank_b:
      self._parents[root_b] = root_a
    else:
      self._parents[root_b] = root_a
      self._ranks[root_a] += 1

  def Find(self, a: Hashable) -> Hashable:
    """Returns the representative of a, a singleton if unseen."""
    if a not in self._parents:
      return a
    path = [a]
    root = self._parents[a]
    while root != path[-1]:
      path.append(root)
      root = self._parents.get(root, root)
    for ancestor in path:
      self._parents[ancestor] = root
    return root


@dataclasses.dataclass(frozen=True)
class WidthGroup:
  """Layers whose output channel counts vary together.

  Attributes:
    group_id: the group id.
    members: the channel producers (Input, Conv2D, Linear) of the group.
    max_channels: the pre-trained channel count of the group.
    static: True if the channel count is fixed.
    options: the width options, descending.
  """
  group_id: str
  members: Tuple[str, ...]
  max_channels: int
  static: bool
  options: Tuple[int, ...] = ()

  def ToDict(self) -> dict:
    """Returns the JSON representation."""
    return {
        'id': self.group_id, 'members': list(self.members),
        'max_channels': self.max_channels, 'static': self.static,
        'options': list(self.options)}


@dataclasses.dataclass(frozen=True)
class WidthGrouping:
  """The width groups of a graph.

  Attributes:
    groups: every group in topological order of its first producer.
    node_group: a map of node id to the id of the group its output
        channels belong to.
  """
  groups: Tuple[WidthGroup, ...]
  node_group: Mapping[str, str]

  def GetGroup(self, group_id: str) -> WidthGroup:
    """Returns a group by id."""
    for group in self.groups:
      if group.group_id == group_id:
        return group
    raise KeyError(f'Unknown width group: {group_id}')

  @property
  def elastic_groups(self) -> Tuple[WidthGroup, ...]:
    """The groups whose width may vary."""
    return tuple(group for group in self.groups if not group.static)

  def Members(self, group_id: str) -> List[str]:
    """Returns every node whose output belongs to the group."""
    return [
        node_id for node_id, member_of in self.node_group.items()
        if member_of == group_id]

  def WithOptions(
      self, options: Mapping[str, Tuple[int, ...]]) -> WidthGrouping:
    """Returns a copy with the option lists of the given groups set."""
    groups = tuple(
        dataclasses.replace(group, options=tuple(options[group.group_id]))
        if group.group_id in options else group
        for group in self.groups)
    return WidthGrouping(groups=groups, node_group=dict(self.node_group))


def BuildWidthGroups(
    graph: graph_lib.ModelGraph,
    roles: Mapping[str, roles_lib.ElasticityRole]) -> WidthGrouping:
  """Partitions the channels of the graph into width groups.

  Every channel producer starts its own set. Pass-through layers (batch
  norm, activations, pooling, flatten, depthwise convolutions, Output) join
  the set of their input and an Add joins the sets of all of its inputs.
  A group is static if it holds the Input, the classifier or a producer
  without elastic width.

  Args:
    graph: a valid graph.
    roles: the roles from DetectElasticLayers.

  Returns:
    the WidthGrouping.

  Raises:
    errors.ConflictingConstraint: if one group joins layers of different
        channel counts.
  """
  shapes = shapes_lib.InferShapes(graph)
  union_find = UnionFind()
  for node_id in graph.order:
    node = graph.GetNode(node_id)
    if node.kind in definitions.CHANNEL_PRODUCER_KINDS:
      continue
    for input_id in node.inputs:
      union_find.Union(input_id, node_id)

  producers: Dict[Hashable, List[str]] = {}
  for node_id in graph.order:
    if graph.GetNode(node_id).kind in definitions.CHANNEL_PRODUCER_KINDS:
      producers.setdefault(union_find.Find(node_id), []).append(node_id)

  groups = []
  root_to_group = {}
  for index, (root, members) in enumerate(producers.items()):
    group_id = f'g{index}'
    root_to_group[root] = group_id
    channels = {member: shapes[member][1] for member in members}
    if len(set(channels.values())) > 1:
      raise errors.ConflictingConstraint(
          f'Width group {group_id} joins layers of different widths: '
          f'{channels}')
    static = any(
        graph.GetNode(member).kind == OpKind.INPUT
        or not roles[member].has_width for member in members)
    groups.append(WidthGroup(
        group_id=group_id, members=tuple(members),
        max_channels=channels[members[0]], static=static))

  node_group = {
      node_id: root_to_group[union_find.Find(node_id)]
      for node_id in graph.order}
  for group in groups:
    logger.debug(
        'Width group %s (%s): %s', group.group_id,
        'static' if group.static else 'elastic', ', '.join(group.members))
  return WidthGrouping(groups=tuple(groups), node_group=node_group)
