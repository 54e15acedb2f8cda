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
"""Search spaces and subnetwork configurations."""
from __future__ import annotations
import dataclasses
import itertools
import json
import logging
import math
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

from elasticnas import config as config_lib
from elasticnas import definitions
from elasticnas import errors
from elasticnas.elasticity import blocks as blocks_lib
from elasticnas.elasticity import groups as groups_lib
from elasticnas.elasticity import roles as roles_lib
from elasticnas.ir import graph as graph_lib

logger = logging.getLogger(__name__)

Dimension = definitions.Dimension
OpKind = definitions.OpKind


@dataclasses.dataclass(frozen=True)
class SubnetworkConfig:
  """One point of the search space.

  Attributes:
    width_choice: a map of width group id to active channels.
    kernel_choice: a map of layer id to active kernel size.
    skip_mask: a map of block id to True if the block is omitted.
  """
  width_choice: Mapping[str, int] = dataclasses.field(default_factory=dict)
  kernel_choice: Mapping[str, int] = dataclasses.field(default_factory=dict)
  skip_mask: Mapping[str, bool] = dataclasses.field(default_factory=dict)

  def __post_init__(self):
    object.__setattr__(self, 'width_choice', dict(self.width_choice))
    object.__setattr__(self, 'kernel_choice', dict(self.kernel_choice))
    object.__setattr__(self, 'skip_mask', dict(self.skip_mask))

  def ToDict(self) -> Dict[str, Any]:
    """Returns the JSON representation."""
    return {
        'width': dict(sorted(self.width_choice.items())),
        'kernel': dict(sorted(self.kernel_choice.items())),
        'skip': dict(sorted(self.skip_mask.items())),
    }

  @classmethod
  def FromDict(cls, value: Any) -> SubnetworkConfig:
    """Parses the JSON representation.

    Raises:
      errors.ParserError: if the document is malformed.
    """
    try:
      return cls(
          width_choice={
              str(key): int(item) for key, item in value['width'].items()},
          kernel_choice={
              str(key): int(item) for key, item in value['kernel'].items()},
          skip_mask={
              str(key): bool(item) for key, item in value['skip'].items()})
    except (KeyError, TypeError, ValueError, AttributeError) as error:
      raise errors.ParserError(
          f'Malformed subnetwork configuration: {value!r}') from error

  def ToJson(self) -> str:
    """Returns the canonical JSON text."""
    return json.dumps(self.ToDict(), sort_keys=True)


@dataclasses.dataclass(frozen=True)
class SpaceDimension:
  """One searchable dimension.

  Attributes:
    family: the dimension family.
    key: the width group, layer or block id.
    options: the options; descending sizes, or (False, True) for a block.
  """
  family: Dimension
  key: str
  options: Tuple[Any, ...]

  @property
  def name(self) -> str:
    """A unique name such as 'width:g1'."""
    return f'{self.family.value}:{self.key}'

  @property
  def maximal(self) -> Any:
    """The option of the maximal subnetwork."""
    return self.options[0]

  @property
  def minimal(self) -> Any:
    """The option of the minimal subnetwork."""
    return self.options[-1]


@dataclasses.dataclass(frozen=True)
class SearchSpace:
  """The set of subnetworks of a super-network.

  Attributes:
    width_groups: the elastic width groups.
    kernel_dims: a map of layer id to kernel options.
    skippable_blocks: the skippable blocks.
  """
  width_groups: Tuple[groups_lib.WidthGroup, ...] = ()
  kernel_dims: Mapping[str, Tuple[int, ...]] = dataclasses.field(
      default_factory=dict)
  skippable_blocks: Tuple[blocks_lib.SkippableBlock, ...] = ()

  def __post_init__(self):
    object.__setattr__(self, 'width_groups', tuple(self.width_groups))
    object.__setattr__(self, 'kernel_dims', dict(self.kernel_dims))
    object.__setattr__(self, 'skippable_blocks', tuple(self.skippable_blocks))

  def Dimensions(self) -> List[SpaceDimension]:
    """Returns the dimensions: widths, then kernels, then blocks."""
    dimensions = [
        SpaceDimension(Dimension.WIDTH, group.group_id, tuple(group.options))
        for group in self.width_groups]
    dimensions.extend(
        SpaceDimension(Dimension.KERNEL, layer_id, tuple(options))
        for layer_id, options in self.kernel_dims.items())
    dimensions.extend(
        SpaceDimension(Dimension.DEPTH, block.block_id, (False, True))
        for block in self.skippable_blocks)
    return dimensions

  def Cardinality(self) -> int:
    """Returns the number of subnetworks."""
    return math.prod(len(dimension.options) for dimension in self.Dimensions())

  def ConfigFromChoices(self, choices: Sequence[Any]) -> SubnetworkConfig:
    """Builds a config from one choice per dimension, in dimension order."""
    width, kernel, skip = {}, {}, {}
    targets = {
        Dimension.WIDTH: width, Dimension.KERNEL: kernel,
        Dimension.DEPTH: skip}
    for dimension, choice in zip(self.Dimensions(), choices, strict=True):
      targets[dimension.family][dimension.key] = choice
    return SubnetworkConfig(
        width_choice=width, kernel_choice=kernel, skip_mask=skip)

  def Choices(self, config: SubnetworkConfig) -> List[Any]:
    """Returns the choice of every dimension of a config, in order."""
    sources = {
        Dimension.WIDTH: config.width_choice,
        Dimension.KERNEL: config.kernel_choice,
        Dimension.DEPTH: config.skip_mask}
    return [
        sources[dimension.family][dimension.key]
        for dimension in self.Dimensions()]

  def Enumerate(self) -> Iterator[SubnetworkConfig]:
    """Yields every subnetwork, the last dimension varying fastest."""
    options = [dimension.options for dimension in self.Dimensions()]
    for choices in itertools.product(*options):
      yield self.ConfigFromChoices(choices)

  def Validate(self, config: SubnetworkConfig):
    """Checks a config is complete and within the options.

    Raises:
      errors.InvalidChoice: if a value is missing, unknown or not an option.
    """
    sources = {
        Dimension.WIDTH: config.width_choice,
        Dimension.KERNEL: config.kernel_choice,
        Dimension.DEPTH: config.skip_mask}
    expected = {family: set() for family in sources}
    for dimension in self.Dimensions():
      expected[dimension.family].add(dimension.key)
      value = sources[dimension.family].get(dimension.key)
      if value not in dimension.options:
        raise errors.InvalidChoice(dimension.name, value)
    for family, values in sources.items():
      for key in values:
        if key not in expected[family]:
          raise errors.InvalidChoice(f'{family.value}:{key}', values[key])

  def ToDict(self) -> Dict[str, Any]:
    """Returns the JSON representation."""
    return {
        'width_groups': [group.ToDict() for group in self.width_groups],
        'kernel_dims': {
            key: list(value) for key, value in self.kernel_dims.items()},
        'skippable_blocks': [
            block.ToDict() for block in self.skippable_blocks],
    }


def MinimalConfig(space: SearchSpace) -> SubnetworkConfig:
  """Returns the smallest option per dimension with every block skipped."""
  return space.ConfigFromChoices(
      [dimension.minimal for dimension in space.Dimensions()])


def MaximalConfig(space: SearchSpace) -> SubnetworkConfig:
  """Returns the largest option per dimension with no block skipped."""
  return space.ConfigFromChoices(
      [dimension.maximal for dimension in space.Dimensions()])


def WidthOptions(
    channels: int, policy: config_lib.ElasticityPolicy) -> Tuple[int, ...]:
  """Returns channels, channels/d, channels/d², ... within the policy.

  Halving stops when the width is not divisible, would fall below the
  minimum width, or the option count is reached.
  """
  options = [channels]
  width = channels
  while (len(options) < policy.max_width_options
         and width % policy.width_divisor == 0
         and width // policy.width_divisor >= policy.min_width):
    width //= policy.width_divisor
    options.append(width)
  return tuple(options)


def KernelOptions(
    kernel_size: int, padding: int,
    policy: config_lib.ElasticityPolicy) -> Tuple[int, ...]:
  """Returns the odd kernel sizes from kernel_size down to the minimum.

  A size k is only allowed if the centered crop fits the padding, i.e.
  (kernel_size - k) / 2 <= padding, so the output size is unchanged.
  """
  options = [kernel_size]
  size = kernel_size - 2
  while size >= policy.min_kernel and (kernel_size - size) // 2 <= padding:
    options.append(size)
    size -= 2
  return tuple(options)


def GenerateSearchSpace(
    graph: graph_lib.ModelGraph,
    roles: Mapping[str, roles_lib.ElasticityRole],
    grouping: groups_lib.WidthGrouping,
    policy: Optional[config_lib.ElasticityPolicy] = None,
    blocks: Optional[Sequence[blocks_lib.SkippableBlock]] = None
) -> Tuple[SearchSpace, groups_lib.WidthGrouping,
           Dict[str, roles_lib.ElasticityRole]]:
  """Generates the search space.

  Args:
    graph: a valid graph.
    roles: the roles from DetectElasticLayers.
    grouping: the groups from BuildWidthGroups.
    policy: the elasticity policy, defaults to the default policy.
    blocks: the skippable blocks, detected when None.

  Returns:
    the search space, the grouping with options and the roles with options.

  Raises:
    errors.EmptySpace: if the space has a single subnetwork.
  """
  policy = policy or config_lib.ElasticityPolicy()
  if blocks is None:
    blocks = blocks_lib.DetectSkippableBlocks(graph, grouping.node_group)

  group_options = {}
  for group in grouping.groups:
    if group.static:
      group_options[group.group_id] = (group.max_channels,)
    else:
      group_options[group.group_id] = WidthOptions(group.max_channels, policy)
  grouping = grouping.WithOptions(group_options)

  kernel_dims = {}
  updated_roles = {}
  for node_id in graph.order:
    role = roles[node_id]
    node = graph.GetNode(node_id)
    elasticity = role.elasticity
    width_options = role.width_options
    kernel_options = role.kernel_options
    if role.has_width:
      group = grouping.GetGroup(grouping.node_group[node_id])
      if group.static:
        elasticity &= ~definitions.Elasticity.WIDTH
        width_options = ()
      else:
        width_options = group.options
    if role.has_kernel:
      kernel_options = KernelOptions(
          node.Attr('kernel_size'), node.Attr('padding'), policy)
      kernel_dims[node_id] = kernel_options
    updated_roles[node_id] = dataclasses.replace(
        role, elasticity=elasticity, width_options=width_options,
        kernel_options=kernel_options)

  space = SearchSpace(
      width_groups=grouping.elastic_groups, kernel_dims=kernel_dims,
      skippable_blocks=tuple(blocks))
  if all(len(dimension.options) == 1 for dimension in space.Dimensions()
         ) and not space.skippable_blocks:
    raise errors.EmptySpace('Every dimension has a single option')
  logger.info(
      'Search space: %d width groups, %d kernel dims, %d skippable blocks, '
      '%d subnetworks', len(space.width_groups), len(space.kernel_dims),
      len(space.skippable_blocks), space.Cardinality())
  return space, grouping, updated_roles
