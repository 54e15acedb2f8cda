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
"""Genome encoding, non-dominated sorting and crowding distance.

Objectives are (accuracy, macs) pairs; accuracy is maximized and MACs are
minimized.
"""
from __future__ import annotations
from typing import List, Sequence, Tuple

import numpy as np

from elasticnas import errors
from elasticnas import utils
from elasticnas.elasticity import space as space_lib

Objectives = Tuple[float, int]
Genome = Tuple[int, ...]


def EncodeGenome(
    space: space_lib.SearchSpace,
    config: space_lib.SubnetworkConfig) -> Genome:
  """Returns the option index of every dimension of a config.

  Raises:
    errors.InvalidChoice: if the config is not in the space.
  """
  space.Validate(config)
  return tuple(
      dimension.options.index(choice)
      for dimension, choice in zip(space.Dimensions(), space.Choices(config)))


def DecodeGenome(
    space: space_lib.SearchSpace,
    genome: Sequence[int]) -> space_lib.SubnetworkConfig:
  """Returns the config of a genome.

  Raises:
    errors.InvalidChoice: if a gene is outside of its dimension.
  """
  dimensions = space.Dimensions()
  if len(genome) != len(dimensions):
    raise errors.InvalidChoice('genome', tuple(genome))
  choices = []
  for dimension, gene in zip(dimensions, genome):
    if not 0 <= gene < len(dimension.options):
      raise errors.InvalidChoice(dimension.name, gene)
    choices.append(dimension.options[gene])
  return space.ConfigFromChoices(choices)


def GeneCardinalities(space: space_lib.SearchSpace) -> Tuple[int, ...]:
  """Returns the number of options of every gene."""
  return tuple(len(dimension.options) for dimension in space.Dimensions())


def GenomeHash(genome: Sequence[int]) -> int:
  """Returns the FNV-1a hash of the little-endian int64 genome bytes."""
  return utils.Fnv1a64(np.asarray(genome, dtype='<i8').tobytes())


def Dominates(a: Objectives, b: Objectives) -> bool:
  """True if a is at least as good as b everywhere and better somewhere."""
  accuracy_a, macs_a = a
  accuracy_b, macs_b = b
  return (accuracy_a >= accuracy_b and macs_a <= macs_b
          and (accuracy_a > accuracy_b or macs_a < macs_b))


def FastNonDominatedSort(
    objectives: Sequence[Objectives]) -> List[List[int]]:
  """Partitions a population into non-domination fronts.

  Args:
    objectives: the objectives of every individual.

  Returns:
    the fronts as lists of ascending indices into objectives; front 0 is the
    non-dominated set.
  """
  count = len(objectives)
  dominated_by: List[List[int]] = [[] for _ in range(count)]
  domination_count = [0] * count
  for p in range(count):
    for q in range(p + 1, count):
      if Dominates(objectives[p], objectives[q]):
        dominated_by[p].append(q)
        domination_count[q] += 1
      elif Dominates(objectives[q], objectives[p]):
        dominated_by[q].append(p)
        domination_count[p] += 1
  fronts = [[p for p in range(count) if not domination_count[p]]]

  while fronts[-1]:
    next_front = []
    for p in fronts[-1]:
      for q in dominated_by[p]:
        domination_count[q] -= 1
        if not domination_count[q]:
          next_front.append(q)
    fronts.append(sorted(next_front))
  fronts.pop()
  return fronts


def CrowdingDistance(objectives: Sequence[Objectives]) -> np.ndarray:
  """Returns the crowding distance of every member of a front.

  Per objective, the members with the extreme values get +inf and every
  other member adds the gap between its neighbours divided by the range of
  the objective. An objective with zero range adds nothing.

  Args:
    objectives: the objectives of the front members.

  Returns:
    the float64 distances, aligned with objectives.
  """
  count = len(objectives)
  distances = np.zeros(count, dtype=np.float64)
  if not count:
    return distances
  values = np.asarray(objectives, dtype=np.float64).reshape(count, -1)
  for column in range(values.shape[1]):
    order = np.argsort(values[:, column], kind='stable')
    ordered = values[order, column]
    distances[order[0]] = np.inf
    distances[order[-1]] = np.inf
    value_range = ordered[-1] - ordered[0]
    if value_range <= 0 or count < 3:
      continue
    gaps = (ordered[2:] - ordered[:-2]) / value_range
    distances[order[1:-1]] += gaps
  return distances
