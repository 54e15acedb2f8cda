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
"""Unittests for genomes, non-dominated sorting and crowding."""
import math
import unittest

import numpy as np

from elasticnas import errors
from elasticnas import utils
from elasticnas.elasticity import conversion
from elasticnas.ir import models
from elasticnas.search import nsga2


def _PeelFronts(objectives):
  """Returns the fronts by repeatedly removing the non-dominated set."""
  accuracy = np.array([value[0] for value in objectives])
  macs = np.array([value[1] for value in objectives])
  # dominates[q, p] is True if q dominates p.
  dominates = (
      (accuracy[:, None] >= accuracy[None, :])
      & (macs[:, None] <= macs[None, :])
      & ((accuracy[:, None] > accuracy[None, :])
         | (macs[:, None] < macs[None, :])))
  remaining = np.ones(len(objectives), dtype=bool)
  fronts = []
  while remaining.any():
    dominated = dominates[remaining].any(axis=0)
    front = np.flatnonzero(remaining & ~dominated)
    fronts.append([int(index) for index in front])
    remaining[front] = False
  return fronts


class DominatesTest(unittest.TestCase):
  """Unit tests for the Dominates function."""

  def test_cases(self):
    """Tests higher accuracy and fewer MACs dominate."""
    cases = (
        ((0.9, 100), (0.8, 200), True),
        ((0.9, 100), (0.9, 200), True),
        ((0.9, 100), (0.8, 100), True),
        ((0.9, 100), (0.9, 100), False),
        ((0.9, 200), (0.8, 100), False),
        ((0.8, 200), (0.9, 100), False),
    )
    for a, b, expected in cases:
      with self.subTest(a=a, b=b):
        self.assertEqual(nsga2.Dominates(a, b), expected)


class FastNonDominatedSortTest(unittest.TestCase):
  """Unit tests for the FastNonDominatedSort function."""

  def test_against_peeling(self):
    """Tests random populations against a brute-force partition."""
    rng = np.random.default_rng(0)
    for trial in range(100):
      size = int(rng.integers(1, 201))
      objectives = [
          (float(rng.integers(0, 21)) / 20, int(rng.integers(0, 30)))
          for _ in range(size)]
      with self.subTest(trial=trial):
        self.assertEqual(
            nsga2.FastNonDominatedSort(objectives), _PeelFronts(objectives))

  def test_partition(self):
    """Tests every individual lands in exactly one front."""
    objectives = [(0.5, 10), (0.6, 20), (0.4, 30), (0.6, 20), (0.7, 5)]
    fronts = nsga2.FastNonDominatedSort(objectives)
    self.assertEqual(fronts, [[4], [0, 1, 3], [2]])
    self.assertEqual(nsga2.FastNonDominatedSort([]), [])


class CrowdingDistanceTest(unittest.TestCase):
  """Unit tests for the CrowdingDistance function."""

  def test_line(self):
    """Tests interior members sum normalized neighbour gaps."""
    distances = nsga2.CrowdingDistance(
        [(0.1, 10), (0.2, 20), (0.3, 30), (0.5, 40)])
    self.assertTrue(math.isinf(distances[0]))
    self.assertTrue(math.isinf(distances[3]))
    self.assertAlmostEqual(distances[1], 0.2 / 0.4 + 20 / 30)
    self.assertAlmostEqual(distances[2], 0.3 / 0.4 + 20 / 30)

  def test_small_fronts(self):
    """Tests fronts of one or two members are all boundary."""
    self.assertTrue(np.all(np.isinf(nsga2.CrowdingDistance([(0.5, 1)]))))
    self.assertTrue(np.all(np.isinf(
        nsga2.CrowdingDistance([(0.5, 1), (0.6, 2)]))))
    self.assertEqual(nsga2.CrowdingDistance([]).shape, (0,))

  def test_zero_range(self):
    """Tests identical objectives only mark the extremes."""
    distances = nsga2.CrowdingDistance([(0.5, 3)] * 4)
    self.assertEqual(int(np.isinf(distances).sum()), 2)
    self.assertEqual(sorted(distances)[:2], [0.0, 0.0])


class GenomeTest(unittest.TestCase):
  """Unit tests for genome encoding and hashing."""

  @classmethod
  def setUpClass(cls):
    cls.space = conversion.Convert(
        models.BuildToyResNet(), check_fidelity=False).space

  def test_round_trip(self):
    """Tests decoding an encoded configuration gives it back."""
    rng = np.random.default_rng(1)
    cardinalities = nsga2.GeneCardinalities(self.space)
    self.assertEqual(len(cardinalities), len(self.space.Dimensions()))
    for _ in range(50):
      genome = tuple(int(gene) for gene in rng.integers(cardinalities))
      config_value = nsga2.DecodeGenome(self.space, genome)
      self.assertEqual(nsga2.EncodeGenome(self.space, config_value), genome)

  def test_invalid(self):
    """Tests genomes outside the space raise InvalidChoice."""
    size = len(self.space.Dimensions())
    for genome in ((0,) * (size - 1), (0,) * (size - 1) + (2,),
                   (-1,) + (0,) * (size - 1)):
      with self.subTest(genome=genome):
        with self.assertRaises(errors.InvalidChoice):
          nsga2.DecodeGenome(self.space, genome)

  def test_hash(self):
    """Tests the hash covers the little-endian int64 genes."""
    self.assertEqual(nsga2.GenomeHash(()), 0xcbf29ce484222325)
    self.assertEqual(
        nsga2.GenomeHash((1, 2)),
        utils.Fnv1a64(b'\x01' + b'\x00' * 7 + b'\x02' + b'\x00' * 7))
    self.assertNotEqual(nsga2.GenomeHash((1, 2)), nsga2.GenomeHash((2, 1)))


if __name__ == '__main__':
  unittest.main()
