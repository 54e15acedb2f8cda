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
"""NSGA-II search over the subnetworks of a super-network."""
from __future__ import annotations
from concurrent import futures
import dataclasses
import logging
from typing import (
    Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union)

import numpy as np

from elasticnas import config as config_lib
from elasticnas import datasets
from elasticnas import metrics
from elasticnas import training
from elasticnas.elasticity import network as network_lib
from elasticnas.elasticity import space as space_lib
from elasticnas.search import nsga2

logger = logging.getLogger(__name__)

# (top-1 accuracy, MACs, params) of one subnetwork.
Evaluation = Tuple[float, int, int]
Evaluator = Callable[[space_lib.SubnetworkConfig], Evaluation]


@dataclasses.dataclass(frozen=True)
class Individual:
  """An evaluated subnetwork.

  Attributes:
    genome: the option index of every dimension.
    config: the decoded configuration.
    accuracy: the top-1 validation accuracy.
    macs: the MACs.
    params: the parameter count.
    generation: the generation of the first evaluation.
    genome_hash: the genome hash.
    rank: the non-domination front index.
    crowding: the crowding distance within the front.
  """
  genome: nsga2.Genome
  config: space_lib.SubnetworkConfig
  accuracy: float
  macs: int
  params: int
  generation: int
  genome_hash: int
  rank: int = 0
  crowding: float = 0.0

  @property
  def objectives(self) -> nsga2.Objectives:
    """The (accuracy, macs) objectives."""
    return (self.accuracy, self.macs)

  @property
  def config_id(self) -> str:
    """The hexadecimal genome hash."""
    return f'{self.genome_hash:016x}'


def _SelectionKey(individual: Individual) -> Tuple[int, float, int]:
  return (individual.rank, -individual.crowding, individual.genome_hash)


def RankAndCrowd(
    individuals: Sequence[Individual]) -> List[List[Individual]]:
  """Returns the fronts with rank and crowding assigned to every member."""
  fronts = nsga2.FastNonDominatedSort(
      [individual.objectives for individual in individuals])
  ranked = []
  for rank, front in enumerate(fronts):
    distances = nsga2.CrowdingDistance(
        [individuals[index].objectives for index in front])
    ranked.append([
        dataclasses.replace(
            individuals[index], rank=rank, crowding=float(distance))
        for index, distance in zip(front, distances)])
  return ranked


@dataclasses.dataclass
class ParetoArchive:
  """Every evaluated subnetwork and the current Pareto front.

  Attributes:
    individuals: the evaluated individuals keyed by genome hash.
    front: the reported front, at most k rank-0 individuals.
    evaluations: the evaluation requests, cache hits included.
    unique_evaluations: the number of distinct evaluated genomes.
    generation: the last completed generation.
  """
  individuals: Dict[int, Individual] = dataclasses.field(default_factory=dict)
  front: List[Individual] = dataclasses.field(default_factory=list)
  evaluations: int = 0
  unique_evaluations: int = 0
  generation: int = 0

  def __len__(self) -> int:
    return len(self.individuals)

  def Lookup(self, genome: Sequence[int]) -> Optional[Individual]:
    """Returns the evaluated individual of a genome, if any."""
    return self.individuals.get(nsga2.GenomeHash(genome))

  def Members(self) -> List[Individual]:
    """Returns every evaluated individual in genome-hash order."""
    return [self.individuals[key] for key in sorted(self.individuals)]

  def Ranked(self) -> List[Individual]:
    """Returns every evaluated individual by rank, MACs and accuracy."""
    return sorted(
        self.individuals.values(), key=lambda member: (
            member.rank, member.macs, -member.accuracy, member.genome_hash))

  def UpdateFront(self, k: int):
    """Ranks every evaluated individual and recomputes the front.

    Rank and crowding are stored on every member of the archive. When the
    non-dominated set exceeds k, the least crowded members are kept, ties
    broken by lower genome hash. The front is ordered by ascending MACs,
    then descending accuracy.
    """
    fronts = RankAndCrowd(self.Members())
    for ranked in fronts:
      for member in ranked:
        self.individuals[member.genome_hash] = member
    front = fronts[0] if fronts else []
    if len(front) > k:
      front = sorted(front, key=_SelectionKey)[:k]
    self.front = sorted(
        front, key=lambda member: (
            member.macs, -member.accuracy, member.genome_hash))


class SubnetworkEvaluator:
  """Evaluates subnetworks on a fixed validation subset.

  Evaluation reads the shared weights only, so one evaluator may be called
  from several threads.
  """

  def __init__(
      self,
      network: network_lib.SuperNetwork,
      dataset: datasets.Dataset):
    self.network = network
    self.dataset = dataset

  def __call__(self, config: space_lib.SubnetworkConfig) -> Evaluation:
    costs = metrics.CountMacs(self.network, config)
    accuracy = training.Evaluate(self.network, config, self.dataset)
    return accuracy, costs.total_macs, costs.total_params


class _Search:
  """The state of one NSGA-II run."""

  def __init__(
      self,
      space: space_lib.SearchSpace,
      evaluator: Evaluator,
      settings: config_lib.SearchSettings,
      rng: np.random.Generator,
      jobs: int,
      checkpoint: Optional[Callable[[ParetoArchive], None]]):
    self.space = space
    self.evaluator = evaluator
    self.settings = settings
    self.rng = rng
    self.jobs = max(1, jobs)
    self.checkpoint = checkpoint
    self.cardinalities = np.asarray(nsga2.GeneCardinalities(space))
    self.archive = ParetoArchive()

  def InitialGenomes(self) -> List[nsga2.Genome]:
    genomes = [
        nsga2.EncodeGenome(self.space, space_lib.MaximalConfig(self.space)),
        nsga2.EncodeGenome(self.space, space_lib.MinimalConfig(self.space))]
    while len(genomes) < self.settings.population:
      genomes.append(self.RandomGenome())
    return genomes

  def RandomGenome(self) -> nsga2.Genome:
    return tuple(
        int(gene) for gene in self.rng.integers(self.cardinalities))

  def Evaluate(
      self, genomes: Sequence[nsga2.Genome],
      generation: int) -> List[Individual]:
    """Evaluates genomes, looking up the archive first.

    New genomes are evaluated concurrently and merged in genome-hash order.
    """
    hashes = [nsga2.GenomeHash(genome) for genome in genomes]
    pending: Dict[int, nsga2.Genome] = {}
    for genome, genome_hash in zip(genomes, hashes):
      self.archive.evaluations += 1
      if genome_hash not in self.archive.individuals:
        pending.setdefault(genome_hash, genome)

    order = sorted(pending)
    configs = [nsga2.DecodeGenome(self.space, pending[key]) for key in order]
    try:
      if self.jobs > 1 and len(configs) > 1:
        with futures.ThreadPoolExecutor(max_workers=self.jobs) as executor:
          results = list(executor.map(self.evaluator, configs))
      else:
        results = [self.evaluator(config) for config in configs]
    except Exception:
      if self.checkpoint is not None:
        self.archive.UpdateFront(self.settings.k)
        self.checkpoint(self.archive)
      raise

    for genome_hash, config, (accuracy, macs, params) in zip(
        order, configs, results):
      self.archive.individuals[genome_hash] = Individual(
          genome=pending[genome_hash], config=config, accuracy=float(accuracy),
          macs=int(macs), params=int(params), generation=generation,
          genome_hash=genome_hash)
      self.archive.unique_evaluations += 1
    return [self.archive.individuals[genome_hash] for genome_hash in hashes]

  def Tournament(self, population: Sequence[Individual]) -> Individual:
    picks = self.rng.integers(
        len(population), size=self.settings.tournament_size)
    return min((population[pick] for pick in picks), key=_SelectionKey)

  def Crossover(
      self, first: nsga2.Genome,
      second: nsga2.Genome) -> Tuple[List[int], List[int]]:
    child_a, child_b = list(first), list(second)
    fires = self.rng.random() < self.settings.crossover_rate
    swaps = self.rng.random(len(first)) < 0.5
    if fires:
      for index in np.flatnonzero(swaps):
        child_a[index], child_b[index] = child_b[index], child_a[index]
    return child_a, child_b

  def Mutate(self, genome: List[int]) -> nsga2.Genome:
    mutates = self.rng.random(len(genome)) < self.settings.mutation_rate
    resampled = self.rng.integers(self.cardinalities)
    return tuple(
        int(resampled[index]) if mutates[index] else int(gene)
        for index, gene in enumerate(genome))

  def Offspring(self, population: Sequence[Individual]) -> List[nsga2.Genome]:
    children = []
    while len(children) < self.settings.population:
      first = self.Tournament(population)
      second = self.Tournament(population)
      child_a, child_b = self.Crossover(first.genome, second.genome)
      children.append(self.Mutate(child_a))
      children.append(self.Mutate(child_b))
    return children[:self.settings.population]

  def EnvironmentalSelection(
      self, candidates: Iterable[Individual]) -> List[Individual]:
    """Keeps the best population-many distinct candidates."""
    unique: Dict[int, Individual] = {}
    for candidate in candidates:
      unique.setdefault(candidate.genome_hash, candidate)
    ordered = [unique[key] for key in sorted(unique)]
    survivors: List[Individual] = []
    for front in RankAndCrowd(ordered):
      room = self.settings.population - len(survivors)
      if room <= 0:
        break
      survivors.extend(sorted(front, key=_SelectionKey)[:room])
    return survivors

  def Run(self) -> ParetoArchive:
    population = self.EnvironmentalSelection(
        self.Evaluate(self.InitialGenomes(), 0))
    self.archive.UpdateFront(self.settings.k)
    self._LogGeneration()
    generation = 0
    while self.archive.evaluations < self.settings.budget:
      generation += 1
      offspring = self.Evaluate(self.Offspring(population), generation)
      population = self.EnvironmentalSelection(population + offspring)
      self.archive.generation = generation
      self.archive.UpdateFront(self.settings.k)
      self._LogGeneration()
    return self.archive

  def _LogGeneration(self):
    logger.info(
        'generation %d: front %d, evaluations %d (%d unique)',
        self.archive.generation, len(self.archive.front),
        self.archive.evaluations, self.archive.unique_evaluations)


def Evolve(
    network: network_lib.SuperNetwork,
    dataset: datasets.Dataset,
    settings: config_lib.SearchSettings,
    seed: int = config_lib.DEFAULT_SEED,
    jobs: int = 1,
    evaluator: Optional[Evaluator] = None,
    checkpoint: Optional[Callable[[ParetoArchive], None]] = None
) -> ParetoArchive:
  """Searches the Pareto front of (accuracy, MACs) with NSGA-II.

  The initial population holds the maximal and minimal subnetworks and
  random samples. Each generation selects parents by binary tournament on
  (rank, crowding), applies uniform crossover and per-gene mutation, and
  keeps the best distinct individuals of parents and offspring. The search
  stops once the evaluation counter reaches the budget.

  Args:
    network: the trained super-network.
    dataset: the validation dataset.
    settings: the search settings.
    seed: the seed used when settings.seed is None.
    jobs: the number of concurrent evaluations.
    evaluator: maps a config to (accuracy, macs, params); the validation
        accuracy and the counted costs by default.
    checkpoint: called with the archive before an evaluation error
        propagates.

  Returns:
    the ParetoArchive.

  Raises:
    errors.ConfigError: if the settings are invalid.
  """
  settings.Validate()
  seed = settings.seed if settings.seed is not None else seed
  evaluator = evaluator or SubnetworkEvaluator(network, dataset)
  search = _Search(
      network.space, evaluator, settings, np.random.default_rng(seed), jobs,
      checkpoint)
  return search.Run()


def OutperformingRegion(
    archive: Union[ParetoArchive, Iterable],
    baseline: nsga2.Objectives) -> List:
  """Returns the members at least as accurate as and cheaper than baseline.

  Every evaluated member qualifies, not only the reported front.

  Args:
    archive: a ParetoArchive or any iterable of members with accuracy and
        macs attributes.
    baseline: the (accuracy, macs) of the baseline.

  Returns:
    the members ordered by ascending MACs.
  """
  members = (
      archive.Members() if isinstance(archive, ParetoArchive) else archive)
  accuracy, macs = baseline
  region = [
      member for member in members
      if member.accuracy >= accuracy and member.macs < macs]
  return sorted(region, key=lambda member: (
      member.macs, -member.accuracy, member.config_id))
