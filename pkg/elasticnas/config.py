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
"""Run configuration documents."""
from __future__ import annotations
import dataclasses
import json
import pathlib
from typing import Any, Dict, Optional, Type, TypeVar, Union

from elasticnas import definitions
from elasticnas import errors
from elasticnas import utils

PathLike = Union[str, pathlib.Path]
T = TypeVar('T')

DEFAULT_SEED = 42


def _FromMapping(cls: Type[T], value: Any, section: str) -> T:
  """Builds a settings dataclass from a JSON object, rejecting unknown keys."""
  if value is None:
    return cls()
  if not isinstance(value, dict):
    raise errors.ConfigError(f'{section} must be an object')
  known = {field.name for field in dataclasses.fields(cls)}
  unknown = sorted(set(value) - known)
  if unknown:
    raise errors.ConfigError(f'Unknown {section} keys: {", ".join(unknown)}')
  try:
    return cls(**value)
  except (TypeError, ValueError) as error:
    raise errors.ConfigError(f'Invalid {section}: {error}') from error


def _CheckRate(name: str, value: float):
  if not 0.0 <= value <= 1.0:
    raise errors.ConfigError(f'{name} must be in [0,1], got {value}')


def _CheckPositive(name: str, value: float):
  if value <= 0:
    raise errors.ConfigError(f'{name} must be positive, got {value}')


def _CheckNonNegative(name: str, value: float):
  if value < 0:
    raise errors.ConfigError(f'{name} must not be negative, got {value}')


@dataclasses.dataclass(frozen=True)
class ElasticityPolicy:
  """How the search space is generated.

  Attributes:
    width_divisor: each width option is the previous one divided by this.
    min_width: the smallest allowed width option.
    max_width_options: the maximum number of width options per group.
    min_kernel: the smallest allowed kernel option.
    reorder_channels: sort channels by importance before slicing.
  """
  width_divisor: int = 2
  min_width: int = 8
  max_width_options: int = 3
  min_kernel: int = 3
  reorder_channels: bool = True

  def Validate(self):
    """Raises errors.ConfigError if a value is out of range."""
    if self.width_divisor < 2:
      raise errors.ConfigError('width_divisor must be at least 2')
    _CheckPositive('min_width', self.min_width)
    _CheckPositive('max_width_options', self.max_width_options)
    if self.min_kernel < 1 or self.min_kernel % 2 == 0:
      raise errors.ConfigError('min_kernel must be a positive odd number')


@dataclasses.dataclass(frozen=True)
class TrainingSettings:
  """Super-network training settings.

  Attributes:
    schedule: the schedule kind.
    epochs: the number of sandwich epochs.
    epochs_per_stage: the number of epochs per progressive shrinking stage.
    learning_rate: the SGD learning rate.
    momentum: the SGD momentum.
    weight_decay: the SGD weight decay.
    batch_size: the batch size.
    n_random: random subnetworks per sandwich step.
    distillation: use inplace distillation.
    distillation_alpha: the weight of the distillation term.
    temperature: the distillation temperature.
    teacher: where the soft labels come from.
  """
  schedule: str = definitions.ScheduleKind.SANDWICH.value
  epochs: int = 5
  epochs_per_stage: int = 1
  learning_rate: float = 0.01
  momentum: float = 0.9
  weight_decay: float = 1e-4
  batch_size: int = 32
  n_random: int = 2
  distillation: bool = True
  distillation_alpha: float = 0.5
  temperature: float = 4.0
  teacher: str = definitions.DistillationTeacher.SUPERNET.value

  @property
  def schedule_kind(self) -> definitions.ScheduleKind:
    """The schedule as an enum."""
    return definitions.ScheduleKind(self.schedule)

  @property
  def teacher_kind(self) -> definitions.DistillationTeacher:
    """The distillation teacher as an enum."""
    return definitions.DistillationTeacher(self.teacher)

  def Validate(self):
    """Raises errors.ConfigError if a value is out of range."""
    try:
      self.schedule_kind  # pylint: disable=pointless-statement
      self.teacher_kind  # pylint: disable=pointless-statement
    except ValueError as error:
      raise errors.ConfigError(str(error)) from error
    _CheckNonNegative('epochs', self.epochs)
    _CheckNonNegative('epochs_per_stage', self.epochs_per_stage)
    _CheckNonNegative('learning_rate', self.learning_rate)
    _CheckRate('momentum', self.momentum)
    _CheckNonNegative('weight_decay', self.weight_decay)
    _CheckPositive('batch_size', self.batch_size)
    _CheckNonNegative('n_random', self.n_random)
    _CheckRate('distillation_alpha', self.distillation_alpha)
    _CheckPositive('temperature', self.temperature)


@dataclasses.dataclass(frozen=True)
class SearchSettings:
  """NSGA-II search settings.

  Attributes:
    population: the population size, even and at least 4.
    crossover_rate: the probability that crossover fires for a pair.
    mutation_rate: the per-gene mutation probability.
    budget: the evaluation budget.
    front_size: the reported front size k, None for the population size.
    tournament_size: the tournament size.
    validation_size: the number of validation samples used for accuracy.
    seed: the search seed, None to use the run seed.
  """
  population: int = 50
  crossover_rate: float = 0.9
  mutation_rate: float = 0.02
  budget: int = 3000
  front_size: Optional[int] = None
  tournament_size: int = 2
  validation_size: int = 1024
  seed: Optional[int] = None

  @property
  def k(self) -> int:
    """The reported front size."""
    return self.front_size if self.front_size is not None else self.population

  def Validate(self):
    """Raises errors.ConfigError if a value is out of range."""
    if self.population < 4 or self.population % 2:
      raise errors.ConfigError(
          f'population must be even and at least 4, got {self.population}')
    if self.budget < self.population:
      raise errors.ConfigError(
          f'budget {self.budget} is smaller than population '
          f'{self.population}')
    _CheckRate('crossover_rate', self.crossover_rate)
    _CheckRate('mutation_rate', self.mutation_rate)
    _CheckPositive('front_size', self.k)
    if self.tournament_size < 1:
      raise errors.ConfigError('tournament_size must be at least 1')
    _CheckPositive('validation_size', self.validation_size)


@dataclasses.dataclass(frozen=True)
class DataSettings:
  """Dataset settings.

  Attributes:
    train_size: the number of training samples.
    validation_size: the number of validation samples.
    num_classes: the number of classes.
    synthetic_shape: the (C,H,W) sample shape of synthetic data, None for
        the model's input shape.
  """
  train_size: int = 4096
  validation_size: int = 1024
  num_classes: int = 10
  synthetic_shape: Optional[tuple] = None

  def Validate(self):
    """Raises errors.ConfigError if a value is out of range."""
    _CheckPositive('train_size', self.train_size)
    _CheckPositive('validation_size', self.validation_size)
    if self.num_classes < 2:
      raise errors.ConfigError('num_classes must be at least 2')
    if self.synthetic_shape is not None and (
        len(self.synthetic_shape) != 3
        or any(int(dim) < 1 for dim in self.synthetic_shape)):
      raise errors.ConfigError('synthetic_shape must be three positive dims')


@dataclasses.dataclass(frozen=True)
class RunConfig:
  """A complete run configuration.

  Attributes:
    elasticity: the elasticity policy.
    training: the training settings.
    search: the search settings.
    data: the dataset settings.
    seed: the seed every random stream derives from.
  """
  elasticity: ElasticityPolicy = dataclasses.field(
      default_factory=ElasticityPolicy)
  training: TrainingSettings = dataclasses.field(
      default_factory=TrainingSettings)
  search: SearchSettings = dataclasses.field(default_factory=SearchSettings)
  data: DataSettings = dataclasses.field(default_factory=DataSettings)
  seed: int = DEFAULT_SEED

  def Validate(self) -> RunConfig:
    """Validates every section and returns self.

    Raises:
      errors.ConfigError: if a value is out of range.
    """
    if not 0 <= self.seed < 2**64:
      raise errors.ConfigError(f'seed must be a 64-bit integer: {self.seed}')
    self.elasticity.Validate()
    self.training.Validate()
    self.search.Validate()
    self.data.Validate()
    return self

  def WithSeed(self, seed: int) -> RunConfig:
    """Returns a copy with another seed."""
    return dataclasses.replace(self, seed=seed)

  def ToDict(self) -> Dict[str, Any]:
    """Returns the JSON representation."""
    return dataclasses.asdict(self)

  @classmethod
  def FromDict(cls, value: Any) -> RunConfig:
    """Parses and validates a configuration document.

    Missing sections and keys take their defaults.

    Raises:
      errors.ConfigError: if the document is malformed or invalid.
    """
    if not isinstance(value, dict):
      raise errors.ConfigError('Configuration must be a JSON object')
    unknown = sorted(
        set(value) - {'elasticity', 'training', 'search', 'data', 'seed'})
    if unknown:
      raise errors.ConfigError(f'Unknown configuration keys: {unknown}')
    data = _FromMapping(DataSettings, value.get('data'), 'data')
    if data.synthetic_shape is not None:
      data = dataclasses.replace(
          data, synthetic_shape=tuple(data.synthetic_shape))
    seed = value.get('seed', DEFAULT_SEED)
    if not isinstance(seed, int) or isinstance(seed, bool):
      raise errors.ConfigError(f'seed must be an integer: {seed!r}')
    return cls(
        elasticity=_FromMapping(
            ElasticityPolicy, value.get('elasticity'), 'elasticity'),
        training=_FromMapping(
            TrainingSettings, value.get('training'), 'training'),
        search=_FromMapping(SearchSettings, value.get('search'), 'search'),
        data=data,
        seed=seed).Validate()

  @classmethod
  def FromFile(cls, path: PathLike) -> RunConfig:
    """Reads a configuration document.

    Raises:
      errors.ConfigError: if the file cannot be read or is invalid.
    """
    try:
      document = json.loads(pathlib.Path(path).read_text(encoding='utf-8'))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as error:
      raise errors.ConfigError(f'Cannot read {path!s}: {error}') from error
    return cls.FromDict(document)

  def ToFile(self, path: PathLike):
    """Writes the configuration document."""
    text = json.dumps(self.ToDict(), indent=2, sort_keys=True) + '\n'
    with utils.AtomicWriter(path, mode='w') as file_object:
      file_object.write(text)


def LoadPolicy(path: PathLike) -> ElasticityPolicy:
  """Reads an elasticity policy.

  The document is either a bare policy object or a run configuration, whose
  elasticity section is used.

  Raises:
    errors.ConfigError: if the file cannot be read or is invalid.
  """
  try:
    document = json.loads(pathlib.Path(path).read_text(encoding='utf-8'))
  except (OSError, UnicodeDecodeError, json.JSONDecodeError) as error:
    raise errors.ConfigError(f'Cannot read {path!s}: {error}') from error
  if isinstance(document, dict) and 'elasticity' in document:
    return RunConfig.FromDict(document).elasticity
  policy = _FromMapping(ElasticityPolicy, document, 'elasticity')
  policy.Validate()
  return policy
