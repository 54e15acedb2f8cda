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
"""Super-network training schedules."""
from __future__ import annotations
import csv
import dataclasses
import io
import logging
import pathlib
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from elasticnas import config as config_lib
from elasticnas import datasets
from elasticnas import definitions
from elasticnas import utils
from elasticnas.elasticity import handler as handler_lib
from elasticnas.elasticity import network as network_lib
from elasticnas.elasticity import space as space_lib
from elasticnas.engine import executor
from elasticnas.engine import gradients as gradients_lib
from elasticnas.engine import losses
from elasticnas.engine import optimizer

logger = logging.getLogger(__name__)

Dimension = definitions.Dimension
ScheduleKind = definitions.ScheduleKind

PROGRESSIVE_SHRINKING_STAGES = (
    Dimension.KERNEL, Dimension.DEPTH, Dimension.WIDTH)


@dataclasses.dataclass(frozen=True)
class TrainingSchedule:
  """How a super-network is trained.

  Attributes:
    kind: progressive shrinking or sandwich.
    stages: the dimension families unlocked stage by stage.
    epochs_per_stage: epochs per progressive shrinking stage.
    epochs: sandwich epochs.
    n_random: random subnetworks per sandwich step.
    distillation: use distillation for the sampled subnetworks.
    alpha: the weight of the distillation term.
    temperature: the distillation temperature.
    batch_size: the batch size.
  """
  kind: ScheduleKind = ScheduleKind.SANDWICH
  stages: Tuple[Dimension, ...] = PROGRESSIVE_SHRINKING_STAGES
  epochs_per_stage: int = 1
  epochs: int = 5
  n_random: int = 2
  distillation: bool = True
  alpha: float = 0.5
  temperature: float = 4.0
  batch_size: int = 32

  def __post_init__(self):
    if self.n_random < 0:
      raise ValueError('n_random must not be negative')

  @classmethod
  def FromSettings(
      cls, settings: config_lib.TrainingSettings) -> TrainingSchedule:
    """Builds the schedule of the training settings."""
    return cls(
        kind=settings.schedule_kind,
        epochs_per_stage=settings.epochs_per_stage,
        epochs=settings.epochs,
        n_random=settings.n_random,
        distillation=settings.distillation,
        alpha=settings.distillation_alpha,
        temperature=settings.temperature,
        batch_size=settings.batch_size)


@dataclasses.dataclass(frozen=True)
class EpochRecord:
  """The summary of one training epoch.

  Attributes:
    epoch: the 1-based epoch index over the whole schedule.
    stage: the stage name.
    mean_loss: the mean batch loss.
    acc_max: the validation accuracy of the maximal subnetwork.
    acc_min: the validation accuracy of the minimal subnetwork.
    configs_sampled: the number of subnetwork passes.
  """
  epoch: int
  stage: str
  mean_loss: float
  acc_max: float
  acc_min: float
  configs_sampled: int


@dataclasses.dataclass
class TrainingReport:
  """The per-epoch training summaries.

  Attributes:
    records: the epoch records in order.
    sampled_configs: every configuration trained, in order.
  """
  records: List[EpochRecord] = dataclasses.field(default_factory=list)
  sampled_configs: List[space_lib.SubnetworkConfig] = dataclasses.field(
      default_factory=list)

  def __len__(self) -> int:
    return len(self.records)

  def ToCsv(self) -> str:
    """Returns the report as CSV text."""
    output = io.StringIO()
    writer = csv.writer(output, lineterminator='\n')
    writer.writerow(definitions.REPORT_CSV_HEADER)
    for record in self.records:
      writer.writerow([
          record.epoch, record.stage, f'{record.mean_loss:.6f}',
          f'{record.acc_max:.6f}', f'{record.acc_min:.6f}'])
    return output.getvalue()

  def Write(self, path: Union[str, pathlib.Path]):
    """Writes the report as CSV.

    Raises:
      errors.IoError: if the file cannot be written.
    """
    with utils.AtomicWriter(path, mode='w') as file_object:
      file_object.write(self.ToCsv())


def Evaluate(
    network: network_lib.SuperNetwork,
    config: Optional[space_lib.SubnetworkConfig],
    dataset: datasets.Dataset,
    batch_size: int = definitions.EVALUATION_BATCH_SIZE) -> float:
  """Returns the top-1 accuracy of a subnetwork in evaluation mode.

  Args:
    network: the super-network.
    config: the configuration, None for the active one.
    dataset: a non-empty dataset.
    batch_size: the evaluation batch size.

  Raises:
    ValueError: if the dataset is empty.
  """
  if not len(dataset):
    raise ValueError('Cannot evaluate on an empty dataset')
  if config is not None:
    network.space.Validate(config)
  predictions = executor.Predict(
      network, dataset.images, config=config, batch_size=batch_size)
  return float(np.mean(predictions == dataset.labels))


def AggregateSandwichGradients(
    network: network_lib.SuperNetwork,
    batch: datasets.Batch,
    configs: Sequence[space_lib.SubnetworkConfig],
    distillation: bool = False,
    alpha: float = 0.5,
    temperature: float = 4.0,
    teacher_logits: Optional[np.ndarray] = None
) -> Tuple[float, gradients_lib.GradientStore]:
  """Sums the gradients of several subnetworks on one batch.

  The first configuration is trained with cross-entropy. With
  distillation, the others use the distillation loss against the teacher
  logits, by default the training-mode logits of the first configuration.

  Args:
    network: the super-network.
    batch: the batch.
    configs: the configurations, maximal first.
    distillation: use distillation for configs after the first.
    alpha: the weight of the distillation term.
    temperature: the distillation temperature.
    teacher_logits: fixed teacher logits.

  Returns:
    the mean loss and the gradients summed in the order of configs.
  """
  total = gradients_lib.GradientStore()
  step_losses = []
  for index, config in enumerate(configs):
    objective = losses.CrossEntropyObjective()
    if distillation and index:
      objective = losses.DistillationObjective(
          teacher_logits=teacher_logits, alpha=alpha, temperature=temperature)
    result = executor.ForwardBackward(network, batch, objective, config)
    if not index and teacher_logits is None:
      teacher_logits = result.logits
    total.Accumulate(result.gradients)
    step_losses.append(result.loss)
  return float(np.mean(step_losses)), total


def SandwichTrainStep(
    network: network_lib.SuperNetwork,
    batch: datasets.Batch,
    n_random: int,
    handler: handler_lib.ElasticityHandler,
    state: optimizer.OptimizerState,
    distillation: bool = True,
    alpha: float = 0.5,
    temperature: float = 4.0,
    teacher: Optional[network_lib.SuperNetwork] = None
) -> Tuple[float, List[space_lib.SubnetworkConfig]]:
  """Trains the maximal, the minimal and n_random sampled subnetworks.

  Their gradients are summed and applied in one optimizer step.

  Args:
    network: the super-network.
    batch: the batch.
    n_random: the number of random subnetworks.
    handler: the handler sampling the random subnetworks.
    state: the optimizer state.
    distillation: distill the non-maximal subnetworks.
    alpha: the weight of the distillation term.
    temperature: the distillation temperature.
    teacher: a frozen network providing the soft labels instead of the
        maximal subnetwork.

  Returns:
    the mean loss and the trained configurations.
  """
  configs = [handler.Maximal(), handler.Minimal()]
  configs.extend(handler.SampleRandom() for _ in range(n_random))
  teacher_logits = None
  if distillation and teacher is not None:
    teacher_logits = executor.Forward(teacher, batch)
  loss, gradients = AggregateSandwichGradients(
      network, batch, configs, distillation=distillation, alpha=alpha,
      temperature=temperature, teacher_logits=teacher_logits)
  optimizer.SgdStep(network.weights, gradients, state)
  return loss, configs


def _Record(
    network: network_lib.SuperNetwork,
    validation: datasets.Dataset,
    epoch: int,
    stage: str,
    batch_losses: Sequence[float],
    configs_sampled: int) -> EpochRecord:
  """Evaluates the extreme subnetworks and logs an epoch summary."""
  record = EpochRecord(
      epoch=epoch,
      stage=stage,
      mean_loss=float(np.mean(batch_losses)) if batch_losses else 0.0,
      acc_max=Evaluate(
          network, space_lib.MaximalConfig(network.space), validation),
      acc_min=Evaluate(
          network, space_lib.MinimalConfig(network.space), validation),
      configs_sampled=configs_sampled)
  logger.info(
      'epoch %d (%s): loss %.4f, max acc %.4f, min acc %.4f, %d configs',
      record.epoch, record.stage, record.mean_loss, record.acc_max,
      record.acc_min, record.configs_sampled)
  return record


def SandwichTrain(
    network: network_lib.SuperNetwork,
    dataset: datasets.Dataset,
    schedule: TrainingSchedule,
    rng: np.random.Generator,
    state: optimizer.OptimizerState,
    validation: Optional[datasets.Dataset] = None,
    teacher: Optional[network_lib.SuperNetwork] = None) -> TrainingReport:
  """Trains with the sandwich rule for schedule.epochs epochs.

  Args:
    network: the super-network.
    dataset: the training set.
    schedule: the schedule.
    rng: the random generator for shuffling and sampling.
    state: the optimizer state.
    validation: the validation set, the training set if None.
    teacher: an optional frozen teacher network.

  Returns:
    the TrainingReport.
  """
  validation = dataset if validation is None else validation
  handler = handler_lib.ElasticityHandler(network, rng)
  report = TrainingReport()
  for epoch in range(schedule.epochs):
    batch_losses = []
    configs_sampled = 0
    order = rng.permutation(len(dataset))
    for batch in dataset.Batches(schedule.batch_size, order):
      loss, configs = SandwichTrainStep(
          network, batch, schedule.n_random, handler, state,
          distillation=schedule.distillation, alpha=schedule.alpha,
          temperature=schedule.temperature, teacher=teacher)
      batch_losses.append(loss)
      configs_sampled += len(configs)
      report.sampled_configs.extend(configs)
    report.records.append(_Record(
        network, validation, epoch + 1, ScheduleKind.SANDWICH.value,
        batch_losses, configs_sampled))
  return report


def ProgressiveShrinkingTrain(
    network: network_lib.SuperNetwork,
    dataset: datasets.Dataset,
    schedule: TrainingSchedule,
    rng: np.random.Generator,
    state: Optional[optimizer.OptimizerState] = None,
    validation: Optional[datasets.Dataset] = None,
    teacher: Optional[network_lib.SuperNetwork] = None) -> TrainingReport:
  """Trains stage by stage, unlocking one dimension family per stage.

  In stage s one configuration per batch is sampled uniformly from the
  families unlocked so far, the others pinned at their maximal option. The
  learning rate halves between stages.

  Args:
    network: the super-network.
    dataset: the training set.
    schedule: the schedule.
    rng: the random generator for shuffling and sampling.
    state: the optimizer state, default hyperparameters if None.
    validation: the validation set, the training set if None.
    teacher: an optional frozen teacher network, the maximal subnetwork
        if None.

  Returns:
    the TrainingReport.
  """
  state = state or optimizer.OptimizerState()
  validation = dataset if validation is None else validation
  handler = handler_lib.ElasticityHandler(network, rng)
  base_learning_rate = state.learning_rate
  report = TrainingReport()
  epoch = 0
  for stage_index, family in enumerate(schedule.stages):
    unlocked = schedule.stages[:stage_index + 1]
    state.learning_rate = base_learning_rate * 0.5**stage_index
    for _ in range(schedule.epochs_per_stage):
      batch_losses = []
      order = rng.permutation(len(dataset))
      configs_sampled = 0
      for batch in dataset.Batches(schedule.batch_size, order):
        config = handler.SampleRandom(unlocked)
        objective = losses.CrossEntropyObjective()
        if schedule.distillation:
          source = teacher or network
          teacher_config = None if teacher else handler.Maximal()
          teacher_logits = executor.Forward(
              source, batch, training=teacher is None,
              update_running_stats=False, config=teacher_config)
          objective = losses.DistillationObjective(
              teacher_logits=teacher_logits, alpha=schedule.alpha,
              temperature=schedule.temperature)
        result = executor.ForwardBackward(network, batch, objective, config)
        optimizer.SgdStep(network.weights, result.gradients, state)
        batch_losses.append(result.loss)
        configs_sampled += 1
        report.sampled_configs.append(config)
      epoch += 1
      report.records.append(_Record(
          network, validation, epoch, family.value, batch_losses,
          configs_sampled))
  state.learning_rate = base_learning_rate
  return report


def TrainFixed(
    network: network_lib.SuperNetwork,
    dataset: datasets.Dataset,
    epochs: int,
    rng: np.random.Generator,
    state: optimizer.OptimizerState,
    batch_size: int = 32,
    config: Optional[space_lib.SubnetworkConfig] = None,
    validation: Optional[datasets.Dataset] = None) -> TrainingReport:
  """Trains one configuration with cross-entropy.

  Used to pre-train plain models and to fine-tune a chosen subnetwork.

  Args:
    network: the network.
    dataset: the training set.
    epochs: the number of epochs.
    rng: the random generator for shuffling.
    state: the optimizer state.
    batch_size: the batch size.
    config: the configuration, the active one if None.
    validation: the validation set, the training set if None.

  Returns:
    the TrainingReport; acc_max and acc_min both hold the accuracy of the
    trained configuration.
  """
  validation = dataset if validation is None else validation
  config = network.active if config is None else config
  report = TrainingReport()
  for epoch in range(epochs):
    batch_losses = []
    order = rng.permutation(len(dataset))
    for batch in dataset.Batches(batch_size, order):
      result = executor.ForwardBackward(network, batch, config=config)
      optimizer.SgdStep(network.weights, result.gradients, state)
      batch_losses.append(result.loss)
    accuracy = Evaluate(network, config, validation)
    record = EpochRecord(
        epoch=epoch + 1, stage='fixed', mean_loss=float(np.mean(batch_losses)),
        acc_max=accuracy, acc_min=accuracy, configs_sampled=len(batch_losses))
    logger.info(
        'epoch %d: loss %.4f, accuracy %.4f', record.epoch, record.mean_loss,
        accuracy)
    report.records.append(record)
  return report


def Train(
    network: network_lib.SuperNetwork,
    dataset: datasets.Dataset,
    settings: config_lib.TrainingSettings,
    rng: np.random.Generator,
    validation: Optional[datasets.Dataset] = None,
    teacher: Optional[network_lib.SuperNetwork] = None) -> TrainingReport:
  """Trains a super-network with the schedule of the settings."""
  schedule = TrainingSchedule.FromSettings(settings)
  state = optimizer.OptimizerState(
      learning_rate=settings.learning_rate, momentum=settings.momentum,
      weight_decay=settings.weight_decay)
  if schedule.kind == ScheduleKind.PROGRESSIVE_SHRINKING:
    return ProgressiveShrinkingTrain(
        network, dataset, schedule, rng, state, validation, teacher)
  return SandwichTrain(
      network, dataset, schedule, rng, state, validation, teacher)
