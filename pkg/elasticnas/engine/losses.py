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
"""Classification and distillation losses with their logit gradients."""
from __future__ import annotations
import dataclasses
from typing import Tuple

import numpy as np


def LogSoftmax(logits: np.ndarray) -> np.ndarray:
  """Returns the row-wise log-softmax, stabilized by max subtraction."""
  shifted = logits - logits.max(axis=1, keepdims=True)
  return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def Softmax(logits: np.ndarray) -> np.ndarray:
  """Returns the row-wise softmax."""
  return np.exp(LogSoftmax(logits))


def _CrossEntropyWithGradient(
    logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
  batch = logits.shape[0]
  log_probs = LogSoftmax(logits)
  rows = np.arange(batch)
  loss = -log_probs[rows, labels].sum() / batch
  grad = np.exp(log_probs)
  grad[rows, labels] -= 1
  return float(loss), grad / logits.dtype.type(batch)


def CrossEntropy(logits: np.ndarray, labels: np.ndarray) -> float:
  """Returns the batch mean of -log softmax(logits)[label].

  Args:
    logits: the N,K logits.
    labels: the N class indices.
  """
  return _CrossEntropyWithGradient(logits, labels)[0]


def _DistillationWithGradient(
    student_logits: np.ndarray, teacher_logits: np.ndarray,
    labels: np.ndarray, alpha: float,
    temperature: float) -> Tuple[float, np.ndarray]:
  batch = student_logits.shape[0]
  dtype = student_logits.dtype.type
  scale = dtype(temperature)
  student_log_probs = LogSoftmax(student_logits / scale)
  teacher_log_probs = LogSoftmax(teacher_logits.astype(student_logits.dtype)
                                 / scale)
  teacher_probs = np.exp(teacher_log_probs)
  divergence = (
      teacher_probs * (teacher_log_probs - student_log_probs)).sum() / batch
  ce_loss, ce_grad = _CrossEntropyWithGradient(student_logits, labels)
  loss = alpha * temperature**2 * float(divergence) + (1 - alpha) * ce_loss
  kd_grad = (np.exp(student_log_probs) - teacher_probs) * dtype(
      alpha * temperature / batch)
  return loss, kd_grad + ce_grad * dtype(1 - alpha)


def DistillationLoss(
    student_logits: np.ndarray, teacher_logits: np.ndarray,
    labels: np.ndarray, alpha: float, temperature: float) -> float:
  """Returns alpha·T²·KL(p_teacher ‖ p_student) + (1-alpha)·CE.

  The probabilities are softmaxes of the logits divided by the temperature
  T and the divergence is averaged over the batch.

  Args:
    student_logits: the N,K student logits.
    teacher_logits: the N,K teacher logits.
    labels: the N class indices.
    alpha: the weight of the divergence term, in [0,1].
    temperature: the temperature, positive.
  """
  return _DistillationWithGradient(
      student_logits, teacher_logits, labels, alpha, temperature)[0]


class CrossEntropyObjective:
  """The cross-entropy objective."""

  def __call__(
      self, logits: np.ndarray,
      labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Returns the loss and its gradient with respect to the logits."""
    return _CrossEntropyWithGradient(logits, labels)


@dataclasses.dataclass(frozen=True)
class DistillationObjective:
  """The distillation objective against fixed teacher logits.

  Attributes:
    teacher_logits: the teacher logits, treated as constants.
    alpha: the weight of the divergence term.
    temperature: the temperature.
  """
  teacher_logits: np.ndarray
  alpha: float = 0.5
  temperature: float = 4.0

  def __call__(
      self, logits: np.ndarray,
      labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Returns the loss and its gradient with respect to the logits."""
    return _DistillationWithGradient(
        logits, self.teacher_logits, labels, self.alpha, self.temperature)
