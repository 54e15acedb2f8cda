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
"""SGD with momentum and weight decay over masked gradients."""
from __future__ import annotations
import dataclasses
from typing import Dict

import numpy as np

from elasticnas.engine import gradients as gradients_lib
from elasticnas.ir import graph as graph_lib


@dataclasses.dataclass
class OptimizerState:
  """The SGD state.

  Attributes:
    learning_rate: the learning rate.
    momentum: the momentum coefficient.
    weight_decay: the L2 weight decay.
    buffers: the momentum buffers, created on first use.
  """
  learning_rate: float = 0.01
  momentum: float = 0.9
  weight_decay: float = 1e-4
  buffers: Dict[str, np.ndarray] = dataclasses.field(default_factory=dict)

  def __post_init__(self):
    for name in ('learning_rate', 'momentum', 'weight_decay'):
      if getattr(self, name) < 0:
        raise ValueError(f'{name} must not be negative')


def SgdStep(
    weights: graph_lib.WeightStore,
    grads: gradients_lib.GradientStore,
    state: OptimizerState):
  """Applies v = momentum·v + g + wd·w and w = w - lr·v in place.

  Only the entries in the gradient masks are updated; everything else,
  momentum buffers included, is left untouched.

  Args:
    weights: the weights to update.
    grads: the gradients.
    state: the optimizer state.
  """
  momentum = np.float32(state.momentum)
  weight_decay = np.float32(state.weight_decay)
  learning_rate = np.float32(state.learning_rate)
  for key, grad in grads.Items():
    mask = grads.Mask(key)
    if not mask.any():
      continue
    weight = weights.Get(key)
    buffer = state.buffers.get(key)
    if buffer is None:
      buffer = np.zeros(weight.shape, dtype=np.float32)
      state.buffers[key] = buffer
    velocity = (
        momentum * buffer[mask] + grad[mask].astype(np.float32)
        + weight_decay * weight[mask])
    buffer[mask] = velocity
    weight[mask] = weight[mask] - learning_rate * velocity
