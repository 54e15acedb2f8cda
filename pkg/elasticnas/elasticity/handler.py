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
"""The elasticity handler: option registry, sampler and activator."""
from __future__ import annotations
from typing import Any, Dict, Iterable, Optional, Tuple, Union

import numpy as np

from elasticnas import definitions
from elasticnas.elasticity import network as network_lib
from elasticnas.elasticity import space as space_lib

Dimension = definitions.Dimension


class ElasticityHandler:
  """Samples and activates subnetworks of a super-network.

  Attributes:
    network: the super-network.
    rng: the random generator used for sampling.
  """

  def __init__(
      self,
      network: network_lib.SuperNetwork,
      rng: Union[int, np.random.Generator, None] = 0):
    """Initializes the ElasticityHandler.

    Args:
      network: the super-network.
      rng: a seed or a random generator.
    """
    self.network = network
    self.rng = (
        rng if isinstance(rng, np.random.Generator)
        else np.random.default_rng(rng))

  @property
  def registry(self) -> Dict[str, Tuple[Any, ...]]:
    """The options of every dimension, keyed by dimension name."""
    return {
        dimension.name: dimension.options
        for dimension in self.network.space.Dimensions()}

  def Activate(self, config: space_lib.SubnetworkConfig):
    """Makes config the active configuration.

    Raises:
      errors.InvalidChoice: if the config is not in the space.
    """
    self.network.space.Validate(config)
    self.network.active = config

  def SampleRandom(
      self,
      dimensions: Optional[Iterable[Dimension]] = None
  ) -> space_lib.SubnetworkConfig:
    """Samples every dimension uniformly and independently.

    Args:
      dimensions: the dimension families to sample; the others are pinned at
          their maximal option. All families by default.

    Returns:
      the sampled configuration.
    """
    unlocked = set(Dimension) if dimensions is None else set(dimensions)
    choices = []
    for dimension in self.network.space.Dimensions():
      if dimension.family in unlocked:
        choices.append(
            dimension.options[self.rng.integers(len(dimension.options))])
      else:
        choices.append(dimension.maximal)
    return self.network.space.ConfigFromChoices(choices)

  def Minimal(self) -> space_lib.SubnetworkConfig:
    """Returns the minimal configuration."""
    return space_lib.MinimalConfig(self.network.space)

  def Maximal(self) -> space_lib.SubnetworkConfig:
    """Returns the maximal configuration."""
    return space_lib.MaximalConfig(self.network.space)
