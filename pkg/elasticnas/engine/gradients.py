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
"""Gradient storage for the shared weights."""
from __future__ import annotations
from typing import Dict, Iterable, Iterator, List, Tuple

import numpy as np

from elasticnas import errors


class GradientStore:
  """Full-shape gradients of the shared weights.

  Every gradient has the shape of its weight tensor. A boolean mask of the
  same shape tracks the entries touched by an active configuration; entries
  outside of the mask are exactly zero.
  """

  def __init__(self):
    self._grads: Dict[str, np.ndarray] = {}
    self._masks: Dict[str, np.ndarray] = {}

  def __contains__(self, key: str) -> bool:
    return key in self._grads

  def __len__(self) -> int:
    return len(self._grads)

  def Keys(self) -> List[str]:
    """Returns the keys in insertion order."""
    return list(self._grads)

  def Items(self) -> Iterator[Tuple[str, np.ndarray]]:
    """Yields (key, gradient) pairs."""
    yield from self._grads.items()

  def Get(self, key: str) -> np.ndarray:
    """Returns the full-shape gradient of key.

    Raises:
      KeyError: if no gradient was recorded for key.
    """
    return self._grads[key]

  def Mask(self, key: str) -> np.ndarray:
    """Returns the touched-entry mask of key."""
    return self._masks[key]

  def AddSlice(
      self, key: str, shape: Tuple[int, ...], index: Tuple[slice, ...],
      value: np.ndarray):
    """Adds the gradient of a slice of the tensor key.

    Args:
      key: the weight key.
      shape: the full shape of the weight tensor.
      index: the index of the slice.
      value: the gradient of the slice.

    Raises:
      errors.NonFiniteGradient: if value contains NaN or Inf.
    """
    if not np.all(np.isfinite(value)):
      raise errors.NonFiniteGradient(key)
    if key not in self._grads:
      self._grads[key] = np.zeros(shape, dtype=value.dtype)
      self._masks[key] = np.zeros(shape, dtype=bool)
    self._grads[key][index] += value
    self._masks[key][index] = True

  def Accumulate(self, other: GradientStore) -> GradientStore:
    """Adds another store into this one and returns self."""
    for key, grad in other.Items():
      if key in self._grads:
        self._grads[key] += grad
        self._masks[key] |= other.Mask(key)
      else:
        self._grads[key] = grad.copy()
        self._masks[key] = other.Mask(key).copy()
    return self

  @classmethod
  def Sum(cls, stores: Iterable[GradientStore]) -> GradientStore:
    """Returns the sum of stores, added in the given order."""
    total = cls()
    for store in stores:
      total.Accumulate(store)
    return total

  def Equals(self, other: GradientStore) -> bool:
    """True if both stores hold bit-identical gradients and masks."""
    if sorted(self.Keys()) != sorted(other.Keys()):
      return False
    return all(
        grad.dtype == other.Get(key).dtype
        and grad.tobytes() == other.Get(key).tobytes()
        and np.array_equal(self.Mask(key), other.Mask(key))
        for key, grad in self.Items())
