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
"""Errors for elasticnas."""
from typing import Any, Sequence, Tuple


class Error(Exception):
  """The base elasticnas error."""


class DecoderError(Error):
  """A decoder error."""


class ParserError(Error):
  """A parser error."""


class IoError(Error):
  """An error writing an artifact to disk."""


class ConfigError(Error):
  """An invalid run configuration."""


class ShapeMismatch(Error):
  """Incompatible tensor shapes at a node.

  Attributes:
    node_id: the node where shape inference failed.
    expected: the expected shape (or a description of it).
    actual: the shape that was found.
  """

  def __init__(self, node_id: str, expected: Any, actual: Any):
    super().__init__(
        f'Shape mismatch at {node_id}: expected {expected}, got {actual}')
    self.node_id = node_id
    self.expected = expected
    self.actual = actual


class CycleDetected(Error):
  """The graph contains a cycle.

  Attributes:
    edge: one back edge (source, target) of the cycle.
  """

  def __init__(self, source: str, target: str):
    super().__init__(f'Cycle detected through edge {source} -> {target}')
    self.edge: Tuple[str, str] = (source, target)


class InvalidGraph(Error):
  """A graph failed validation.

  Attributes:
    diagnostics: the validation diagnostics.
  """

  def __init__(self, diagnostics: Sequence[Any]):
    reasons = '; '.join(str(diagnostic) for diagnostic in diagnostics)
    super().__init__(f'Invalid graph: {reasons}')
    self.diagnostics = list(diagnostics)


class WeightIndexOutOfBounds(ParserError):
  """A weight index entry points outside of the weight payload."""


class ChecksumMismatch(ParserError):
  """The weight payload does not match the manifest checksum."""


class BadMagic(ParserError):
  """An IDX file has an unexpected magic number."""


class DimensionMismatch(ParserError):
  """IDX image and label files disagree on the sample count."""


class ConflictingConstraint(Error):
  """Channel constraints force incompatible layers into one width group."""


class EmptySpace(Error):
  """The generated search space contains a single configuration."""


class FidelityCheckFailed(Error):
  """The maximal subnetwork does not reproduce the pre-trained model.

  Attributes:
    max_abs_diff: the largest absolute difference between the outputs.
  """

  def __init__(self, max_abs_diff: float):
    super().__init__(
        f'Fidelity check failed: max abs difference {max_abs_diff:.3e}')
    self.max_abs_diff = max_abs_diff


class InvalidChoice(Error):
  """A subnetwork configuration value outside of its options.

  Attributes:
    dimension: the dimension name.
    value: the rejected value.
  """

  def __init__(self, dimension: str, value: Any):
    super().__init__(f'Invalid choice {value!r} for dimension {dimension}')
    self.dimension = dimension
    self.value = value


class NonFiniteActivation(Error):
  """A node produced NaN or Inf values."""

  def __init__(self, node_id: str):
    super().__init__(f'Non-finite activation at {node_id}')
    self.node_id = node_id


class NonFiniteGradient(Error):
  """A weight gradient contains NaN or Inf values."""

  def __init__(self, key: str):
    super().__init__(f'Non-finite gradient for {key}')
    self.key = key
