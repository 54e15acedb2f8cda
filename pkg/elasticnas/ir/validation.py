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
"""Structural validation of the graph IR."""
from __future__ import annotations
import collections
import dataclasses
from typing import Dict, List, Tuple

from elasticnas import definitions
from elasticnas import errors
from elasticnas.ir import graph as graph_lib
from elasticnas.ir import shapes as shapes_lib

OpKind = definitions.OpKind
DiagnosticCode = definitions.DiagnosticCode


@dataclasses.dataclass(frozen=True)
class Diagnostic:
  """A graph validation finding.

  Attributes:
    code: the diagnostic code.
    node_id: the node the finding is about.
    reason: a human-readable reason.
  """
  code: DiagnosticCode
  node_id: str
  reason: str

  def __str__(self) -> str:
    return f'{self.code.value}({self.node_id}): {self.reason}'


def ValidateGraph(graph: graph_lib.ModelGraph) -> List[Diagnostic]:
  """Checks every ModelGraph invariant.

  Later checks (cycles, reachability, shapes, weight shapes) only run when
  the checks they depend on passed.

  Args:
    graph: the graph to validate.

  Returns:
    the diagnostics, empty if and only if the graph is valid.
  """
  diagnostics = _CheckStructure(graph)
  if diagnostics:
    return diagnostics

  try:
    graph_lib.TopologicalOrder(graph)
  except errors.CycleDetected as error:
    return [Diagnostic(
        DiagnosticCode.CYCLE, error.edge[1],
        f'back edge {error.edge[0]} -> {error.edge[1]}')]

  diagnostics = _CheckReachability(graph)
  if diagnostics:
    return diagnostics

  try:
    shapes = shapes_lib.InferShapes(graph)
  except errors.ShapeMismatch as error:
    return [Diagnostic(
        DiagnosticCode.SHAPE_MISMATCH, error.node_id, str(error))]
  return _CheckWeightShapes(graph, shapes)


def _CheckStructure(graph: graph_lib.ModelGraph) -> List[Diagnostic]:
  """Checks ids, boundaries, edges, arity, attributes and weight refs."""
  diagnostics = []
  counts = collections.Counter(node.id for node in graph.nodes)
  for node_id, count in counts.items():
    if count > 1:
      diagnostics.append(Diagnostic(
          DiagnosticCode.DUPLICATE_ID, node_id, f'declared {count} times'))

  for kind, missing, multiple, boundary_id in (
      (OpKind.INPUT, DiagnosticCode.MISSING_INPUT,
       DiagnosticCode.MULTIPLE_INPUTS, graph.input_id),
      (OpKind.OUTPUT, DiagnosticCode.MISSING_OUTPUT,
       DiagnosticCode.MULTIPLE_OUTPUTS, graph.output_id)):
    found = [node.id for node in graph.nodes if node.kind == kind]
    if not found:
      diagnostics.append(Diagnostic(missing, boundary_id, f'no {kind.value}'))
    elif len(found) > 1:
      for node_id in found[1:]:
        diagnostics.append(Diagnostic(
            multiple, node_id, f'{len(found)} {kind.value} nodes'))
    elif found[0] != boundary_id:
      diagnostics.append(Diagnostic(
          DiagnosticCode.BOUNDARY_MISMATCH, boundary_id,
          f'{kind.value} node is {found[0]}'))

  for node in graph.nodes:
    diagnostics.extend(_CheckNode(graph, node))
  return diagnostics


def _CheckNode(
    graph: graph_lib.ModelGraph, node: graph_lib.LayerNode
) -> List[Diagnostic]:
  """Checks the edges, arity, attributes and weight refs of one node."""
  diagnostics = []
  for input_id in node.inputs:
    if input_id not in graph:
      diagnostics.append(Diagnostic(
          DiagnosticCode.UNKNOWN_INPUT, node.id, f'unknown input {input_id}'))

  arity = definitions.ARITY.get(node.kind, definitions.DEFAULT_ARITY)
  if arity is None and len(node.inputs) < 2:
    diagnostics.append(Diagnostic(
        DiagnosticCode.ARITY, node.id,
        f'{node.kind.value} needs at least 2 inputs'))
  elif arity is not None and len(node.inputs) != arity:
    diagnostics.append(Diagnostic(
        DiagnosticCode.ARITY, node.id,
        f'{node.kind.value} needs {arity} inputs, has {len(node.inputs)}'))

  for name in definitions.REQUIRED_ATTRIBUTES.get(node.kind, ()):
    value = node.Attr(name)
    if value is None:
      diagnostics.append(Diagnostic(
          DiagnosticCode.MISSING_ATTRIBUTE, node.id, f'missing {name}'))
    elif not _IsValidAttribute(name, value):
      diagnostics.append(Diagnostic(
          DiagnosticCode.MISSING_ATTRIBUTE, node.id,
          f'invalid {name}={value!r}'))

  for role in definitions.WEIGHT_ROLES.get(node.kind, ()):
    key = node.weight_refs.get(role)
    if key is None:
      diagnostics.append(Diagnostic(
          DiagnosticCode.MISSING_WEIGHT, node.id, f'no {role} reference'))
    elif key not in graph.weights:
      diagnostics.append(Diagnostic(
          DiagnosticCode.MISSING_WEIGHT, node.id, f'missing weight {key}'))
  for role in definitions.OPTIONAL_WEIGHT_ROLES.get(node.kind, ()):
    key = node.weight_refs.get(role)
    if key is not None and key not in graph.weights:
      diagnostics.append(Diagnostic(
          DiagnosticCode.MISSING_WEIGHT, node.id, f'missing weight {key}'))
  return diagnostics


def _IsValidAttribute(name: str, value) -> bool:
  """Returns True if an attribute value is well-formed."""
  if name == 'shape':
    return (
        isinstance(value, (list, tuple)) and len(value) == 3
        and all(isinstance(dim, int) and dim >= 1 for dim in value))
  if name == 'epsilon':
    return isinstance(value, (int, float)) and value > 0
  if name == 'padding':
    return isinstance(value, int) and value >= 0
  return isinstance(value, int) and value >= 1


def _CheckReachability(graph: graph_lib.ModelGraph) -> List[Diagnostic]:
  """Checks every node is reachable from Input and reaches Output."""
  forward = _Closure(graph.input_id, graph.Consumers)
  backward = _Closure(
      graph.output_id, lambda node_id: graph.GetNode(node_id).inputs)
  diagnostics = []
  for node in graph.nodes:
    if node.id not in forward:
      diagnostics.append(Diagnostic(
          DiagnosticCode.UNREACHABLE, node.id, 'not reachable from the input'))
    if node.id not in backward:
      diagnostics.append(Diagnostic(
          DiagnosticCode.DEAD_END, node.id, 'does not reach the output'))
  return diagnostics


def _Closure(start: str, neighbours) -> set:
  """Returns the nodes reachable from start."""
  seen = {start}
  stack = [start]
  while stack:
    for neighbour in neighbours(stack.pop()):
      if neighbour not in seen:
        seen.add(neighbour)
        stack.append(neighbour)
  return seen


def _ExpectedWeightShapes(
    node: graph_lib.LayerNode, input_shape: graph_lib.TensorShape
) -> Dict[str, Tuple[int, ...]]:
  """Returns the expected shape per weight role of a node."""
  channels = input_shape[1]
  if node.kind == OpKind.CONV2D:
    kernel = node.Attr('kernel_size')
    return {'weight': (node.Attr('out_channels'), channels, kernel, kernel)}
  if node.kind == OpKind.DEPTHWISE_CONV2D:
    kernel = node.Attr('kernel_size')
    return {'weight': (channels, 1, kernel, kernel)}
  if node.kind == OpKind.LINEAR:
    out_features = node.Attr('out_features')
    return {'weight': (out_features, channels), 'bias': (out_features,)}
  if node.kind == OpKind.BATCH_NORM:
    return {role: (channels,) for role in definitions.WEIGHT_ROLES[node.kind]}
  return {}


def _CheckWeightShapes(
    graph: graph_lib.ModelGraph,
    shapes: Dict[str, graph_lib.TensorShape]
) -> List[Diagnostic]:
  """Checks every referenced tensor matches the shape its node implies."""
  diagnostics = []
  for node in graph.nodes:
    if not node.weight_refs:
      continue
    input_shape = shapes[node.inputs[0]]
    for role, expected in _ExpectedWeightShapes(node, input_shape).items():
      key = node.weight_refs.get(role)
      if key is None:
        continue
      actual = graph.weights.Get(key).shape
      if tuple(actual) != expected:
        diagnostics.append(Diagnostic(
            DiagnosticCode.WEIGHT_SHAPE, node.id,
            f'{key} has shape {tuple(actual)}, expected {expected}'))
  return diagnostics
