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
"""Shape inference for the graph IR."""
from typing import Callable, Dict, List, Optional

from elasticnas import definitions
from elasticnas import errors
from elasticnas.ir import graph as graph_lib

OpKind = definitions.OpKind
TensorShape = graph_lib.TensorShape


def ConvOutputSize(size: int, kernel: int, stride: int, padding: int) -> int:
  """Returns floor((size + 2*padding - kernel) / stride) + 1."""
  return (size + 2 * padding - kernel) // stride + 1


def _SpatialShape(
    node: graph_lib.LayerNode, shape: TensorShape, channels: int,
    kernel: int, stride: int, padding: int) -> TensorShape:
  """Returns the output shape of a windowed op on an NCHW input."""
  if shape.rank != 4:
    raise errors.ShapeMismatch(node.id, 'rank 4 input', shape)
  height = ConvOutputSize(shape[2], kernel, stride, padding)
  width = ConvOutputSize(shape[3], kernel, stride, padding)
  if height < 1 or width < 1:
    raise errors.ShapeMismatch(
        node.id, f'window {kernel} fitting the input', shape)
  return TensorShape((shape[0], channels, height, width))


def _Conv2D(node, inputs):
  shape = inputs[0]
  return _SpatialShape(
      node, shape, node.Attr('out_channels'), node.Attr('kernel_size'),
      node.Attr('stride'), node.Attr('padding'))


def _DepthwiseConv2D(node, inputs):
  shape = inputs[0]
  if shape.rank != 4:
    raise errors.ShapeMismatch(node.id, 'rank 4 input', shape)
  return _SpatialShape(
      node, shape, shape[1], node.Attr('kernel_size'), node.Attr('stride'),
      node.Attr('padding'))


def _Pool(node, inputs):
  shape = inputs[0]
  if shape.rank != 4:
    raise errors.ShapeMismatch(node.id, 'rank 4 input', shape)
  return _SpatialShape(
      node, shape, shape[1], node.Attr('kernel_size'), node.Attr('stride'),
      node.Attr('padding', 0))


def _Linear(node, inputs):
  shape = inputs[0]
  if shape.rank != 2:
    raise errors.ShapeMismatch(node.id, 'rank 2 input', shape)
  return TensorShape((shape[0], node.Attr('out_features')))


def _PassThrough(node, inputs):
  del node  # Unused.
  return inputs[0]


def _Add(node, inputs):
  first = inputs[0]
  for shape in inputs[1:]:
    if shape != first:
      raise errors.ShapeMismatch(node.id, first, shape)
  return first


def _GlobalAvgPool(node, inputs):
  shape = inputs[0]
  if shape.rank != 4:
    raise errors.ShapeMismatch(node.id, 'rank 4 input', shape)
  return TensorShape((shape[0], shape[1], 1, 1))


def _Flatten(node, inputs):
  del node  # Unused.
  shape = inputs[0]
  if shape.rank == 2:
    return shape
  return TensorShape((shape[0], shape[1] * shape[2] * shape[3]))


_SHAPE_FUNCTIONS: Dict[
    OpKind,
    Callable[[graph_lib.LayerNode, List[TensorShape]], TensorShape]] = {
        OpKind.CONV2D: _Conv2D,
        OpKind.DEPTHWISE_CONV2D: _DepthwiseConv2D,
        OpKind.LINEAR: _Linear,
        OpKind.BATCH_NORM: _PassThrough,
        OpKind.RELU: _PassThrough,
        OpKind.ADD: _Add,
        OpKind.MAX_POOL2D: _Pool,
        OpKind.AVG_POOL2D: _Pool,
        OpKind.GLOBAL_AVG_POOL: _GlobalAvgPool,
        OpKind.FLATTEN: _Flatten,
        OpKind.OUTPUT: _PassThrough,
    }


def InferShapes(
    graph: graph_lib.ModelGraph,
    input_shape: Optional[TensorShape] = None
) -> Dict[str, TensorShape]:
  """Infers the output activation shape of every node.

  The result is a pure function of the graph topology, its attributes and
  input_shape.

  Args:
    graph: a structurally valid graph.
    input_shape: the N,C,H,W input shape, defaults to the declared input
        shape with N=1.

  Returns:
    a map of node id to output shape.

  Raises:
    errors.ShapeMismatch: when the inputs of a node are incompatible.
    errors.CycleDetected: when the graph is cyclic.
  """
  declared = graph.input_shape
  if input_shape is None:
    input_shape = declared
  if not isinstance(input_shape, TensorShape):
    input_shape = TensorShape(input_shape)
  if input_shape.dims[1:] != declared.dims[1:]:
    raise errors.ShapeMismatch(graph.input_id, declared, input_shape)

  shapes: Dict[str, TensorShape] = {}
  for node_id in graph.order:
    node = graph.GetNode(node_id)
    if node.kind == OpKind.INPUT:
      shapes[node_id] = input_shape
      continue
    inputs = [shapes[input_id] for input_id in node.inputs]
    shapes[node_id] = _SHAPE_FUNCTIONS[node.kind](node, inputs)
  return shapes
