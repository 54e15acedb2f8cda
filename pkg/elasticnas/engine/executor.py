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
"""Forward and backward execution of graphs and active subnetworks.

Execution keeps the dtype of the inputs: weights are cast to it, so a
float64 batch runs the whole network in float64.
"""
from __future__ import annotations
import dataclasses
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from elasticnas import datasets
from elasticnas import definitions
from elasticnas import errors
from elasticnas.elasticity import network as network_lib
from elasticnas.elasticity import space as space_lib
from elasticnas.engine import gradients as gradients_lib
from elasticnas.engine import kernels
from elasticnas.engine import losses
from elasticnas.ir import graph as graph_lib
from elasticnas.ir import shapes as shapes_lib

OpKind = definitions.OpKind

# An objective maps (logits, labels) to (loss, gradient of the logits).
Objective = Callable[[np.ndarray, np.ndarray], Tuple[float, np.ndarray]]
BatchLike = Union[datasets.Batch, np.ndarray]


@dataclasses.dataclass
class Tape:
  """The record of one forward execution.

  Attributes:
    graph: the executed graph.
    training: True if batch statistics were used.
    values: the output of every node.
    saved: per-node values saved for the backward pass.
    running_stats: updated batch norm running statistics by weight key.
  """
  graph: graph_lib.ModelGraph
  training: bool
  values: Dict[str, np.ndarray] = dataclasses.field(default_factory=dict)
  saved: Dict[str, Any] = dataclasses.field(default_factory=dict)
  running_stats: Dict[str, np.ndarray] = dataclasses.field(
      default_factory=dict)

  @property
  def logits(self) -> np.ndarray:
    """The output of the graph."""
    return self.values[self.graph.output_id]


def _Weight(graph: graph_lib.ModelGraph, node: graph_lib.LayerNode,
            role: str, dtype) -> np.ndarray:
  return graph.weights.Get(node.weight_refs[role]).astype(dtype, copy=False)


def _OutputSize(size: int, node: graph_lib.LayerNode) -> int:
  return shapes_lib.ConvOutputSize(
      size, node.Attr('kernel_size'), node.Attr('stride'),
      node.Attr('padding', 0))


def _ConvForward(tape, node, x):
  weight = _Weight(tape.graph, node, 'weight', x.dtype)
  padding = node.Attr('padding')
  padded = kernels.Pad(x, padding)
  channels = (
      node.Attr('out_channels') if node.kind == OpKind.CONV2D else x.shape[1])
  out = np.zeros(
      (x.shape[0], channels, _OutputSize(x.shape[2], node),
       _OutputSize(x.shape[3], node)), dtype=x.dtype)
  if node.kind == OpKind.CONV2D:
    kernels.Conv2DForward(padded, weight, node.Attr('stride'), out)
  else:
    kernels.DepthwiseForward(padded, weight, node.Attr('stride'), out)
  tape.saved[node.id] = padded
  return out


def _ConvBackward(tape, node, dout, grads):
  padded = tape.saved[node.id]
  weight = _Weight(tape.graph, node, 'weight', dout.dtype)
  dpadded = np.zeros_like(padded)
  dweight = np.zeros_like(weight)
  if node.kind == OpKind.CONV2D:
    kernels.Conv2DBackward(
        padded, weight, node.Attr('stride'), dout, dpadded, dweight)
  else:
    kernels.DepthwiseBackward(
        padded, weight, node.Attr('stride'), dout, dpadded, dweight)
  grads[node.weight_refs['weight']] = dweight
  return [kernels.Unpad(dpadded, node.Attr('padding'))]


def _LinearForward(tape, node, x):
  weight = _Weight(tape.graph, node, 'weight', x.dtype)
  out = np.zeros((x.shape[0], weight.shape[0]), dtype=x.dtype)
  kernels.LinearForward(np.ascontiguousarray(x), weight, out)
  if 'bias' in node.weight_refs:
    out += _Weight(tape.graph, node, 'bias', x.dtype)
  tape.saved[node.id] = x
  return out


def _LinearBackward(tape, node, dout, grads):
  x = np.ascontiguousarray(tape.saved[node.id])
  weight = _Weight(tape.graph, node, 'weight', dout.dtype)
  dx = np.zeros_like(x)
  dweight = np.zeros_like(weight)
  kernels.LinearBackward(x, weight, dout, dx, dweight)
  grads[node.weight_refs['weight']] = dweight
  if 'bias' in node.weight_refs:
    grads[node.weight_refs['bias']] = dout.sum(axis=0)
  return [dx]


def _BatchNormAxes(x: np.ndarray) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
  """Returns the reduction axes and the broadcast shape of the channels."""
  if x.ndim == 4:
    return (0, 2, 3), (1, -1, 1, 1)
  return (0,), (1, -1)


def _BatchNormForward(tape, node, x):
  axes, shape = _BatchNormAxes(x)
  gamma = _Weight(tape.graph, node, 'gamma', x.dtype).reshape(shape)
  beta = _Weight(tape.graph, node, 'beta', x.dtype).reshape(shape)
  epsilon = x.dtype.type(node.Attr('epsilon'))
  if tape.training:
    mean = x.mean(axis=axes)
    var = x.var(axis=axes)
    count = x.size // x.shape[1]
    momentum = x.dtype.type(definitions.BATCH_NORM_MOMENTUM)
    unbiased = var * x.dtype.type(count / (count - 1)) if count > 1 else var
    for role, value in (('running_mean', mean), ('running_var', unbiased)):
      key = node.weight_refs[role]
      running = _Weight(tape.graph, node, role, x.dtype)
      tape.running_stats[key] = (
          (1 - momentum) * running + momentum * value)
  else:
    mean = _Weight(tape.graph, node, 'running_mean', x.dtype)
    var = _Weight(tape.graph, node, 'running_var', x.dtype)
  inv_std = 1 / np.sqrt(var + epsilon)
  normalized = (x - mean.reshape(shape)) * inv_std.reshape(shape)
  tape.saved[node.id] = (normalized, inv_std)
  return normalized * gamma + beta


def _BatchNormBackward(tape, node, dout, grads):
  normalized, inv_std = tape.saved[node.id]
  axes, shape = _BatchNormAxes(dout)
  gamma = _Weight(tape.graph, node, 'gamma', dout.dtype).reshape(shape)
  grads[node.weight_refs['gamma']] = (dout * normalized).sum(axis=axes)
  grads[node.weight_refs['beta']] = dout.sum(axis=axes)
  dnormalized = dout * gamma
  if not tape.training:
    return [dnormalized * inv_std.reshape(shape)]
  count = dout.dtype.type(dout.size // dout.shape[1])
  dx = (
      count * dnormalized
      - dnormalized.sum(axis=axes).reshape(shape)
      - normalized * (dnormalized * normalized).sum(axis=axes).reshape(shape)
  ) * (inv_std.reshape(shape) / count)
  return [dx]


def _ReluForward(tape, node, x):
  tape.saved[node.id] = x > 0
  return np.where(tape.saved[node.id], x, x.dtype.type(0))


def _ReluBackward(tape, node, dout, grads):
  del grads  # Unused.
  return [np.where(tape.saved[node.id], dout, dout.dtype.type(0))]


def _MaxPoolForward(tape, node, x):
  padded = kernels.Pad(x, node.Attr('padding', 0), value=-np.inf)
  shape = (x.shape[0], x.shape[1], _OutputSize(x.shape[2], node),
           _OutputSize(x.shape[3], node))
  out = np.zeros(shape, dtype=x.dtype)
  argmax = np.zeros(shape, dtype=np.int64)
  kernels.MaxPoolForward(
      padded, node.Attr('kernel_size'), node.Attr('stride'), out, argmax)
  tape.saved[node.id] = (padded.shape, argmax)
  return out


def _MaxPoolBackward(tape, node, dout, grads):
  del grads  # Unused.
  padded_shape, argmax = tape.saved[node.id]
  dpadded = np.zeros(padded_shape, dtype=dout.dtype)
  kernels.MaxPoolBackward(np.ascontiguousarray(dout), argmax, dpadded)
  return [kernels.Unpad(dpadded, node.Attr('padding', 0))]


def _AvgPoolForward(tape, node, x):
  padded = kernels.Pad(x, node.Attr('padding', 0))
  kernel = node.Attr('kernel_size')
  out = np.zeros(
      (x.shape[0], x.shape[1], _OutputSize(x.shape[2], node),
       _OutputSize(x.shape[3], node)), dtype=x.dtype)
  kernels.AvgPoolForward(
      padded, kernel, node.Attr('stride'), x.dtype.type(1 / kernel**2), out)
  tape.saved[node.id] = padded.shape
  return out


def _AvgPoolBackward(tape, node, dout, grads):
  del grads  # Unused.
  kernel = node.Attr('kernel_size')
  dpadded = np.zeros(tape.saved[node.id], dtype=dout.dtype)
  kernels.AvgPoolBackward(
      np.ascontiguousarray(dout), kernel, node.Attr('stride'),
      dout.dtype.type(1 / kernel**2), dpadded)
  return [kernels.Unpad(dpadded, node.Attr('padding', 0))]


def _GlobalAvgPoolForward(tape, node, x):
  tape.saved[node.id] = x.shape
  return x.mean(axis=(2, 3), keepdims=True)


def _GlobalAvgPoolBackward(tape, node, dout, grads):
  del grads  # Unused.
  shape = tape.saved[node.id]
  scale = dout.dtype.type(1 / (shape[2] * shape[3]))
  return [np.broadcast_to(dout * scale, shape).copy()]


def _FlattenForward(tape, node, x):
  tape.saved[node.id] = x.shape
  return x.reshape(x.shape[0], -1)


def _FlattenBackward(tape, node, dout, grads):
  del grads  # Unused.
  return [dout.reshape(tape.saved[node.id])]


def _IdentityForward(tape, node, x):
  del tape, node  # Unused.
  return x


def _IdentityBackward(tape, node, dout, grads):
  del tape, node, grads  # Unused.
  return [dout]


_FORWARD = {
    OpKind.CONV2D: _ConvForward,
    OpKind.DEPTHWISE_CONV2D: _ConvForward,
    OpKind.LINEAR: _LinearForward,
    OpKind.BATCH_NORM: _BatchNormForward,
    OpKind.RELU: _ReluForward,
    OpKind.MAX_POOL2D: _MaxPoolForward,
    OpKind.AVG_POOL2D: _AvgPoolForward,
    OpKind.GLOBAL_AVG_POOL: _GlobalAvgPoolForward,
    OpKind.FLATTEN: _FlattenForward,
    OpKind.OUTPUT: _IdentityForward,
}

_BACKWARD = {
    OpKind.CONV2D: _ConvBackward,
    OpKind.DEPTHWISE_CONV2D: _ConvBackward,
    OpKind.LINEAR: _LinearBackward,
    OpKind.BATCH_NORM: _BatchNormBackward,
    OpKind.RELU: _ReluBackward,
    OpKind.MAX_POOL2D: _MaxPoolBackward,
    OpKind.AVG_POOL2D: _AvgPoolBackward,
    OpKind.GLOBAL_AVG_POOL: _GlobalAvgPoolBackward,
    OpKind.FLATTEN: _FlattenBackward,
    OpKind.OUTPUT: _IdentityBackward,
}


def Execute(
    graph: graph_lib.ModelGraph,
    inputs: np.ndarray,
    training: bool = False) -> Tape:
  """Runs a graph forward.

  Args:
    graph: the graph.
    inputs: the N,C,H,W inputs, their dtype is the compute dtype.
    training: use batch statistics in batch norm layers.

  Returns:
    the Tape.

  Raises:
    errors.ShapeMismatch: if the inputs do not match the input shape.
    errors.NonFiniteActivation: if a node produces NaN or Inf.
  """
  declared = graph.input_shape
  if inputs.ndim != 4 or tuple(inputs.shape[1:]) != declared.dims[1:]:
    raise errors.ShapeMismatch(
        graph.input_id, declared.dims[1:], tuple(inputs.shape[1:]))
  if not np.issubdtype(inputs.dtype, np.floating):
    inputs = inputs.astype(np.float32)

  tape = Tape(graph=graph, training=training)
  for node_id in graph.order:
    node = graph.GetNode(node_id)
    if node.kind == OpKind.INPUT:
      tape.values[node_id] = inputs
      continue
    if node.kind == OpKind.ADD:
      out = tape.values[node.inputs[0]]
      for input_id in node.inputs[1:]:
        out = out + tape.values[input_id]
    else:
      out = _FORWARD[node.kind](tape, node, tape.values[node.inputs[0]])
    if not np.all(np.isfinite(out)):
      raise errors.NonFiniteActivation(node_id)
    tape.values[node_id] = out
  return tape


def ExecuteBackward(
    tape: Tape, dlogits: np.ndarray) -> Dict[str, np.ndarray]:
  """Back-propagates the gradient of the logits through a tape.

  Args:
    tape: the tape of a forward execution.
    dlogits: the gradient of the loss with respect to the logits.

  Returns:
    the gradient of every trainable weight of the executed graph.
  """
  graph = tape.graph
  activation_grads = {graph.output_id: dlogits}
  weight_grads: Dict[str, np.ndarray] = {}
  for node_id in reversed(graph.order):
    node = graph.GetNode(node_id)
    dout = activation_grads.pop(node_id, None)
    if dout is None or node.kind == OpKind.INPUT:
      continue
    if node.kind == OpKind.ADD:
      input_grads = [dout] * len(node.inputs)
    else:
      input_grads = _BACKWARD[node.kind](tape, node, dout, weight_grads)
    for input_id, grad in zip(node.inputs, input_grads):
      if input_id in activation_grads:
        activation_grads[input_id] = activation_grads[input_id] + grad
      else:
        activation_grads[input_id] = grad
  return weight_grads


@dataclasses.dataclass
class StepResult:
  """The result of a forward and backward pass.

  Attributes:
    loss: the loss value.
    gradients: the gradients of the shared weights.
    logits: the training-mode logits.
  """
  loss: float
  gradients: gradients_lib.GradientStore
  logits: np.ndarray


def _Inputs(batch: BatchLike) -> np.ndarray:
  return batch.inputs if isinstance(batch, datasets.Batch) else batch


def _WriteRunningStats(
    network: network_lib.SuperNetwork,
    active: network_lib.ActiveSubnetwork, tape: Tape):
  for key, value in tape.running_stats.items():
    network.weights.Get(key)[active.slices[key]] = value


def Forward(
    network: network_lib.SuperNetwork,
    batch: BatchLike,
    training: bool = False,
    update_running_stats: bool = True,
    config: Optional[space_lib.SubnetworkConfig] = None) -> np.ndarray:
  """Runs the active subnetwork forward.

  Args:
    network: the super-network.
    batch: a Batch or an N,C,H,W input array.
    training: use batch statistics and update the running statistics of
        the active channels.
    update_running_stats: in training, write back the running statistics.
    config: the configuration, defaults to the active one.

  Returns:
    the N,K logits in the dtype of the inputs.
  """
  active = network_lib.MaterializeSubnetwork(network, config)
  tape = Execute(active.graph, _Inputs(batch), training=training)
  if training and update_running_stats:
    _WriteRunningStats(network, active, tape)
  return tape.logits


def ForwardBackward(
    network: network_lib.SuperNetwork,
    batch: datasets.Batch,
    objective: Optional[Objective] = None,
    config: Optional[space_lib.SubnetworkConfig] = None,
    update_running_stats: bool = True) -> StepResult:
  """Runs a training-mode forward and backward pass of a subnetwork.

  Args:
    network: the super-network.
    batch: the batch.
    objective: the loss, cross-entropy by default.
    config: the configuration, defaults to the active one.
    update_running_stats: write back batch norm running statistics.

  Returns:
    the StepResult with full-shape gradients that are zero outside of the
    active slices.

  Raises:
    errors.NonFiniteActivation: if a node produces NaN or Inf.
    errors.NonFiniteGradient: if a gradient contains NaN or Inf.
  """
  objective = objective or losses.CrossEntropyObjective()
  active = network_lib.MaterializeSubnetwork(network, config)
  tape = Execute(active.graph, batch.inputs, training=True)
  loss, dlogits = objective(tape.logits, batch.labels)
  weight_grads = ExecuteBackward(tape, dlogits)

  gradients = gradients_lib.GradientStore()
  for key, grad in weight_grads.items():
    gradients.AddSlice(
        key, network.weights.Get(key).shape, active.slices[key], grad)
  if update_running_stats:
    _WriteRunningStats(network, active, tape)
  return StepResult(loss=loss, gradients=gradients, logits=tape.logits)


def Backward(
    network: network_lib.SuperNetwork,
    batch: datasets.Batch,
    objective: Optional[Objective] = None,
    config: Optional[space_lib.SubnetworkConfig] = None
) -> Tuple[float, gradients_lib.GradientStore]:
  """Returns the loss and the gradients of the shared weights.

  Args:
    network: the super-network.
    batch: the batch.
    objective: the loss, cross-entropy by default.
    config: the configuration, defaults to the active one.

  Returns:
    (loss, GradientStore)
  """
  result = ForwardBackward(network, batch, objective, config)
  return result.loss, result.gradients


def Predict(
    network: network_lib.SuperNetwork,
    inputs: np.ndarray,
    config: Optional[space_lib.SubnetworkConfig] = None,
    batch_size: int = definitions.EVALUATION_BATCH_SIZE) -> np.ndarray:
  """Returns the evaluation-mode class predictions, in fixed-size batches."""
  active = network_lib.MaterializeSubnetwork(network, config)
  predictions: List[np.ndarray] = []
  for start in range(0, inputs.shape[0], batch_size):
    tape = Execute(active.graph, inputs[start:start + batch_size])
    predictions.append(tape.logits.argmax(axis=1))
  if not predictions:
    return np.zeros((0,), dtype=np.int64)
  return np.concatenate(predictions)
