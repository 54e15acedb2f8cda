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
"""A builder for ModelGraphs with seeded weight initialisation."""
from __future__ import annotations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from elasticnas import definitions
from elasticnas import errors
from elasticnas.ir import graph as graph_lib
from elasticnas.ir import shapes as shapes_lib
from elasticnas.ir import validation

OpKind = definitions.OpKind


class GraphBuilder:
  """Builds a ModelGraph node by node.

  Each method appends a node and returns its id. Weight-bearing layers get
  He-normal weights drawn from the builder's generator; batch norm layers
  get unit scale and zero shift, or random statistics when
  randomize_batch_norm is set.

  Attributes:
    rng: the random generator used for weights.
    randomize_batch_norm: if True, batch norm tensors are drawn at random.
  """

  def __init__(self, seed: int = 0, randomize_batch_norm: bool = False):
    """Initializes the GraphBuilder.

    Args:
      seed: the weight initialisation seed.
      randomize_batch_norm: draw random batch norm parameters and statistics.
    """
    self.rng = np.random.default_rng(seed)
    self.randomize_batch_norm = randomize_batch_norm
    self._nodes: List[graph_lib.LayerNode] = []
    self._weights = graph_lib.WeightStore()
    self._shapes: Dict[str, Tuple[int, ...]] = {}
    self._input_id: Optional[str] = None
    self._output_id: Optional[str] = None

  def _Append(
      self,
      node_id: str,
      kind: OpKind,
      inputs: Sequence[str],
      attrs: Optional[dict] = None,
      weight_refs: Optional[dict] = None) -> str:
    """Appends a node and tracks its output shape (N=1)."""
    node = graph_lib.LayerNode(
        id=node_id, kind=kind, attrs=attrs or {}, inputs=tuple(inputs),
        weight_refs=weight_refs or {})
    self._nodes.append(node)
    partial = graph_lib.ModelGraph(
        nodes=tuple(self._nodes), input_id=self._input_id or node_id,
        output_id=node_id, weights=self._weights)
    if kind != OpKind.INPUT:
      self._shapes[node_id] = shapes_lib.InferShapes(partial)[node_id].dims
    return node_id

  def Shape(self, node_id: str) -> Tuple[int, ...]:
    """Returns the N=1 output shape of a node."""
    return self._shapes[node_id]

  def Channels(self, node_id: str) -> int:
    """Returns the output channel (or feature) count of a node."""
    return self._shapes[node_id][1]

  def Input(self, shape: Sequence[int], node_id: str = 'input') -> str:
    """Adds the Input node for per-sample shape (C,H,W)."""
    self._input_id = node_id
    self._shapes[node_id] = (1,) + tuple(shape)
    return self._Append(
        node_id, OpKind.INPUT, (), attrs={'shape': list(shape)})

  def Conv2D(
      self, node_id: str, source: str, out_channels: int,
      kernel_size: int = 3, stride: int = 1,
      padding: Optional[int] = None) -> str:
    """Adds a Conv2D node without bias; padding defaults to same padding."""
    if padding is None:
      padding = kernel_size // 2
    in_channels = self.Channels(source)
    fan_in = in_channels * kernel_size * kernel_size
    key = f'{node_id}.weight'
    self._weights.Set(key, self.rng.normal(
        0.0, np.sqrt(2.0 / fan_in),
        (out_channels, in_channels, kernel_size, kernel_size)))
    return self._Append(
        node_id, OpKind.CONV2D, [source],
        attrs={
            'out_channels': out_channels, 'kernel_size': kernel_size,
            'stride': stride, 'padding': padding},
        weight_refs={'weight': key})

  def DepthwiseConv2D(
      self, node_id: str, source: str, kernel_size: int = 3,
      stride: int = 1, padding: Optional[int] = None) -> str:
    """Adds a DepthwiseConv2D node without bias."""
    if padding is None:
      padding = kernel_size // 2
    channels = self.Channels(source)
    key = f'{node_id}.weight'
    self._weights.Set(key, self.rng.normal(
        0.0, np.sqrt(2.0 / (kernel_size * kernel_size)),
        (channels, 1, kernel_size, kernel_size)))
    return self._Append(
        node_id, OpKind.DEPTHWISE_CONV2D, [source],
        attrs={'kernel_size': kernel_size, 'stride': stride,
               'padding': padding},
        weight_refs={'weight': key})

  def Linear(
      self, node_id: str, source: str, out_features: int,
      bias: bool = True) -> str:
    """Adds a Linear node."""
    in_features = self.Channels(source)
    refs = {'weight': f'{node_id}.weight'}
    self._weights.Set(refs['weight'], self.rng.normal(
        0.0, np.sqrt(2.0 / in_features), (out_features, in_features)))
    if bias:
      refs['bias'] = f'{node_id}.bias'
      self._weights.Set(refs['bias'], np.zeros(out_features))
    return self._Append(
        node_id, OpKind.LINEAR, [source],
        attrs={'out_features': out_features}, weight_refs=refs)

  def BatchNorm(
      self, node_id: str, source: str,
      epsilon: float = definitions.DEFAULT_BATCH_NORM_EPSILON) -> str:
    """Adds a BatchNorm node."""
    channels = self.Channels(source)
    refs = {
        role: f'{node_id}.{role}'
        for role in definitions.WEIGHT_ROLES[OpKind.BATCH_NORM]}
    if self.randomize_batch_norm:
      values = {
          'gamma': self.rng.uniform(0.5, 1.5, channels),
          'beta': self.rng.normal(0.0, 0.1, channels),
          'running_mean': self.rng.normal(0.0, 0.1, channels),
          'running_var': self.rng.uniform(0.5, 1.5, channels)}
    else:
      values = {
          'gamma': np.ones(channels), 'beta': np.zeros(channels),
          'running_mean': np.zeros(channels),
          'running_var': np.ones(channels)}
    for role, key in refs.items():
      self._weights.Set(key, values[role])
    return self._Append(
        node_id, OpKind.BATCH_NORM, [source], attrs={'epsilon': epsilon},
        weight_refs=refs)

  def ReLU(self, node_id: str, source: str) -> str:
    """Adds a ReLU node."""
    return self._Append(node_id, OpKind.RELU, [source])

  def Add(self, node_id: str, *sources: str) -> str:
    """Adds an elementwise Add node."""
    return self._Append(node_id, OpKind.ADD, sources)

  def MaxPool2D(
      self, node_id: str, source: str, kernel_size: int = 2,
      stride: int = 2, padding: int = 0) -> str:
    """Adds a MaxPool2D node."""
    return self._Append(
        node_id, OpKind.MAX_POOL2D, [source],
        attrs={'kernel_size': kernel_size, 'stride': stride,
               'padding': padding})

  def AvgPool2D(
      self, node_id: str, source: str, kernel_size: int = 2,
      stride: int = 2, padding: int = 0) -> str:
    """Adds an AvgPool2D node."""
    return self._Append(
        node_id, OpKind.AVG_POOL2D, [source],
        attrs={'kernel_size': kernel_size, 'stride': stride,
               'padding': padding})

  def GlobalAvgPool(self, node_id: str, source: str) -> str:
    """Adds a GlobalAvgPool node."""
    return self._Append(node_id, OpKind.GLOBAL_AVG_POOL, [source])

  def Flatten(self, node_id: str, source: str) -> str:
    """Adds a Flatten node."""
    return self._Append(node_id, OpKind.FLATTEN, [source])

  def Output(self, source: str, node_id: str = 'output') -> str:
    """Adds the Output node."""
    self._output_id = node_id
    return self._Append(node_id, OpKind.OUTPUT, [source])

  def ConvBnRelu(
      self, prefix: str, source: str, out_channels: int,
      kernel_size: int = 3, stride: int = 1, relu: bool = True) -> str:
    """Adds a Conv2D, BatchNorm and optional ReLU sequence."""
    node_id = self.Conv2D(
        f'{prefix}.conv', source, out_channels, kernel_size, stride)
    node_id = self.BatchNorm(f'{prefix}.bn', node_id)
    if relu:
      node_id = self.ReLU(f'{prefix}.relu', node_id)
    return node_id

  def Build(self) -> graph_lib.ModelGraph:
    """Returns the built graph.

    Raises:
      errors.InvalidGraph: if the graph fails validation.
    """
    graph = graph_lib.ModelGraph(
        nodes=tuple(self._nodes), input_id=self._input_id,
        output_id=self._output_id, weights=self._weights)
    diagnostics = validation.ValidateGraph(graph)
    if diagnostics:
      raise errors.InvalidGraph(diagnostics)
    return graph
