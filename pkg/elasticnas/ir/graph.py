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
"""Computation graph intermediate representation."""
from __future__ import annotations
import dataclasses
import functools
import heapq
import math
from typing import Any, Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from elasticnas import definitions
from elasticnas import errors


@dataclasses.dataclass(frozen=True)
class TensorShape:
  """A tensor shape.

  Activations are laid out N,C,H,W (or N,F after flattening), convolution
  kernels Cout,Cin,Kh,Kw and linear weights Out,In.

  Attributes:
    dims: the dimensions.
  """
  dims: Tuple[int, ...]

  def __post_init__(self):
    object.__setattr__(self, 'dims', tuple(int(dim) for dim in self.dims))
    if len(self.dims) not in (1, 2, 4):
      raise ValueError(f'Unsupported rank {len(self.dims)} for {self.dims}')
    if any(dim < 1 for dim in self.dims):
      raise ValueError(f'Non-positive dimension in {self.dims}')

  @property
  def rank(self) -> int:
    """Returns the number of dimensions."""
    return len(self.dims)

  def NumElements(self) -> int:
    """Returns the number of elements."""
    return math.prod(self.dims)

  def __getitem__(self, index):
    return self.dims[index]

  def __str__(self) -> str:
    return '(' + ','.join(str(dim) for dim in self.dims) + ')'


@dataclasses.dataclass(frozen=True)
class LayerNode:
  """A layer of the computation graph.

  Attributes:
    id: the unique node id.
    kind: the operation kind.
    attrs: kind-specific attributes (stride, padding, kernel_size,
        out_channels, out_features, epsilon, shape).
    inputs: the ids of the input nodes, in order.
    weight_refs: a map of weight role (e.g. 'weight', 'gamma') to the key
        of the tensor in the WeightStore.
  """
  id: str
  kind: definitions.OpKind
  attrs: Mapping[str, Any] = dataclasses.field(default_factory=dict)
  inputs: Tuple[str, ...] = ()
  weight_refs: Mapping[str, str] = dataclasses.field(default_factory=dict)

  def __post_init__(self):
    object.__setattr__(self, 'kind', definitions.OpKind(self.kind))
    object.__setattr__(self, 'inputs', tuple(self.inputs))
    object.__setattr__(self, 'attrs', dict(self.attrs))
    object.__setattr__(self, 'weight_refs', dict(self.weight_refs))

  def Attr(self, name: str, default: Any = None) -> Any:
    """Returns an attribute value or the default."""
    return self.attrs.get(name, default)

  @property
  def is_weight_bearing(self) -> bool:
    """True if the node kind carries elastic-capable weights."""
    return self.kind in definitions.WEIGHT_BEARING_KINDS


class WeightStore:
  """Named weight tensors stored as float32 arrays.

  Every tensor is kept in its declared shape; the flat element order is the
  row-major order of that shape.
  """

  def __init__(self, tensors: Optional[Mapping[str, np.ndarray]] = None):
    """Initializes the WeightStore.

    Args:
      tensors: an optional map of tensor key to array.
    """
    self._tensors: Dict[str, np.ndarray] = {}
    for key, value in (tensors or {}).items():
      self.Set(key, value)

  def __contains__(self, key: str) -> bool:
    return key in self._tensors

  def __len__(self) -> int:
    return len(self._tensors)

  def __iter__(self) -> Iterator[str]:
    return iter(self._tensors)

  def Keys(self) -> List[str]:
    """Returns the tensor keys in insertion order."""
    return list(self._tensors)

  def Get(self, key: str) -> np.ndarray:
    """Returns the tensor stored under key.

    Raises:
      KeyError: if the key is not present.
    """
    try:
      return self._tensors[key]
    except KeyError as error:
      raise KeyError(f'Weight not found: {key}') from error

  def Set(self, key: str, value: np.ndarray):
    """Stores a tensor as a float32 array."""
    array = np.array(value, dtype=np.float32)
    TensorShape(array.shape)
    self._tensors[key] = array

  def Shape(self, key: str) -> TensorShape:
    """Returns the shape of a stored tensor."""
    return TensorShape(self.Get(key).shape)

  def Flat(self, key: str) -> np.ndarray:
    """Returns the flat float32 elements of a stored tensor."""
    return self.Get(key).reshape(-1)

  def Copy(self) -> WeightStore:
    """Returns a deep copy of the store."""
    return WeightStore({key: value.copy() for key, value in self.Items()})

  def Items(self) -> Iterator[Tuple[str, np.ndarray]]:
    """Yields (key, tensor) pairs in insertion order."""
    yield from self._tensors.items()

  def NumElements(self) -> int:
    """Returns the total number of stored elements."""
    return sum(value.size for value in self._tensors.values())

  def Equals(self, other: WeightStore) -> bool:
    """True if both stores hold bit-identical tensors under the same keys."""
    if self.Keys() != other.Keys():
      return False
    return all(
        value.shape == other.Get(key).shape
        and value.tobytes() == other.Get(key).tobytes()
        for key, value in self.Items())


@dataclasses.dataclass(frozen=True)
class ModelGraph:
  """A directed acyclic computation graph with named weights.

  Attributes:
    nodes: the nodes in declaration order.
    input_id: the id of the Input node.
    output_id: the id of the Output node.
    weights: the weight tensors referenced by the nodes.
  """
  nodes: Tuple[LayerNode, ...]
  input_id: str
  output_id: str
  weights: WeightStore = dataclasses.field(
      default_factory=WeightStore, compare=False)

  def __post_init__(self):
    object.__setattr__(self, 'nodes', tuple(self.nodes))

  @functools.cached_property
  def _index(self) -> Dict[str, LayerNode]:
    return {node.id: node for node in self.nodes}

  @functools.cached_property
  def _consumers(self) -> Dict[str, Tuple[str, ...]]:
    consumers: Dict[str, List[str]] = {node.id: [] for node in self.nodes}
    for node in self.nodes:
      for input_id in node.inputs:
        if input_id in consumers and node.id not in consumers[input_id]:
          consumers[input_id].append(node.id)
    return {key: tuple(value) for key, value in consumers.items()}

  def __contains__(self, node_id: str) -> bool:
    return node_id in self._index

  def GetNode(self, node_id: str) -> LayerNode:
    """Returns the node with the given id.

    Raises:
      KeyError: if the node does not exist.
    """
    try:
      return self._index[node_id]
    except KeyError as error:
      raise KeyError(f'Node not found: {node_id}') from error

  def Consumers(self, node_id: str) -> Tuple[str, ...]:
    """Returns the ids of the nodes consuming node_id, in declaration order."""
    return self._consumers.get(node_id, ())

  def NodeIds(self) -> List[str]:
    """Returns the node ids in declaration order."""
    return [node.id for node in self.nodes]

  @property
  def input_shape(self) -> TensorShape:
    """Returns the declared per-sample input shape (C,H,W) as N=1 shape."""
    channels, height, width = self.GetNode(self.input_id).Attr('shape')
    return TensorShape((1, channels, height, width))

  @functools.cached_property
  def order(self) -> Tuple[str, ...]:
    """The topological order, computed once."""
    return tuple(TopologicalOrder(self))

  def WithWeights(self, weights: WeightStore) -> ModelGraph:
    """Returns the same topology bound to another weight store."""
    return ModelGraph(
        nodes=self.nodes, input_id=self.input_id, output_id=self.output_id,
        weights=weights)

  def SameTopology(self, other: ModelGraph) -> bool:
    """True if both graphs have identical nodes and boundaries."""
    return (
        self.nodes == other.nodes and self.input_id == other.input_id
        and self.output_id == other.output_id)


def TopologicalOrder(graph: ModelGraph) -> List[str]:
  """Returns the node ids so that every node follows all of its inputs.

  Ties are broken by declaration order, so the order is stable.

  Args:
    graph: the graph.

  Returns:
    the ordered node ids.

  Raises:
    errors.CycleDetected: if the graph contains a cycle.
  """
  position = {node.id: index for index, node in enumerate(graph.nodes)}
  pending = {}
  for node in graph.nodes:
    pending[node.id] = len(
        {input_id for input_id in node.inputs if input_id in position})

  ready = [position[node_id] for node_id, count in pending.items() if not count]
  heapq.heapify(ready)
  order = []
  while ready:
    node = graph.nodes[heapq.heappop(ready)]
    order.append(node.id)
    for consumer_id in graph.Consumers(node.id):
      pending[consumer_id] -= 1
      if not pending[consumer_id]:
        heapq.heappush(ready, position[consumer_id])

  if len(order) != len(graph.nodes):
    source, target = _FindBackEdge(graph, set(order))
    raise errors.CycleDetected(source, target)
  return order


def _FindBackEdge(graph: ModelGraph, done: set) -> Tuple[str, str]:
  """Returns one edge closing a cycle among the nodes not in done."""
  state: Dict[str, int] = {}
  for root in graph.NodeIds():
    if root in done or root in state:
      continue
    stack = [(root, iter(graph.Consumers(root)))]
    state[root] = 1
    while stack:
      node_id, consumers = stack[-1]
      for consumer_id in consumers:
        if consumer_id in done:
          continue
        if state.get(consumer_id) == 1:
          return node_id, consumer_id
        if consumer_id not in state:
          state[consumer_id] = 1
          stack.append((consumer_id, iter(graph.Consumers(consumer_id))))
          break
      else:
        state[node_id] = 2
        stack.pop()
  raise ValueError('No cycle found')
