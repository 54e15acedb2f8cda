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
"""Detection and removal of skippable residual blocks."""
from __future__ import annotations
import dataclasses
import logging
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

from elasticnas import definitions
from elasticnas import errors
from elasticnas.ir import graph as graph_lib
from elasticnas.ir import shapes as shapes_lib

logger = logging.getLogger(__name__)

OpKind = definitions.OpKind


@dataclasses.dataclass(frozen=True)
class SkippableBlock:
  """A residual branch that can be omitted.

  Attributes:
    block_id: the block id.
    nodes: the branch nodes in order.
    source: the node feeding both the branch and the identity edge.
    sink: the Add node joining the branch and the identity edge.
  """
  block_id: str
  nodes: tuple
  source: str
  sink: str

  def ToDict(self) -> dict:
    """Returns the JSON representation."""
    return {
        'id': self.block_id, 'nodes': list(self.nodes),
        'source': self.source, 'sink': self.sink}


def _TraceBranch(
    graph: graph_lib.ModelGraph, end_id: str, source_id: str,
    sink_id: str) -> Optional[List[str]]:
  """Returns the chain source -> ... -> end_id or None if it is not simple.

  Every chain node must have a single input and a single consumer.
  """
  chain = []
  node_id = end_id
  while node_id != source_id:
    node = graph.GetNode(node_id)
    expected_consumer = chain[-1] if chain else sink_id
    if (node.kind in (OpKind.INPUT, OpKind.OUTPUT) or len(node.inputs) != 1
        or graph.Consumers(node_id) != (expected_consumer,)):
      return None
    chain.append(node_id)
    node_id = node.inputs[0]
  if not chain:
    return None
  return chain[::-1]


def RemoveBlocks(
    graph: graph_lib.ModelGraph,
    blocks: Iterable[SkippableBlock],
    weights: Optional[graph_lib.WeightStore] = None) -> graph_lib.ModelGraph:
  """Returns the graph with the given blocks removed.

  The branch nodes and the joining Add are dropped, the consumers of the
  Add read the block source instead.

  Args:
    graph: the graph.
    blocks: the blocks to remove.
    weights: the weight store of the result, defaults to the graph's.

  Returns:
    the reduced graph.
  """
  removed = set()
  replacement: Dict[str, str] = {}
  for block in blocks:
    removed.update(block.nodes)
    removed.add(block.sink)
    replacement[block.sink] = block.source

  def _Resolve(node_id: str) -> str:
    while node_id in replacement:
      node_id = replacement[node_id]
    return node_id

  nodes = []
  for node in graph.nodes:
    if node.id in removed:
      continue
    inputs = tuple(_Resolve(input_id) for input_id in node.inputs)
    if inputs != node.inputs:
      node = dataclasses.replace(node, inputs=inputs)
    nodes.append(node)
  return graph_lib.ModelGraph(
      nodes=tuple(nodes), input_id=graph.input_id, output_id=graph.output_id,
      weights=graph.weights if weights is None else weights)


def DetectSkippableBlocks(
    graph: graph_lib.ModelGraph,
    node_group: Mapping[str, str]) -> List[SkippableBlock]:
  """Finds the identity-shortcut residual branches that can be omitted.

  A candidate is an Add with two inputs, one of them a node s and the other
  the end of a simple chain starting at a consumer of s. It is accepted if
  shape inference succeeds with the chain and the Add removed and s is in
  the width group of the Add.

  Args:
    graph: a valid graph.
    node_group: the width group of every node.

  Returns:
    the blocks in topological order of their Add, ids b0, b1, ...
  """
  candidates = []
  for node_id in graph.order:
    node = graph.GetNode(node_id)
    if node.kind != OpKind.ADD or len(node.inputs) != 2:
      continue
    for source_id, end_id in (node.inputs, node.inputs[::-1]):
      chain = _TraceBranch(graph, end_id, source_id, node_id)
      if chain is not None:
        candidates.append((source_id, chain, node_id))
        break

  blocks = []
  for source_id, chain, sink_id in candidates:
    if node_group.get(source_id) != node_group.get(sink_id):
      continue
    block = SkippableBlock(
        block_id=f'b{len(blocks)}', nodes=tuple(chain), source=source_id,
        sink=sink_id)
    try:
      shapes_lib.InferShapes(RemoveBlocks(graph, [block]))
    except errors.ShapeMismatch as error:
      logger.debug('Block at %s is not skippable: %s', sink_id, error)
      continue
    blocks.append(block)
  return blocks


def SkippedBlocks(
    blocks: Sequence[SkippableBlock],
    skip_mask: Mapping[str, bool]) -> List[SkippableBlock]:
  """Returns the blocks marked as skipped."""
  return [block for block in blocks if skip_mask.get(block.block_id, False)]
