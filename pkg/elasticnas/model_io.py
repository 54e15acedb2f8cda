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
"""Model manifest and weight payload serialization.

A model is stored as two files: a JSON manifest holding the topology, a
weight index and an FNV-1a 64-bit checksum of the payload, and a payload of
concatenated little-endian float32 arrays at the offsets of the index.
"""
from __future__ import annotations
import dataclasses
import io
import json
import logging
import math
import pathlib
from typing import Any, Dict, List, Tuple, Union

from elasticnas import definitions
from elasticnas import errors
from elasticnas import utils
from elasticnas.ir import graph as graph_lib
from elasticnas.ir import validation

logger = logging.getLogger(__name__)

PathLike = Union[str, pathlib.Path]


@dataclasses.dataclass(frozen=True)
class WeightIndexEntry:
  """A weight index entry of a model manifest.

  Attributes:
    key: the tensor key.
    offset: the byte offset of the tensor in the payload.
    count: the number of float32 elements.
    shape: the tensor shape.
  """
  key: str
  offset: int
  count: int
  shape: Tuple[int, ...]

  @property
  def end_offset(self) -> int:
    """The byte offset just past the tensor."""
    return self.offset + 4 * self.count

  def ToDict(self) -> Dict[str, Any]:
    """Returns the manifest representation."""
    return {
        'key': self.key, 'offset': self.offset, 'count': self.count,
        'shape': list(self.shape)}

  @classmethod
  def FromDict(cls, value: Dict[str, Any]) -> WeightIndexEntry:
    """Parses a manifest weight index entry.

    Raises:
      errors.ParserError: if the entry is malformed.
    """
    try:
      entry = cls(
          key=str(value['key']), offset=int(value['offset']),
          count=int(value['count']),
          shape=tuple(int(dim) for dim in value['shape']))
    except (KeyError, TypeError, ValueError) as error:
      raise errors.ParserError(
          f'Malformed weight index entry {value!r}') from error
    if entry.offset < 0 or entry.count < 0:
      raise errors.ParserError(f'Negative offset or count for {entry.key}')
    if math.prod(entry.shape) != entry.count:
      raise errors.ParserError(
          f'Element count {entry.count} does not match shape {entry.shape} '
          f'for {entry.key}')
    return entry


@dataclasses.dataclass
class ModelManifest:
  """A parsed model manifest.

  Attributes:
    format_version: the manifest format version.
    checksum: the FNV-1a 64-bit checksum of the payload.
    nodes: the graph nodes without weight payloads.
    input_id: the Input node id.
    output_id: the Output node id.
    weight_index: the weight index entries.
  """
  format_version: int
  checksum: int
  nodes: List[graph_lib.LayerNode]
  input_id: str
  output_id: str
  weight_index: List[WeightIndexEntry]

  def ToBytes(self) -> bytes:
    """Returns the canonical JSON encoding of the manifest."""
    document = {
        'format_version': self.format_version,
        'checksum': f'{self.checksum:016x}',
        'input_id': self.input_id,
        'output_id': self.output_id,
        'nodes': [NodeToDict(node) for node in self.nodes],
        'weight_index': [entry.ToDict() for entry in self.weight_index],
    }
    return (json.dumps(document, indent=2, sort_keys=True) + '\n').encode(
        'utf-8')

  @classmethod
  def FromBytes(cls, raw_data: bytes) -> ModelManifest:
    """Parses a manifest.

    Raises:
      errors.ParserError: if the manifest is malformed or has an unsupported
          version.
    """
    try:
      document = json.loads(raw_data.decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as error:
      raise errors.ParserError(
          f'Manifest is not valid JSON: {error}') from error
    if not isinstance(document, dict):
      raise errors.ParserError('Manifest is not a JSON object')

    version = document.get('format_version')
    if version != definitions.MODEL_FORMAT_VERSION:
      raise errors.ParserError(f'Unsupported manifest version {version!r}')
    try:
      checksum = int(document['checksum'], 16)
      nodes = [NodeFromDict(value) for value in document['nodes']]
      input_id = str(document['input_id'])
      output_id = str(document['output_id'])
      index = document['weight_index']
    except (KeyError, TypeError, ValueError) as error:
      raise errors.ParserError(f'Malformed manifest: {error!r}') from error
    return cls(
        format_version=version,
        checksum=checksum,
        nodes=nodes,
        input_id=input_id,
        output_id=output_id,
        weight_index=[WeightIndexEntry.FromDict(entry) for entry in index])


def NodeToDict(node: graph_lib.LayerNode) -> Dict[str, Any]:
  """Returns the JSON representation of a node."""
  return {
      'id': node.id,
      'kind': node.kind.value,
      'inputs': list(node.inputs),
      'attrs': dict(node.attrs),
      'weight_refs': dict(node.weight_refs),
  }


def NodeFromDict(value: Dict[str, Any]) -> graph_lib.LayerNode:
  """Parses the JSON representation of a node.

  Raises:
    errors.ParserError: if the node is malformed.
  """
  try:
    return graph_lib.LayerNode(
        id=str(value['id']),
        kind=definitions.OpKind(value['kind']),
        attrs=dict(value.get('attrs', {})),
        inputs=tuple(str(input_id) for input_id in value.get('inputs', [])),
        weight_refs={
            str(role): str(key)
            for role, key in value.get('weight_refs', {}).items()})
  except (KeyError, TypeError, ValueError, AttributeError) as error:
    raise errors.ParserError(f'Malformed node {value!r}') from error


def EncodeModel(graph: graph_lib.ModelGraph) -> Tuple[bytes, bytes]:
  """Encodes a graph as (manifest bytes, payload bytes).

  The encoding is deterministic: equal graphs encode to identical bytes.
  """
  payload = io.BytesIO()
  index = []
  for key, value in graph.weights.Items():
    offset = payload.tell()
    payload.write(value.astype('<f4').tobytes())
    index.append(WeightIndexEntry(
        key=key, offset=offset, count=int(value.size),
        shape=tuple(value.shape)))
  payload_bytes = payload.getvalue()
  manifest = ModelManifest(
      format_version=definitions.MODEL_FORMAT_VERSION,
      checksum=utils.Fnv1a64(payload_bytes),
      nodes=list(graph.nodes),
      input_id=graph.input_id,
      output_id=graph.output_id,
      weight_index=index)
  return manifest.ToBytes(), payload_bytes


def DecodeModel(
    manifest_bytes: bytes, payload_bytes: bytes) -> graph_lib.ModelGraph:
  """Decodes a graph from manifest and payload bytes.

  Raises:
    errors.ParserError: if the manifest is malformed or the graph invalid.
    errors.WeightIndexOutOfBounds: if an entry lies outside of the payload.
    errors.ChecksumMismatch: if the payload checksum does not match.
  """
  manifest = ModelManifest.FromBytes(manifest_bytes)

  previous_end = 0
  previous_key = None
  for entry in sorted(manifest.weight_index, key=lambda item: item.offset):
    if entry.end_offset > len(payload_bytes):
      raise errors.WeightIndexOutOfBounds(
          f'{entry.key} spans bytes {entry.offset}-{entry.end_offset}, '
          f'payload has {len(payload_bytes)}')
    if entry.offset < previous_end:
      raise errors.ParserError(
          f'{entry.key} overlaps {previous_key} in the payload')
    previous_end = entry.end_offset
    previous_key = entry.key

  checksum = utils.Fnv1a64(payload_bytes)
  if checksum != manifest.checksum:
    raise errors.ChecksumMismatch(
        f'Payload checksum {checksum:016x} does not match manifest '
        f'{manifest.checksum:016x}')

  decoder = utils.StreamDecoder(io.BytesIO(payload_bytes))
  weights = graph_lib.WeightStore()
  for entry in manifest.weight_index:
    decoder.stream.seek(entry.offset)
    try:
      _, values = decoder.DecodeFloat32Array(entry.count)
    except errors.DecoderError as error:
      raise errors.WeightIndexOutOfBounds(str(error)) from error
    weights.Set(entry.key, values.reshape(entry.shape))

  graph = graph_lib.ModelGraph(
      nodes=tuple(manifest.nodes), input_id=manifest.input_id,
      output_id=manifest.output_id, weights=weights)
  diagnostics = validation.ValidateGraph(graph)
  if diagnostics:
    reasons = '; '.join(str(diagnostic) for diagnostic in diagnostics)
    raise errors.ParserError(f'Invalid graph in manifest: {reasons}')
  return graph


def LoadModel(
    manifest_path: PathLike, weights_path: PathLike) -> graph_lib.ModelGraph:
  """Loads a model from a manifest and a weight payload file.

  Args:
    manifest_path: the manifest path.
    weights_path: the weight payload path.

  Returns:
    the validated model graph.

  Raises:
    errors.ParserError: if the files cannot be read or parsed.
    errors.WeightIndexOutOfBounds: if an entry lies outside of the payload.
    errors.ChecksumMismatch: if the payload checksum does not match.
  """
  try:
    manifest_bytes = pathlib.Path(manifest_path).read_bytes()
    payload_bytes = pathlib.Path(weights_path).read_bytes()
  except OSError as error:
    raise errors.ParserError(f'Cannot read model: {error}') from error
  graph = DecodeModel(manifest_bytes, payload_bytes)
  logger.debug(
      'Loaded %d nodes and %d tensors from %s', len(graph.nodes),
      len(graph.weights), manifest_path)
  return graph


def SaveModel(
    graph: graph_lib.ModelGraph,
    manifest_path: PathLike,
    weights_path: PathLike):
  """Saves a model as a manifest and a weight payload file.

  Two saves of the same graph produce byte-identical files.

  Args:
    graph: a valid graph.
    manifest_path: the manifest path.
    weights_path: the weight payload path.

  Raises:
    errors.InvalidGraph: if the graph fails validation.
    errors.IoError: if a file cannot be written.
  """
  diagnostics = validation.ValidateGraph(graph)
  if diagnostics:
    raise errors.InvalidGraph(diagnostics)
  manifest_bytes, payload_bytes = EncodeModel(graph)
  with utils.AtomicWriter(weights_path) as file_object:
    file_object.write(payload_bytes)
  with utils.AtomicWriter(manifest_path) as file_object:
    file_object.write(manifest_bytes)
