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
"""Conversion of a pre-trained model into a super-network."""
from __future__ import annotations
import dataclasses
import json
import logging
import pathlib
from typing import Optional, Union

import numpy as np

from elasticnas import config as config_lib
from elasticnas import definitions
from elasticnas import errors
from elasticnas import model_io
from elasticnas import utils
from elasticnas.elasticity import blocks as blocks_lib
from elasticnas.elasticity import groups as groups_lib
from elasticnas.elasticity import network as network_lib
from elasticnas.elasticity import roles as roles_lib
from elasticnas.elasticity import space as space_lib
from elasticnas.engine import executor
from elasticnas.ir import graph as graph_lib

logger = logging.getLogger(__name__)

OpKind = definitions.OpKind
PathLike = Union[str, pathlib.Path]


def ReorderChannels(
    graph: graph_lib.ModelGraph,
    grouping: groups_lib.WidthGrouping,
    weights: graph_lib.WeightStore):
  """Sorts the channels of every elastic group by descending importance.

  The importance of a channel is the summed L1 norm of the filters that
  produce it. Producers, batch norms and depthwise filters of the group are
  permuted along their channel axis and every Conv2D or Linear reading the
  group along its input axis, so the function of the network is unchanged
  and prefix slices keep the most important channels.

  Args:
    graph: the graph.
    grouping: the width groups.
    weights: the weights to permute in place.
  """
  for group in grouping.elastic_groups:
    members = set(grouping.Members(group.group_id))
    importance = np.zeros(group.max_channels, dtype=np.float64)
    for producer_id in group.members:
      weight = weights.Get(graph.GetNode(producer_id).weight_refs['weight'])
      importance += np.abs(weight.astype(np.float64)).reshape(
          weight.shape[0], -1).sum(axis=1)
    permutation = np.argsort(-importance, kind='stable')

    for node in graph.nodes:
      if node.id in members:
        for role, key in node.weight_refs.items():
          if node.kind == OpKind.LINEAR and role == 'weight':
            weights.Set(key, weights.Get(key)[permutation, :])
          else:
            weights.Set(key, weights.Get(key)[permutation])
      if (node.kind in (OpKind.CONV2D, OpKind.LINEAR)
          and grouping.node_group[node.inputs[0]] == group.group_id):
        key = node.weight_refs['weight']
        weight = weights.Get(key)
        if node.kind == OpKind.CONV2D:
          weights.Set(key, weight[:, permutation])
        else:
          spatial = weight.shape[1] // group.max_channels
          index = (permutation[:, np.newaxis] * spatial
                   + np.arange(spatial)).reshape(-1)
          weights.Set(key, weight[:, index])
    logger.debug('Reordered channels of %s', group.group_id)


def _FidelityBatch(graph: graph_lib.ModelGraph) -> np.ndarray:
  rng = np.random.default_rng(definitions.FIDELITY_BATCH_SEED)
  return rng.uniform(
      0.0, 1.0,
      (definitions.FIDELITY_BATCH_SIZE,) + graph.input_shape.dims[1:])


def CheckFidelity(
    model: graph_lib.ModelGraph,
    network: network_lib.SuperNetwork,
    inputs: Optional[np.ndarray] = None) -> float:
  """Compares the maximal subnetwork with the model on a batch of inputs.

  Both run in evaluation mode in float64.

  Args:
    model: the pre-trained model.
    network: the super-network converted from it.
    inputs: the input batch, a fixed seeded batch by default.

  Returns:
    the largest absolute difference of the logits.

  Raises:
    errors.FidelityCheckFailed: if the difference exceeds the tolerance
        relative to the largest reference logit.
  """
  inputs = _FidelityBatch(model) if inputs is None else inputs
  inputs = inputs.astype(np.float64)
  reference = executor.Forward(
      network_lib.SuperNetwork.FromStaticModel(model), inputs)
  logits = executor.Forward(
      network, inputs, config=space_lib.MaximalConfig(network.space))
  max_abs_diff = float(np.max(np.abs(logits - reference)))
  tolerance = definitions.FIDELITY_TOLERANCE * max(
      1.0, float(np.max(np.abs(reference))))
  if max_abs_diff > tolerance:
    raise errors.FidelityCheckFailed(max_abs_diff)
  return max_abs_diff


def Convert(
    model: graph_lib.ModelGraph,
    policy: Optional[config_lib.ElasticityPolicy] = None,
    check_fidelity: bool = True) -> network_lib.SuperNetwork:
  """Converts a pre-trained model into a super-network.

  The super-network owns a copy of the model weights, channel-reordered if
  the policy asks for it; the model is left unchanged. The maximal
  configuration is active.

  Args:
    model: a valid model.
    policy: the elasticity policy, defaults to the default policy.
    check_fidelity: verify that the maximal subnetwork reproduces model.

  Returns:
    the SuperNetwork.

  Raises:
    errors.ConflictingConstraint: if channel constraints are inconsistent.
    errors.EmptySpace: if the space has a single subnetwork.
    errors.FidelityCheckFailed: if the maximal subnetwork diverges.
  """
  policy = policy or config_lib.ElasticityPolicy()
  roles = roles_lib.DetectElasticLayers(model)
  grouping = groups_lib.BuildWidthGroups(model, roles)
  blocks = blocks_lib.DetectSkippableBlocks(model, grouping.node_group)
  space, grouping, roles = space_lib.GenerateSearchSpace(
      model, roles, grouping, policy, blocks)
  for node_id, role in roles.items():
    if not role.is_static:
      logger.debug('%s: %s', node_id, role)

  weights = model.weights.Copy()
  if policy.reorder_channels:
    ReorderChannels(model, grouping, weights)
  network = network_lib.SuperNetwork(
      base=model.WithWeights(weights),
      space=space,
      roles=roles,
      grouping=grouping,
      policy=policy,
      active=space_lib.MaximalConfig(space),
      classifier_id=roles_lib.FindClassifier(model))
  if check_fidelity:
    max_abs_diff = CheckFidelity(model, network)
    logger.info('Fidelity check passed, max|diff| = %.3e', max_abs_diff)
  return network


def SaveSuperNetwork(
    network: network_lib.SuperNetwork, directory: PathLike):
  """Writes a super-network checkpoint directory.

  The directory holds the model manifest and payload of the shared weights
  and a description of the space, the policy and the active configuration.

  Raises:
    errors.IoError: if a file cannot be written.
  """
  directory = pathlib.Path(directory)
  try:
    directory.mkdir(parents=True, exist_ok=True)
  except OSError as error:
    raise errors.IoError(f'Cannot create {directory!s}: {error}') from error
  model_io.SaveModel(
      network.base, directory / definitions.MODEL_MANIFEST_NAME,
      directory / definitions.MODEL_WEIGHTS_NAME)
  document = {
      'format_version': definitions.SPACE_FORMAT_VERSION,
      'policy': dataclasses.asdict(network.policy),
      'space': network.space.ToDict(),
      'active': network.active.ToDict(),
  }
  with utils.AtomicWriter(
      directory / definitions.SPACE_NAME, mode='w') as file_object:
    file_object.write(json.dumps(document, indent=2, sort_keys=True) + '\n')


def LoadSuperNetwork(directory: PathLike) -> network_lib.SuperNetwork:
  """Reads a super-network checkpoint directory.

  The space is derived again from the stored graph with the stored policy
  and must match the stored description.

  Raises:
    errors.ParserError: if a file is malformed or the space does not match.
  """
  directory = pathlib.Path(directory)
  space_path = directory / definitions.SPACE_NAME
  try:
    document = json.loads(space_path.read_text(encoding='utf-8'))
  except (OSError, UnicodeDecodeError, json.JSONDecodeError) as error:
    raise errors.ParserError(f'Cannot read {space_path!s}: {error}') from error
  if not isinstance(document, dict) or document.get(
      'format_version') != definitions.SPACE_FORMAT_VERSION:
    raise errors.ParserError(f'Unsupported space description {space_path!s}')
  try:
    policy = config_lib.ElasticityPolicy(**document['policy'])
  except (KeyError, TypeError) as error:
    raise errors.ParserError(f'Malformed policy in {space_path!s}') from error

  graph = model_io.LoadModel(
      directory / definitions.MODEL_MANIFEST_NAME,
      directory / definitions.MODEL_WEIGHTS_NAME)
  network = Convert(
      graph, dataclasses.replace(policy, reorder_channels=False),
      check_fidelity=False)
  if network.space.ToDict() != document.get('space'):
    raise errors.ParserError(
        f'Stored space in {space_path!s} does not match the model')
  network.policy = policy
  active = space_lib.SubnetworkConfig.FromDict(document.get('active'))
  try:
    network.space.Validate(active)
  except errors.InvalidChoice as error:
    raise errors.ParserError(
        f'Invalid active configuration: {error}') from error
  network.active = active
  return network
