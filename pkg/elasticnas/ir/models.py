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
"""Bundled toy models."""
from typing import Callable, Dict, Sequence

from elasticnas.ir import builder as builder_lib
from elasticnas.ir import graph as graph_lib


def _IdentityBlock(
    builder: builder_lib.GraphBuilder, prefix: str, source: str) -> str:
  """Adds a basic residual block with an identity shortcut."""
  channels = builder.Channels(source)
  branch = builder.ConvBnRelu(f'{prefix}.a', source, channels)
  branch = builder.ConvBnRelu(f'{prefix}.b', branch, channels, relu=False)
  added = builder.Add(f'{prefix}.add', branch, source)
  return builder.ReLU(f'{prefix}.relu', added)


def _DownsampleBlock(
    builder: builder_lib.GraphBuilder, prefix: str, source: str,
    out_channels: int) -> str:
  """Adds a stride-2 residual block with a projection shortcut."""
  branch = builder.ConvBnRelu(f'{prefix}.a', source, out_channels, stride=2)
  branch = builder.ConvBnRelu(f'{prefix}.b', branch, out_channels, relu=False)
  shortcut = builder.ConvBnRelu(
      f'{prefix}.shortcut', source, out_channels, kernel_size=1, stride=2,
      relu=False)
  added = builder.Add(f'{prefix}.add', branch, shortcut)
  return builder.ReLU(f'{prefix}.relu', added)


def _Classifier(
    builder: builder_lib.GraphBuilder, source: str, num_classes: int) -> str:
  """Adds global pooling, flatten, the classifier and the Output node."""
  pooled = builder.GlobalAvgPool('pool', source)
  flat = builder.Flatten('flatten', pooled)
  logits = builder.Linear('classifier', flat, num_classes)
  return builder.Output(logits)


def BuildToyResNet(
    input_shape: Sequence[int] = (3, 8, 8),
    num_classes: int = 10,
    widths: Sequence[int] = (16, 32),
    seed: int = 0,
    randomize_batch_norm: bool = False) -> graph_lib.ModelGraph:
  """Builds a two-stage toy ResNet.

  The stem is followed by two identity blocks, a downsampling block and one
  more identity block, so the model has three skippable blocks.

  Args:
    input_shape: the per-sample input shape (C,H,W).
    num_classes: the number of classes.
    widths: the channel counts of the two stages.
    seed: the weight initialisation seed.
    randomize_batch_norm: draw random batch norm parameters.

  Returns:
    the model graph.
  """
  builder = builder_lib.GraphBuilder(
      seed=seed, randomize_batch_norm=randomize_batch_norm)
  node = builder.Input(input_shape)
  node = builder.ConvBnRelu('stem', node, widths[0])
  node = _IdentityBlock(builder, 'layer1.0', node)
  node = _IdentityBlock(builder, 'layer1.1', node)
  node = _DownsampleBlock(builder, 'layer2.0', node, widths[1])
  node = _IdentityBlock(builder, 'layer2.1', node)
  _Classifier(builder, node, num_classes)
  return builder.Build()


def _InvertedResidual(
    builder: builder_lib.GraphBuilder, prefix: str, source: str,
    out_channels: int, expansion: int, stride: int, kernel_size: int) -> str:
  """Adds an inverted residual block, with a shortcut when shapes allow."""
  in_channels = builder.Channels(source)
  node = builder.ConvBnRelu(
      f'{prefix}.expand', source, in_channels * expansion, kernel_size=1)
  node = builder.DepthwiseConv2D(
      f'{prefix}.dw.conv', node, kernel_size=kernel_size, stride=stride)
  node = builder.BatchNorm(f'{prefix}.dw.bn', node)
  node = builder.ReLU(f'{prefix}.dw.relu', node)
  node = builder.ConvBnRelu(
      f'{prefix}.project', node, out_channels, kernel_size=1, relu=False)
  if stride == 1 and in_channels == out_channels:
    node = builder.Add(f'{prefix}.add', node, source)
  return node


def BuildToyMobileNet(
    input_shape: Sequence[int] = (3, 8, 8),
    num_classes: int = 10,
    seed: int = 0,
    randomize_batch_norm: bool = False) -> graph_lib.ModelGraph:
  """Builds a toy inverted-residual (MobileNet-style) network.

  Args:
    input_shape: the per-sample input shape (C,H,W).
    num_classes: the number of classes.
    seed: the weight initialisation seed.
    randomize_batch_norm: draw random batch norm parameters.

  Returns:
    the model graph.
  """
  builder = builder_lib.GraphBuilder(
      seed=seed, randomize_batch_norm=randomize_batch_norm)
  node = builder.Input(input_shape)
  node = builder.ConvBnRelu('stem', node, 16)
  node = _InvertedResidual(builder, 'block1', node, 16, 2, 1, 5)
  node = _InvertedResidual(builder, 'block2', node, 24, 2, 2, 5)
  node = _InvertedResidual(builder, 'block3', node, 24, 2, 1, 3)
  node = builder.ConvBnRelu('head', node, 32, kernel_size=1)
  _Classifier(builder, node, num_classes)
  return builder.Build()


def BuildPlainCnn(
    input_shape: Sequence[int] = (1, 8, 8),
    num_classes: int = 10,
    widths: Sequence[int] = (16, 16, 32, 32),
    seed: int = 0,
    randomize_batch_norm: bool = False) -> graph_lib.ModelGraph:
  """Builds a plain CNN of convolution blocks, pooling after every second.

  Args:
    input_shape: the per-sample input shape (C,H,W).
    num_classes: the number of classes.
    widths: the channel count of every block.
    seed: the weight initialisation seed.
    randomize_batch_norm: draw random batch norm parameters.

  Returns:
    the model graph.
  """
  builder = builder_lib.GraphBuilder(
      seed=seed, randomize_batch_norm=randomize_batch_norm)
  node = builder.Input(input_shape)
  for index, width in enumerate(widths):
    node = builder.ConvBnRelu(f'block{index}', node, width)
    if index % 2 and min(builder.Shape(node)[2:]) >= 2:
      node = builder.MaxPool2D(f'block{index}.pool', node)
  _Classifier(builder, node, num_classes)
  return builder.Build()


ARCHITECTURES: Dict[str, Callable[..., graph_lib.ModelGraph]] = {
    'resnet': BuildToyResNet,
    'mobilenet': BuildToyMobileNet,
    'cnn': BuildPlainCnn,
}
