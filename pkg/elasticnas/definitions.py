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
"""Definitions for elasticnas."""

import enum

MODEL_FORMAT_VERSION = 1
SPACE_FORMAT_VERSION = 1

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
IDX_PIXEL_SCALE = 1.0 / 255.0

BATCH_NORM_MOMENTUM = 0.1
DEFAULT_BATCH_NORM_EPSILON = 1e-5

FIDELITY_TOLERANCE = 1e-6
FIDELITY_BATCH_SIZE = 4
FIDELITY_BATCH_SEED = 0

EVALUATION_BATCH_SIZE = 256

MODEL_MANIFEST_NAME = 'model.json'
MODEL_WEIGHTS_NAME = 'weights.bin'
SPACE_NAME = 'space.json'
PRETRAINED_MANIFEST_NAME = 'pretrained.json'
PRETRAINED_WEIGHTS_NAME = 'pretrained.bin'
REPORT_NAME = 'training_report.csv'
ARCHIVE_NAME = 'archive.csv'
CONFIGS_NAME = 'configs.json'
BASELINE_NAME = 'baseline.json'
FRONT_PLOT_NAME = 'front.svg'

# The IDX file pairs of an IDX dataset directory; the test pair is optional.
IDX_TRAIN_FILES = ('train-images-idx3-ubyte', 'train-labels-idx1-ubyte')
IDX_TEST_FILES = ('t10k-images-idx3-ubyte', 't10k-labels-idx1-ubyte')

SEARCH_CSV_HEADER = (
    'config_id', 'macs', 'params', 'top1_accuracy', 'rank', 'crowding')
REPORT_CSV_HEADER = ('epoch', 'stage', 'mean_loss', 'acc_max', 'acc_min')


class OpKind(str, enum.Enum):
  """Operation kinds of the graph IR."""
  CONV2D = 'Conv2D'
  DEPTHWISE_CONV2D = 'DepthwiseConv2D'
  LINEAR = 'Linear'
  BATCH_NORM = 'BatchNorm'
  RELU = 'ReLU'
  ADD = 'Add'
  MAX_POOL2D = 'MaxPool2D'
  AVG_POOL2D = 'AvgPool2D'
  GLOBAL_AVG_POOL = 'GlobalAvgPool'
  FLATTEN = 'Flatten'
  INPUT = 'Input'
  OUTPUT = 'Output'


class Elasticity(enum.IntFlag):
  """Elastic dimensions of a layer."""
  STATIC = 0
  WIDTH = 1
  KERNEL = 2


class Dimension(str, enum.Enum):
  """Searchable dimension families, in progressive shrinking order."""
  KERNEL = 'kernel'
  DEPTH = 'depth'
  WIDTH = 'width'


class ScheduleKind(str, enum.Enum):
  """Super-network training schedules."""
  PROGRESSIVE_SHRINKING = 'progressive_shrinking'
  SANDWICH = 'sandwich'


class DistillationTeacher(str, enum.Enum):
  """Sources of distillation soft labels."""
  SUPERNET = 'supernet'
  PRETRAINED = 'pretrained'


class DiagnosticCode(str, enum.Enum):
  """Graph validation diagnostic codes."""
  DUPLICATE_ID = 'DuplicateId'
  MISSING_INPUT = 'MissingInput'
  MULTIPLE_INPUTS = 'MultipleInputs'
  MISSING_OUTPUT = 'MissingOutput'
  MULTIPLE_OUTPUTS = 'MultipleOutputs'
  BOUNDARY_MISMATCH = 'BoundaryMismatch'
  UNKNOWN_INPUT = 'UnknownInput'
  ARITY = 'Arity'
  MISSING_ATTRIBUTE = 'MissingAttribute'
  MISSING_WEIGHT = 'MissingWeight'
  WEIGHT_SHAPE = 'WeightShape'
  CYCLE = 'Cycle'
  UNREACHABLE = 'Unreachable'
  DEAD_END = 'DeadEnd'
  SHAPE_MISMATCH = 'ShapeMismatch'


# Weight-bearing kinds that can be made elastic.
WEIGHT_BEARING_KINDS = frozenset([
    OpKind.CONV2D, OpKind.DEPTHWISE_CONV2D, OpKind.LINEAR])

# Kinds whose output channel count is set by the layer itself.
CHANNEL_PRODUCER_KINDS = frozenset([
    OpKind.INPUT, OpKind.CONV2D, OpKind.LINEAR])

CONV_KINDS = frozenset([OpKind.CONV2D, OpKind.DEPTHWISE_CONV2D])

POOL_KINDS = frozenset([OpKind.MAX_POOL2D, OpKind.AVG_POOL2D])

# Capability table, the elastic dimensions each kind can support.
CAPABILITIES = {
    OpKind.CONV2D: Elasticity.WIDTH | Elasticity.KERNEL,
    OpKind.DEPTHWISE_CONV2D: Elasticity.KERNEL,
    OpKind.LINEAR: Elasticity.WIDTH,
}

REQUIRED_ATTRIBUTES = {
    OpKind.CONV2D: ('out_channels', 'kernel_size', 'stride', 'padding'),
    OpKind.DEPTHWISE_CONV2D: ('kernel_size', 'stride', 'padding'),
    OpKind.LINEAR: ('out_features',),
    OpKind.BATCH_NORM: ('epsilon',),
    OpKind.MAX_POOL2D: ('kernel_size', 'stride'),
    OpKind.AVG_POOL2D: ('kernel_size', 'stride'),
    OpKind.INPUT: ('shape',),
}

# Required and optional weight roles per kind.
WEIGHT_ROLES = {
    OpKind.CONV2D: ('weight',),
    OpKind.DEPTHWISE_CONV2D: ('weight',),
    OpKind.LINEAR: ('weight',),
    OpKind.BATCH_NORM: ('gamma', 'beta', 'running_mean', 'running_var'),
}
OPTIONAL_WEIGHT_ROLES = {
    OpKind.LINEAR: ('bias',),
}

# Number of inputs per kind, None for any number of at least two.
ARITY = {
    OpKind.INPUT: 0,
    OpKind.ADD: None,
}
DEFAULT_ARITY = 1
