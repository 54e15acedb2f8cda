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
"""Datasets: IDX files and synthetic class-conditional blobs."""
from __future__ import annotations
import dataclasses
import logging
import math
import pathlib
from typing import Iterator, Optional, Sequence, Tuple, Union

import numpy as np

from elasticnas import definitions
from elasticnas import errors
from elasticnas import utils

logger = logging.getLogger(__name__)

SYNTHETIC_SOURCE = 'synthetic'


@dataclasses.dataclass
class Batch:
  """A batch of samples.

  Attributes:
    inputs: the N,C,H,W inputs.
    labels: the N class indices.
  """
  inputs: np.ndarray
  labels: np.ndarray

  def __len__(self) -> int:
    return int(self.labels.shape[0])


@dataclasses.dataclass
class Dataset:
  """A labelled image dataset.

  Attributes:
    images: the N,C,H,W float32 images scaled to [0,1].
    labels: the N int64 class indices.
    num_classes: the number of classes.
  """
  images: np.ndarray
  labels: np.ndarray
  num_classes: int

  def __post_init__(self):
    if self.images.shape[0] != self.labels.shape[0]:
      raise errors.DimensionMismatch(
          f'{self.images.shape[0]} images but {self.labels.shape[0]} labels')
    if self.labels.size and int(self.labels.max()) >= self.num_classes:
      raise errors.ParserError(
          f'Label {int(self.labels.max())} out of range for '
          f'{self.num_classes} classes')

  def __len__(self) -> int:
    return int(self.labels.shape[0])

  @property
  def sample_shape(self) -> Tuple[int, ...]:
    """The per-sample (C,H,W) shape."""
    return tuple(self.images.shape[1:])

  def Head(self, count: int) -> Dataset:
    """Returns the first count samples."""
    return Dataset(
        images=self.images[:count], labels=self.labels[:count],
        num_classes=self.num_classes)

  def Batches(
      self, batch_size: int,
      order: Optional[Sequence[int]] = None) -> Iterator[Batch]:
    """Yields batches in the given sample order, the last one may be short.

    Args:
      batch_size: the maximum batch size.
      order: an optional permutation of the sample indices.

    Yields:
      Batch
    """
    if order is None:
      order = np.arange(len(self))
    order = np.asarray(order)
    for start in range(0, len(order), batch_size):
      indices = order[start:start + batch_size]
      yield Batch(inputs=self.images[indices], labels=self.labels[indices])


@dataclasses.dataclass
class IdxHeader(utils.FromDecoderMixin):
  """The header of an IDX file.

  Attributes:
    offset: the offset of the header.
    magic: the magic number (data type and number of dimensions).
    dims: the big-endian dimension sizes.
  """
  offset: int
  magic: int
  dims: Tuple[int, ...]

  @property
  def data_offset(self) -> int:
    """The offset of the first data byte."""
    return self.offset + 4 + 4 * len(self.dims)

  @classmethod
  def FromDecoder(
      cls, decoder: utils.StreamDecoder, base_offset: int = 0) -> IdxHeader:
    """Decodes an IDX header.

    Args:
      decoder: the StreamDecoder.
      base_offset: the base offset.

    Returns:
      The IdxHeader instance.

    Raises:
      errors.ParserError: if the header is truncated.
    """
    try:
      offset, magic = decoder.DecodeUint32(byte_order='big')
      num_dims = magic & 0xff
      dims = tuple(
          decoder.DecodeUint32(byte_order='big')[1] for _ in range(num_dims))
    except errors.DecoderError as error:
      raise errors.ParserError(f'Truncated IDX header: {error}') from error
    return cls(offset=base_offset + offset, magic=magic, dims=dims)


def _ReadIdx(
    path: Union[str, pathlib.Path], magic: int, limit: Optional[int]
) -> Tuple[IdxHeader, np.ndarray]:
  """Reads the header and up to limit records of an IDX ubyte file."""
  try:
    file_object = open(path, 'rb')
  except OSError as error:
    raise errors.ParserError(f'Cannot read {path!s}: {error}') from error
  with file_object:
    decoder = utils.StreamDecoder(file_object)
    header = IdxHeader.FromDecoder(decoder)
    if header.magic != magic:
      raise errors.BadMagic(
          f'{path!s}: magic 0x{header.magic:08x}, expected 0x{magic:08x}')
    count = header.dims[0]
    if limit is not None:
      count = min(count, limit)
    record_size = math.prod(header.dims[1:])
    try:
      _, data = decoder.DecodeUint8Array(count * record_size)
    except errors.DecoderError as error:
      raise errors.ParserError(f'{path!s}: truncated data: {error}') from error
  return header, data.reshape((count,) + header.dims[1:])


def LoadIdxDataset(
    images_path: Union[str, pathlib.Path],
    labels_path: Union[str, pathlib.Path],
    limit: Optional[int] = None,
    num_classes: int = 10) -> Dataset:
  """Loads the first limit samples of an IDX image/label file pair.

  Args:
    images_path: the IDX images file (magic 0x00000803).
    labels_path: the IDX labels file (magic 0x00000801).
    limit: the maximum number of samples, None for all.
    num_classes: the number of classes.

  Returns:
    the Dataset with (1,H,W) images scaled by 1/255.

  Raises:
    errors.BadMagic: if a file has the wrong magic number.
    errors.DimensionMismatch: if the files disagree on the sample count.
  """
  image_header, pixels = _ReadIdx(
      images_path, definitions.IDX_IMAGES_MAGIC, limit)
  label_header, labels = _ReadIdx(
      labels_path, definitions.IDX_LABELS_MAGIC, limit)
  if image_header.dims[0] != label_header.dims[0]:
    raise errors.DimensionMismatch(
        f'{image_header.dims[0]} images but {label_header.dims[0]} labels')

  images = pixels.astype(np.float32) * np.float32(definitions.IDX_PIXEL_SCALE)
  images = images.reshape((images.shape[0], 1) + images.shape[1:])
  logger.debug('Loaded %d IDX samples from %s', images.shape[0], images_path)
  return Dataset(
      images=images, labels=labels.astype(np.int64), num_classes=num_classes)


def WriteIdxDataset(
    dataset: Dataset,
    images_path: Union[str, pathlib.Path],
    labels_path: Union[str, pathlib.Path]):
  """Writes a single-channel dataset as an IDX image/label file pair."""
  count, channels, height, width = dataset.images.shape
  if channels != 1:
    raise ValueError('IDX images must have one channel')
  pixels = np.rint(np.clip(dataset.images, 0.0, 1.0) * 255.0).astype(np.uint8)
  with utils.AtomicWriter(images_path) as file_object:
    for value in (definitions.IDX_IMAGES_MAGIC, count, height, width):
      file_object.write(value.to_bytes(4, byteorder='big'))
    file_object.write(pixels.tobytes())
  with utils.AtomicWriter(labels_path) as file_object:
    for value in (definitions.IDX_LABELS_MAGIC, count):
      file_object.write(value.to_bytes(4, byteorder='big'))
    file_object.write(dataset.labels.astype(np.uint8).tobytes())


def MakeSyntheticDataset(
    seed: int,
    num_samples: int,
    num_classes: int,
    shape: Sequence[int]) -> Dataset:
  """Makes class-conditional Gaussian blobs in pixel space.

  Class c is centred on (c + 0.5) / num_classes in every pixel, with
  standard deviation 0.1, clipped to [0,1]. Classes are balanced and
  shuffled.

  Args:
    seed: the random seed.
    num_samples: the number of samples.
    num_classes: the number of classes, at least 2.
    shape: the per-sample (C,H,W) shape.

  Returns:
    the Dataset.

  Raises:
    ValueError: if num_classes < 2.
  """
  if num_classes < 2:
    raise ValueError('A synthetic dataset needs at least two classes')
  rng = np.random.default_rng(seed)
  labels = rng.permutation(np.arange(num_samples) % num_classes)
  means = (labels.astype(np.float64) + 0.5) / num_classes
  noise = rng.normal(0.0, 0.1, (num_samples,) + tuple(shape))
  images = means.reshape((-1,) + (1,) * len(shape)) + noise
  return Dataset(
      images=np.clip(images, 0.0, 1.0).astype(np.float32),
      labels=labels.astype(np.int64),
      num_classes=num_classes)


def LoadSplits(
    source: Union[str, pathlib.Path],
    train_size: int,
    validation_size: int,
    num_classes: int,
    shape: Sequence[int],
    seed: int) -> Tuple[Dataset, Dataset]:
  """Loads the training and validation splits of a data source.

  Args:
    source: 'synthetic' or an IDX directory holding the training file pair
        and optionally the test file pair.
    train_size: the number of training samples.
    validation_size: the number of validation samples.
    num_classes: the number of classes.
    shape: the per-sample (C,H,W) shape of synthetic data.
    seed: the seed of synthetic data.

  Returns:
    the (train, validation) datasets. Without an IDX test pair, validation
    samples follow the training samples of the training pair.

  Raises:
    errors.ParserError: if the IDX files cannot be read.
  """
  if str(source) == SYNTHETIC_SOURCE:
    dataset = MakeSyntheticDataset(
        seed, train_size + validation_size, num_classes, shape)
    return _Split(dataset, train_size)

  directory = pathlib.Path(source)
  images, labels = (directory / name for name in definitions.IDX_TRAIN_FILES)
  test_images, test_labels = (
      directory / name for name in definitions.IDX_TEST_FILES)
  if test_images.exists() and test_labels.exists():
    return (
        LoadIdxDataset(images, labels, train_size, num_classes),
        LoadIdxDataset(test_images, test_labels, validation_size, num_classes))
  dataset = LoadIdxDataset(
      images, labels, train_size + validation_size, num_classes)
  return _Split(dataset, train_size)


def _Split(dataset: Dataset, train_size: int) -> Tuple[Dataset, Dataset]:
  train = Dataset(
      images=dataset.images[:train_size], labels=dataset.labels[:train_size],
      num_classes=dataset.num_classes)
  validation = Dataset(
      images=dataset.images[train_size:], labels=dataset.labels[train_size:],
      num_classes=dataset.num_classes)
  return train, validation
