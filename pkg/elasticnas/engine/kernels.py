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
"""Compiled loop kernels.

Every kernel accumulates into a preallocated, zeroed output array in a fixed
loop order, so results are bit-reproducible and keep the dtype of the
arrays passed in. Inputs of convolutions and pools are already padded.
"""
import numba
import numpy as np

_Jit = numba.njit(cache=True, nogil=True)


@_Jit
def Conv2DForward(x, w, stride, out):
  """out[n,o,i,j] += sum over c,p,q of x[n,c,i*s+p,j*s+q] * w[o,c,p,q]."""
  batch, out_channels, out_height, out_width = out.shape
  in_channels, kernel = w.shape[1], w.shape[2]
  for n in range(batch):
    for o in range(out_channels):
      for i in range(out_height):
        for j in range(out_width):
          for c in range(in_channels):
            for p in range(kernel):
              for q in range(kernel):
                out[n, o, i, j] += (
                    x[n, c, i * stride + p, j * stride + q] * w[o, c, p, q])


@_Jit
def Conv2DBackward(x, w, stride, dout, dx, dw):
  """Accumulates the input and weight gradients of Conv2DForward."""
  batch, out_channels, out_height, out_width = dout.shape
  in_channels, kernel = w.shape[1], w.shape[2]
  for n in range(batch):
    for o in range(out_channels):
      for i in range(out_height):
        for j in range(out_width):
          grad = dout[n, o, i, j]
          for c in range(in_channels):
            for p in range(kernel):
              for q in range(kernel):
                dx[n, c, i * stride + p, j * stride + q] += grad * w[o, c, p, q]
                dw[o, c, p, q] += grad * x[n, c, i * stride + p, j * stride + q]


@_Jit
def DepthwiseForward(x, w, stride, out):
  """out[n,c,i,j] += sum over p,q of x[n,c,i*s+p,j*s+q] * w[c,0,p,q]."""
  batch, channels, out_height, out_width = out.shape
  kernel = w.shape[2]
  for n in range(batch):
    for c in range(channels):
      for i in range(out_height):
        for j in range(out_width):
          for p in range(kernel):
            for q in range(kernel):
              out[n, c, i, j] += (
                  x[n, c, i * stride + p, j * stride + q] * w[c, 0, p, q])


@_Jit
def DepthwiseBackward(x, w, stride, dout, dx, dw):
  """Accumulates the input and weight gradients of DepthwiseForward."""
  batch, channels, out_height, out_width = dout.shape
  kernel = w.shape[2]
  for n in range(batch):
    for c in range(channels):
      for i in range(out_height):
        for j in range(out_width):
          grad = dout[n, c, i, j]
          for p in range(kernel):
            for q in range(kernel):
              dx[n, c, i * stride + p, j * stride + q] += grad * w[c, 0, p, q]
              dw[c, 0, p, q] += grad * x[n, c, i * stride + p, j * stride + q]


@_Jit
def MaxPoolForward(x, kernel, stride, out, argmax):
  """Writes window maxima to out and their flat positions to argmax."""
  batch, channels, out_height, out_width = out.shape
  width = x.shape[3]
  for n in range(batch):
    for c in range(channels):
      for i in range(out_height):
        for j in range(out_width):
          best = x[n, c, i * stride, j * stride]
          best_index = i * stride * width + j * stride
          for p in range(kernel):
            for q in range(kernel):
              value = x[n, c, i * stride + p, j * stride + q]
              if value > best:
                best = value
                best_index = (i * stride + p) * width + j * stride + q
          out[n, c, i, j] = best
          argmax[n, c, i, j] = best_index


@_Jit
def MaxPoolBackward(dout, argmax, dx):
  """Routes every output gradient to the position of its window maximum."""
  batch, channels, out_height, out_width = dout.shape
  width = dx.shape[3]
  for n in range(batch):
    for c in range(channels):
      for i in range(out_height):
        for j in range(out_width):
          index = argmax[n, c, i, j]
          dx[n, c, index // width, index % width] += dout[n, c, i, j]


@_Jit
def AvgPoolForward(x, kernel, stride, scale, out):
  """out[n,c,i,j] = scale * window sum; padding counts as zeros."""
  batch, channels, out_height, out_width = out.shape
  for n in range(batch):
    for c in range(channels):
      for i in range(out_height):
        for j in range(out_width):
          for p in range(kernel):
            for q in range(kernel):
              out[n, c, i, j] += x[n, c, i * stride + p, j * stride + q]
          out[n, c, i, j] *= scale


@_Jit
def AvgPoolBackward(dout, kernel, stride, scale, dx):
  """Spreads every output gradient evenly over its window."""
  batch, channels, out_height, out_width = dout.shape
  for n in range(batch):
    for c in range(channels):
      for i in range(out_height):
        for j in range(out_width):
          grad = dout[n, c, i, j] * scale
          for p in range(kernel):
            for q in range(kernel):
              dx[n, c, i * stride + p, j * stride + q] += grad


@_Jit
def LinearForward(x, w, out):
  """out[n,o] += sum over i of x[n,i] * w[o,i]."""
  batch, out_features = out.shape
  in_features = w.shape[1]
  for n in range(batch):
    for o in range(out_features):
      for i in range(in_features):
        out[n, o] += x[n, i] * w[o, i]


@_Jit
def LinearBackward(x, w, dout, dx, dw):
  """Accumulates the input and weight gradients of LinearForward."""
  batch, out_features = dout.shape
  in_features = w.shape[1]
  for n in range(batch):
    for o in range(out_features):
      grad = dout[n, o]
      for i in range(in_features):
        dx[n, i] += grad * w[o, i]
        dw[o, i] += grad * x[n, i]


def Pad(x: np.ndarray, padding: int, value: float = 0.0) -> np.ndarray:
  """Returns a contiguous copy of an NCHW array padded on both spatial axes."""
  if not padding:
    return np.ascontiguousarray(x)
  return np.pad(
      x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
      mode='constant', constant_values=value)


def Unpad(x: np.ndarray, padding: int) -> np.ndarray:
  """Returns the interior of a padded NCHW array."""
  if not padding:
    return x
  return x[:, :, padding:-padding, padding:-padding]
