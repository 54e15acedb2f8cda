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
"""Archive files, baseline files, region tables and the front plot."""
from __future__ import annotations
import csv
import dataclasses
import io
import json
import math
import pathlib
from typing import Any, Dict, List, Optional, Sequence, Union

from elasticnas import definitions
from elasticnas import errors
from elasticnas import utils
from elasticnas.elasticity import space as space_lib
from elasticnas.search import evolution

PathLike = Union[str, pathlib.Path]


@dataclasses.dataclass(frozen=True)
class ArchiveRow:
  """One row of an archive CSV.

  Attributes:
    config_id: the hexadecimal genome hash.
    macs: the MACs.
    params: the parameter count.
    accuracy: the top-1 accuracy.
    rank: the non-domination rank.
    crowding: the crowding distance.
  """
  config_id: str
  macs: int
  params: int
  accuracy: float
  rank: int
  crowding: float


@dataclasses.dataclass(frozen=True)
class Baseline:
  """The evaluated maximal subnetwork.

  Attributes:
    config_id: the hexadecimal genome hash.
    accuracy: the top-1 accuracy.
    macs: the MACs.
    params: the parameter count.
    config: the configuration.
  """
  config_id: str
  accuracy: float
  macs: int
  params: int
  config: space_lib.SubnetworkConfig

  @property
  def objectives(self):
    """The (accuracy, macs) objectives."""
    return (self.accuracy, self.macs)

  @property
  def csv_objectives(self):
    """The objectives at the precision of the archive CSV."""
    return (float(f'{self.accuracy:.6f}'), self.macs)

  @classmethod
  def FromIndividual(cls, individual: evolution.Individual) -> Baseline:
    """Builds the baseline of an evaluated individual."""
    return cls(
        config_id=individual.config_id, accuracy=individual.accuracy,
        macs=individual.macs, params=individual.params,
        config=individual.config)


def _FormatFloat(value: float) -> str:
  return 'inf' if math.isinf(value) else f'{value:.6f}'


def ArchiveCsv(archive: evolution.ParetoArchive) -> str:
  """Returns every evaluated member of an archive as CSV text.

  Rows are ordered by rank, then ascending MACs and descending accuracy;
  the rank and crowding columns are those of the whole archive.
  """
  output = io.StringIO()
  writer = csv.writer(output, lineterminator='\n')
  writer.writerow(definitions.SEARCH_CSV_HEADER)
  for member in archive.Ranked():
    writer.writerow([
        member.config_id, member.macs, member.params,
        f'{member.accuracy:.6f}', member.rank,
        _FormatFloat(member.crowding)])
  return output.getvalue()


def WriteArchive(
    archive: evolution.ParetoArchive,
    csv_path: PathLike,
    configs_path: Optional[PathLike] = None):
  """Writes the archive CSV and the config_id to configuration sidecar.

  Raises:
    errors.IoError: if a file cannot be written.
  """
  with utils.AtomicWriter(csv_path, mode='w') as file_object:
    file_object.write(ArchiveCsv(archive))
  if configs_path is not None:
    document = {
        member.config_id: member.config.ToDict()
        for member in archive.Members()}
    with utils.AtomicWriter(configs_path, mode='w') as file_object:
      file_object.write(json.dumps(document, indent=2, sort_keys=True) + '\n')


def ReadArchive(path: PathLike) -> List[ArchiveRow]:
  """Reads an archive CSV.

  Raises:
    errors.ParserError: if the file cannot be read or is malformed.
  """
  path = pathlib.Path(path)
  try:
    text = path.read_text(encoding='utf-8')
  except (OSError, UnicodeDecodeError) as error:
    raise errors.ParserError(f'Cannot read {path!s}: {error}') from error
  rows = list(csv.reader(io.StringIO(text)))
  if not rows or tuple(rows[0]) != definitions.SEARCH_CSV_HEADER:
    raise errors.ParserError(f'Unexpected archive header in {path!s}')
  archive_rows = []
  for line_number, row in enumerate(rows[1:], start=2):
    try:
      config_id, macs, params, accuracy, rank, crowding = row
      archive_rows.append(ArchiveRow(
          config_id=config_id, macs=int(macs), params=int(params),
          accuracy=float(accuracy), rank=int(rank), crowding=float(crowding)))
    except ValueError as error:
      raise errors.ParserError(
          f'Malformed archive row {line_number} in {path!s}') from error
  return archive_rows


def ReadConfigs(path: PathLike) -> Dict[str, space_lib.SubnetworkConfig]:
  """Reads a config_id to configuration sidecar.

  Raises:
    errors.ParserError: if the file cannot be read or is malformed.
  """
  path = pathlib.Path(path)
  try:
    document = json.loads(path.read_text(encoding='utf-8'))
  except (OSError, UnicodeDecodeError, json.JSONDecodeError) as error:
    raise errors.ParserError(f'Cannot read {path!s}: {error}') from error
  if not isinstance(document, dict):
    raise errors.ParserError(f'Expected an object in {path!s}')
  return {
      config_id: space_lib.SubnetworkConfig.FromDict(value)
      for config_id, value in document.items()}


def WriteBaseline(baseline: Baseline, path: PathLike):
  """Writes a baseline document.

  Raises:
    errors.IoError: if the file cannot be written.
  """
  document = {
      'config_id': baseline.config_id,
      'accuracy': baseline.accuracy,
      'macs': baseline.macs,
      'params': baseline.params,
      'config': baseline.config.ToDict(),
  }
  with utils.AtomicWriter(path, mode='w') as file_object:
    file_object.write(json.dumps(document, indent=2, sort_keys=True) + '\n')


def ReadBaseline(path: PathLike) -> Baseline:
  """Reads a baseline document.

  Raises:
    errors.ParserError: if the file cannot be read or is malformed.
  """
  path = pathlib.Path(path)
  try:
    document = json.loads(path.read_text(encoding='utf-8'))
    return Baseline(
        config_id=str(document['config_id']),
        accuracy=float(document['accuracy']),
        macs=int(document['macs']),
        params=int(document['params']),
        config=space_lib.SubnetworkConfig.FromDict(document['config']))
  except (OSError, UnicodeDecodeError, json.JSONDecodeError) as error:
    raise errors.ParserError(f'Cannot read {path!s}: {error}') from error
  except (KeyError, TypeError, ValueError) as error:
    raise errors.ParserError(f'Malformed baseline {path!s}') from error


def BestAccuracy(members: Sequence[Any]) -> Optional[Any]:
  """Returns the most accurate member, the cheaper one on ties."""
  if not members:
    return None
  return min(members, key=lambda member: (-member.accuracy, member.macs))


def FewestMacs(members: Sequence[Any]) -> Optional[Any]:
  """Returns the cheapest member, the more accurate one on ties."""
  if not members:
    return None
  return min(members, key=lambda member: (member.macs, -member.accuracy))


def FormatRegionTable(
    region: Sequence[Any], baseline: Baseline) -> str:
  """Formats the outperforming region as a text table.

  The best-accuracy and fewest-MACs members are marked.
  """
  best = BestAccuracy(region)
  cheapest = FewestMacs(region)
  lines = [
      f'baseline {baseline.config_id}: accuracy {baseline.accuracy:.6f}, '
      f'MACs {baseline.macs}',
      f'{"config_id":<16}  {"macs":>12}  {"params":>10}  {"accuracy":>9}  '
      f'{"ratio":>6}  mark']
  for member in region:
    marks = []
    if member is best:
      marks.append('best-accuracy')
    if member is cheapest:
      marks.append('fewest-macs')
    ratio = baseline.macs / member.macs if member.macs else math.inf
    lines.append(
        f'{member.config_id:<16}  {member.macs:>12}  {member.params:>10}  '
        f'{member.accuracy:>9.6f}  {ratio:>5.2f}x  {",".join(marks)}'.rstrip())
  lines.append(f'{len(region)} subnetwork(s) outperform the baseline')
  return '\n'.join(lines) + '\n'


def PlotFront(
    archive: evolution.ParetoArchive,
    baseline: Optional[Baseline],
    path: PathLike):
  """Writes an SVG scatter of MACs against accuracy.

  Every evaluated subnetwork is drawn, later generations darker; the front
  is highlighted with its best-accuracy and fewest-MACs members marked, and
  the baseline gets dashed guides. The output does not depend on the time
  of the run.

  Raises:
    errors.ConfigError: if matplotlib is not installed.
    errors.IoError: if the file cannot be written.
  """
  try:
    import matplotlib  # pylint: disable=import-outside-toplevel
    matplotlib.use('Agg')
    from matplotlib import pyplot  # pylint: disable=import-outside-toplevel
  except ImportError as error:
    raise errors.ConfigError(
        'Plotting needs matplotlib: pip install "elasticnas[plot]", or pass '
        '--no-plot') from error

  members = archive.Members()
  with matplotlib.rc_context({'svg.hashsalt': 'elasticnas'}):
    figure, axes = pyplot.subplots(figsize=(6.4, 4.8))
    if members:
      axes.scatter(
          [member.macs for member in members],
          [member.accuracy for member in members],
          c=[member.generation for member in members], cmap='Greys',
          vmin=-1, vmax=max(1, archive.generation), s=12,
          label='evaluated')
    front = archive.front
    if front:
      axes.plot(
          [member.macs for member in front],
          [member.accuracy for member in front],
          color='tab:blue', marker='o', linewidth=1, label='front')
      for member, label in (
          (BestAccuracy(front), 'best accuracy'),
          (FewestMacs(front), 'fewest MACs')):
        axes.annotate(
            label, (member.macs, member.accuracy), textcoords='offset points',
            xytext=(6, -12), fontsize=8)
    if baseline is not None:
      axes.axvline(baseline.macs, color='tab:red', linestyle='--', linewidth=1)
      axes.axhline(
          baseline.accuracy, color='tab:red', linestyle='--', linewidth=1)
      axes.scatter(
          [baseline.macs], [baseline.accuracy], color='tab:red', marker='*',
          s=80, label='baseline')
    axes.set_xlabel('MACs')
    axes.set_ylabel('top-1 accuracy')
    axes.legend(loc='lower right')
    output = io.StringIO()
    figure.savefig(output, format='svg', metadata={'Date': None})
    pyplot.close(figure)
  with utils.AtomicWriter(path, mode='w') as file_object:
    file_object.write(output.getvalue())
