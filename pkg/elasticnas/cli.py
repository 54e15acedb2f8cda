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
"""A CLI tool for elasticnas."""
import argparse
import enum
import json
import logging
import pathlib
import sys
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from elasticnas import config as config_lib
from elasticnas import datasets
from elasticnas import definitions
from elasticnas import errors
from elasticnas import metrics
from elasticnas import model_io
from elasticnas import training
from elasticnas import version
from elasticnas.elasticity import conversion
from elasticnas.elasticity import network as network_lib
from elasticnas.elasticity import space as space_lib
from elasticnas.engine import optimizer
from elasticnas.ir import graph as graph_lib
from elasticnas.ir import models
from elasticnas.search import evolution
from elasticnas.search import nsga2
from elasticnas.search import report

logger = logging.getLogger(__name__)

# Exit codes.
EXIT_SUCCESS = 0
EXIT_VALIDATION_ERROR = 1
EXIT_RUNTIME_ERROR = 2


class _Stream(enum.IntEnum):
  """Independent random streams derived from the run seed."""
  DATA = 0
  TRAIN = 1
  INIT = 2
  FINETUNE = 3


class UsageError(Exception):
  """Invalid command-line arguments."""


class _ArgumentParser(argparse.ArgumentParser):
  """An argument parser that raises instead of exiting on usage errors."""

  def error(self, message):
    raise UsageError(message)


def _Rng(seed: int, stream: _Stream) -> np.random.Generator:
  return np.random.default_rng([seed, int(stream)])


def _LoadRunConfig(args) -> config_lib.RunConfig:
  """Reads --config and applies --seed."""
  run_config = (
      config_lib.RunConfig.FromFile(args.config) if args.config
      else config_lib.RunConfig())
  if args.seed is not None:
    run_config = run_config.WithSeed(args.seed).Validate()
  return run_config


def _LoadData(
    args, run_config: config_lib.RunConfig,
    input_shape: graph_lib.TensorShape
) -> Tuple[datasets.Dataset, datasets.Dataset]:
  data = run_config.data
  shape = data.synthetic_shape or input_shape.dims[1:]
  return datasets.LoadSplits(
      args.data, data.train_size, data.validation_size, data.num_classes,
      shape, int(_Rng(run_config.seed, _Stream.DATA).integers(2**31)))


def _LoadSubnet(
    network: network_lib.SuperNetwork,
    subnet: str,
    config_id: Optional[str]) -> space_lib.SubnetworkConfig:
  """Resolves --subnet: 'max', 'min', a config document or a sidecar."""
  if subnet == 'max':
    return space_lib.MaximalConfig(network.space)
  if subnet == 'min':
    return space_lib.MinimalConfig(network.space)
  if config_id is not None:
    configs = report.ReadConfigs(subnet)
    if config_id not in configs:
      raise errors.ConfigError(f'No configuration {config_id} in {subnet}')
    config = configs[config_id]
  else:
    try:
      text = pathlib.Path(subnet).read_text(encoding='utf-8')
    except (OSError, UnicodeDecodeError) as error:
      raise errors.ParserError(f'Cannot read {subnet}: {error}') from error
    config = space_lib.SubnetworkConfig.FromDict(_ParseJson(text, subnet))
  try:
    network.space.Validate(config)
  except errors.InvalidChoice as error:
    raise errors.ConfigError(str(error)) from error
  return config


def _ParseJson(text: str, source: str):
  try:
    return json.loads(text)
  except json.JSONDecodeError as error:
    raise errors.ParserError(f'Cannot parse {source}: {error}') from error


def _LoadPretrained(directory: pathlib.Path) -> Optional[graph_lib.ModelGraph]:
  manifest = directory / definitions.PRETRAINED_MANIFEST_NAME
  weights = directory / definitions.PRETRAINED_WEIGHTS_NAME
  if not manifest.exists() or not weights.exists():
    return None
  return model_io.LoadModel(manifest, weights)


def _SavePretrained(model: graph_lib.ModelGraph, directory: pathlib.Path):
  model_io.SaveModel(
      model, directory / definitions.PRETRAINED_MANIFEST_NAME,
      directory / definitions.PRETRAINED_WEIGHTS_NAME)


def _ParseShape(value: str) -> Tuple[int, ...]:
  try:
    shape = tuple(int(dim) for dim in value.split(','))
  except ValueError as error:
    raise argparse.ArgumentTypeError(f'invalid shape {value!r}') from error
  if len(shape) != 3 or min(shape) < 1:
    raise argparse.ArgumentTypeError('shape must be C,H,W')
  return shape


def _SuperNetworkFiles(directory: pathlib.Path) -> List[pathlib.Path]:
  return [
      directory / name for name in (
          definitions.MODEL_MANIFEST_NAME, definitions.MODEL_WEIGHTS_NAME,
          definitions.SPACE_NAME, definitions.PRETRAINED_MANIFEST_NAME,
          definitions.PRETRAINED_WEIGHTS_NAME)]


def _RunInputs(args) -> List[pathlib.Path]:
  """Returns the --config file and the files of an IDX --data directory."""
  inputs = [args.config] if getattr(args, 'config', None) else []
  data = getattr(args, 'data', None)
  if data and data != datasets.SYNTHETIC_SOURCE:
    inputs.extend(
        pathlib.Path(data) / name
        for name in definitions.IDX_TRAIN_FILES + definitions.IDX_TEST_FILES)
  return inputs


def _SubnetInputs(args) -> List[pathlib.Path]:
  if args.subnet in ('max', 'min'):
    return []
  return [pathlib.Path(args.subnet)]


def _CheckOutputs(
    inputs: Iterable[pathlib.Path], outputs: Iterable[pathlib.Path]):
  """Checks that no output path is one of the input files.

  Raises:
    errors.IoError: if an output would overwrite an input.
  """
  protected = {pathlib.Path(path).resolve() for path in inputs}
  for path in outputs:
    if pathlib.Path(path).resolve() in protected:
      raise errors.IoError(f'Refusing to overwrite the input file {path!s}')


def InitCommand(args) -> int:
  """Builds a bundled model, optionally pre-trained."""
  _CheckOutputs(_RunInputs(args), [args.out_model, args.out_weights])
  run_config = _LoadRunConfig(args)
  model = models.ARCHITECTURES[args.architecture](
      input_shape=args.input_shape, num_classes=run_config.data.num_classes,
      seed=run_config.seed)
  if args.epochs:
    train, validation = _LoadData(args, run_config, model.input_shape)
    network = network_lib.SuperNetwork.FromStaticModel(model)
    settings = run_config.training
    state = optimizer.OptimizerState(
        learning_rate=settings.learning_rate, momentum=settings.momentum,
        weight_decay=settings.weight_decay)
    training.TrainFixed(
        network, train, args.epochs, _Rng(run_config.seed, _Stream.INIT),
        state, batch_size=settings.batch_size, validation=validation)
  model_io.SaveModel(model, args.out_model, args.out_weights)
  print(f'wrote {args.architecture} model to {args.out_model}')
  return EXIT_SUCCESS


def ConvertCommand(args) -> int:
  """Converts a model into a super-network directory."""
  policy = (
      config_lib.LoadPolicy(args.policy) if args.policy
      else config_lib.ElasticityPolicy())
  out = pathlib.Path(args.out)
  inputs = [args.model, args.weights] + ([args.policy] if args.policy else [])
  _CheckOutputs(inputs, _SuperNetworkFiles(out))
  model = model_io.LoadModel(args.model, args.weights)
  network = conversion.Convert(model, policy, check_fidelity=False)
  max_abs_diff = conversion.CheckFidelity(model, network)
  conversion.SaveSuperNetwork(network, out)
  _SavePretrained(model, out)
  print(f'search space: {network.space.Cardinality()} subnetworks')
  print(
      f'fidelity max|Δ| = {max_abs_diff:.3e} ≤ '
      f'{definitions.FIDELITY_TOLERANCE:.0e}')
  return EXIT_SUCCESS


def TrainCommand(args) -> int:
  """Trains a super-network and writes a checkpoint and a report."""
  run_config = _LoadRunConfig(args)
  source = pathlib.Path(args.supernet)
  out = pathlib.Path(args.out)
  report_path = args.report or out / definitions.REPORT_NAME
  _CheckOutputs(
      _SuperNetworkFiles(source) + _RunInputs(args),
      _SuperNetworkFiles(out) + [report_path])
  network = conversion.LoadSuperNetwork(source)
  pretrained = _LoadPretrained(source)
  teacher = None
  if (run_config.training.teacher_kind
      == definitions.DistillationTeacher.PRETRAINED):
    if pretrained is None:
      raise errors.ConfigError(
          f'The pretrained teacher needs a pretrained model in {source!s}')
    teacher = network_lib.SuperNetwork.FromStaticModel(pretrained)
  train, validation = _LoadData(args, run_config, network.base.input_shape)

  training_report = training.Train(
      network, train, run_config.training,
      _Rng(run_config.seed, _Stream.TRAIN), validation=validation,
      teacher=teacher)

  conversion.SaveSuperNetwork(network, out)
  if pretrained is not None:
    _SavePretrained(pretrained, out)
  training_report.Write(report_path)
  print(f'wrote checkpoint to {out!s} and report to {report_path!s}')
  return EXIT_SUCCESS


def SearchCommand(args) -> int:
  """Searches the Pareto front and writes the archive files."""
  out = pathlib.Path(args.out)
  _CheckOutputs(
      _SuperNetworkFiles(pathlib.Path(args.supernet)) + _RunInputs(args),
      [out / name for name in (
          definitions.ARCHIVE_NAME, definitions.CONFIGS_NAME,
          definitions.BASELINE_NAME, definitions.FRONT_PLOT_NAME)])
  run_config = _LoadRunConfig(args)
  network = conversion.LoadSuperNetwork(args.supernet)
  _, validation = _LoadData(args, run_config, network.base.input_shape)
  validation = validation.Head(run_config.search.validation_size)

  try:
    out.mkdir(parents=True, exist_ok=True)
  except OSError as error:
    raise errors.IoError(f'Cannot create {out!s}: {error}') from error
  csv_path = out / definitions.ARCHIVE_NAME
  configs_path = out / definitions.CONFIGS_NAME

  def _Checkpoint(archive: evolution.ParetoArchive):
    report.WriteArchive(archive, csv_path, configs_path)

  archive = evolution.Evolve(
      network, validation, run_config.search, seed=run_config.seed,
      jobs=args.jobs, checkpoint=_Checkpoint)
  baseline = report.Baseline.FromIndividual(archive.Lookup(
      nsga2.EncodeGenome(
          network.space, space_lib.MaximalConfig(network.space))))

  report.WriteArchive(archive, csv_path, configs_path)
  report.WriteBaseline(baseline, out / definitions.BASELINE_NAME)
  if not args.no_plot:
    report.PlotFront(archive, baseline, out / definitions.FRONT_PLOT_NAME)
  region = evolution.OutperformingRegion(archive, baseline.objectives)
  print(
      f'{len(archive.front)} front members from {archive.evaluations} '
      f'evaluations ({archive.unique_evaluations} unique); '
      f'{len(region)} outperform the baseline')
  return EXIT_SUCCESS


def EvalCommand(args) -> int:
  """Prints the accuracy and costs of one subnetwork."""
  run_config = _LoadRunConfig(args)
  network = conversion.LoadSuperNetwork(args.supernet)
  config = _LoadSubnet(network, args.subnet, args.config_id)
  _, validation = _LoadData(args, run_config, network.base.input_shape)
  accuracy = training.Evaluate(network, config, validation)
  costs = metrics.CountMacs(network, config)
  print(f'accuracy {accuracy:.6f}')
  print(f'macs {costs.total_macs}')
  print(f'params {costs.total_params}')
  return EXIT_SUCCESS


def ReportCommand(args) -> int:
  """Prints the subnetworks of an archive that outperform the baseline."""
  rows = report.ReadArchive(args.archive)
  baseline = report.ReadBaseline(args.baseline)
  region = evolution.OutperformingRegion(rows, baseline.csv_objectives)
  sys.stdout.write(report.FormatRegionTable(region, baseline))
  return EXIT_SUCCESS


def ExportCommand(args) -> int:
  """Writes one subnetwork as a standalone model."""
  _CheckOutputs(
      _SuperNetworkFiles(pathlib.Path(args.supernet)) + _SubnetInputs(args),
      [args.out_model, args.out_weights])
  network = conversion.LoadSuperNetwork(args.supernet)
  config = _LoadSubnet(network, args.subnet, args.config_id)
  model_io.SaveModel(
      network_lib.ExtractSubnetwork(network, config), args.out_model,
      args.out_weights)
  print(f'wrote subnetwork to {args.out_model}')
  return EXIT_SUCCESS


def FinetuneCommand(args) -> int:
  """Fine-tunes one subnetwork and writes it as a standalone model."""
  _CheckOutputs(
      _SuperNetworkFiles(pathlib.Path(args.supernet)) + _SubnetInputs(args)
      + _RunInputs(args),
      [args.out_model, args.out_weights])
  run_config = _LoadRunConfig(args)
  network = conversion.LoadSuperNetwork(args.supernet)
  config = _LoadSubnet(network, args.subnet, args.config_id)
  train, validation = _LoadData(args, run_config, network.base.input_shape)
  subnetwork = network_lib.SuperNetwork.FromStaticModel(
      network_lib.ExtractSubnetwork(network, config))
  settings = run_config.training
  state = optimizer.OptimizerState(
      learning_rate=settings.learning_rate, momentum=settings.momentum,
      weight_decay=settings.weight_decay)
  before = training.Evaluate(subnetwork, None, validation)
  result = training.TrainFixed(
      subnetwork, train, args.epochs, _Rng(run_config.seed, _Stream.FINETUNE),
      state, batch_size=settings.batch_size, validation=validation)
  after = result.records[-1].acc_max if result.records else before
  model_io.SaveModel(subnetwork.base, args.out_model, args.out_weights)
  print(f'accuracy {before:.6f} -> {after:.6f}')
  return EXIT_SUCCESS


def _AddRunArguments(parser: argparse.ArgumentParser, data_required=True):
  parser.add_argument(
      '--data',
      required=data_required,
      help="The data source: 'synthetic' or an IDX directory.")
  parser.add_argument(
      '--config',
      type=pathlib.Path,
      help='The run configuration document.')


def _AddSubnetArguments(parser: argparse.ArgumentParser):
  parser.add_argument(
      '--subnet',
      required=True,
      help=(
          "The subnetwork: 'max', 'min', a configuration document or, with "
          '--config-id, a configuration sidecar.'))
  parser.add_argument(
      '--config-id',
      help='The configuration to take from a sidecar.')


def BuildParser() -> argparse.ArgumentParser:
  """Returns the argument parser."""
  parser = _ArgumentParser(
      prog='elasticnas',
      description='A cli tool for weight-sharing neural architecture search',
      epilog=f'Version {version.GetVersion()}')
  parser.add_argument(
      '--seed',
      type=int,
      help='The seed of every random stream. Default is the config seed, 42.')
  parser.add_argument(
      '--jobs',
      type=int,
      default=1,
      help='Concurrent search evaluations. Default is 1.')
  parser.add_argument(
      '-v', '--verbose',
      action='store_true',
      help='Log debug messages.')

  subparsers = parser.add_subparsers(dest='command', required=True)

  parser_init = subparsers.add_parser(
      'init', help='Build a bundled model, optionally pre-trained.')
  parser_init.add_argument(
      '--architecture',
      choices=sorted(models.ARCHITECTURES),
      default='cnn',
      help='The bundled architecture. Default is cnn.')
  parser_init.add_argument(
      '--input-shape',
      type=_ParseShape,
      default=(1, 8, 8),
      help='The per-sample input shape C,H,W. Default is 1,8,8.')
  parser_init.add_argument(
      '--epochs',
      type=int,
      default=0,
      help='Pre-training epochs. Default is 0.')
  _AddRunArguments(parser_init, data_required=False)
  parser_init.add_argument('--out-model', required=True, type=pathlib.Path)
  parser_init.add_argument('--out-weights', required=True, type=pathlib.Path)
  parser_init.set_defaults(func=InitCommand)

  parser_convert = subparsers.add_parser(
      'convert', help='Convert a model into a super-network.')
  parser_convert.add_argument(
      '--model', required=True, type=pathlib.Path, help='The model manifest.')
  parser_convert.add_argument(
      '--weights', required=True, type=pathlib.Path,
      help='The model weight payload.')
  parser_convert.add_argument(
      '--policy', type=pathlib.Path, help='The elasticity policy document.')
  parser_convert.add_argument(
      '--out', required=True, type=pathlib.Path,
      help='The super-network directory.')
  parser_convert.set_defaults(func=ConvertCommand)

  parser_train = subparsers.add_parser(
      'train', help='Train a super-network.')
  parser_train.add_argument(
      '--supernet', required=True, type=pathlib.Path,
      help='The super-network directory.')
  _AddRunArguments(parser_train)
  parser_train.add_argument(
      '--out', required=True, type=pathlib.Path,
      help='The checkpoint directory, other than the super-network directory.')
  parser_train.add_argument(
      '--report', type=pathlib.Path, help='The training report CSV.')
  parser_train.set_defaults(func=TrainCommand)

  parser_search = subparsers.add_parser(
      'search', help='Search the Pareto front of a trained super-network.')
  parser_search.add_argument(
      '--supernet', required=True, type=pathlib.Path,
      help='The super-network directory.')
  _AddRunArguments(parser_search)
  parser_search.add_argument(
      '--out', required=True, type=pathlib.Path,
      help='The output directory.')
  parser_search.add_argument(
      '--no-plot', action='store_true', help='Do not write the SVG plot.')
  parser_search.set_defaults(func=SearchCommand)

  parser_eval = subparsers.add_parser(
      'eval', help='Evaluate one subnetwork.')
  parser_eval.add_argument(
      '--supernet', required=True, type=pathlib.Path,
      help='The super-network directory.')
  _AddSubnetArguments(parser_eval)
  _AddRunArguments(parser_eval)
  parser_eval.set_defaults(func=EvalCommand)

  parser_report = subparsers.add_parser(
      'report', help='Print the subnetworks that outperform the baseline.')
  parser_report.add_argument(
      '--archive', required=True, type=pathlib.Path, help='The archive CSV.')
  parser_report.add_argument(
      '--baseline', required=True, type=pathlib.Path,
      help='The baseline document.')
  parser_report.set_defaults(func=ReportCommand)

  parser_export = subparsers.add_parser(
      'export', help='Write one subnetwork as a standalone model.')
  parser_export.add_argument(
      '--supernet', required=True, type=pathlib.Path,
      help='The super-network directory.')
  _AddSubnetArguments(parser_export)
  parser_export.add_argument('--out-model', required=True, type=pathlib.Path)
  parser_export.add_argument('--out-weights', required=True, type=pathlib.Path)
  parser_export.set_defaults(func=ExportCommand)

  parser_finetune = subparsers.add_parser(
      'finetune', help='Fine-tune one subnetwork as a standalone model.')
  parser_finetune.add_argument(
      '--supernet', required=True, type=pathlib.Path,
      help='The super-network directory.')
  _AddSubnetArguments(parser_finetune)
  _AddRunArguments(parser_finetune)
  parser_finetune.add_argument(
      '--epochs', type=int, default=1, help='Epochs. Default is 1.')
  parser_finetune.add_argument('--out-model', required=True, type=pathlib.Path)
  parser_finetune.add_argument(
      '--out-weights', required=True, type=pathlib.Path)
  parser_finetune.set_defaults(func=FinetuneCommand)
  return parser


def _ConfigureLogging(verbose: bool):
  logging.basicConfig(
      level=logging.DEBUG if verbose else logging.INFO,
      stream=sys.stderr,
      format='%(levelname)s %(name)s: %(message)s')


def App(argv: Optional[Sequence[str]] = None) -> int:
  """The CLI app entrypoint for elasticnas.

  Args:
    argv: the arguments, sys.argv[1:] by default.

  Returns:
    0 on success, 1 on a usage or validation error, 2 on a runtime error.
  """
  parser = BuildParser()
  try:
    args = parser.parse_args(argv)
    if args.jobs < 1:
      raise UsageError('--jobs must be at least 1')
    if getattr(args, 'epochs', 0) < 0:
      raise UsageError('--epochs must not be negative')
    if args.command == 'init' and args.epochs and not args.data:
      raise UsageError('pre-training needs --data')
  except UsageError as error:
    parser.print_usage(sys.stderr)
    print(f'elasticnas: error: {error}', file=sys.stderr)
    return EXIT_VALIDATION_ERROR

  _ConfigureLogging(args.verbose)
  try:
    return args.func(args)
  except (errors.ConfigError, errors.ParserError) as error:
    print(f'elasticnas: error: {error}', file=sys.stderr)
    return EXIT_VALIDATION_ERROR
  except (errors.Error, OSError, ValueError) as error:
    print(f'elasticnas: error: {error}', file=sys.stderr)
    return EXIT_RUNTIME_ERROR


def Main():
  """The console script entrypoint."""
  sys.exit(App())
