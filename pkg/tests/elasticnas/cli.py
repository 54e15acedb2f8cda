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
"""Unittests for the command-line tool."""
import contextlib
import hashlib
import io
import json
import pathlib
import tempfile
import unittest

from elasticnas import cli
from elasticnas import definitions
from elasticnas.search import evolution
from elasticnas.search import report

_RUN_CONFIG = {
    'training': {
        'schedule': 'sandwich', 'epochs': 1, 'batch_size': 16,
        'n_random': 1},
    'search': {'population': 4, 'budget': 8, 'validation_size': 16},
    'data': {'train_size': 32, 'validation_size': 16},
    'seed': 7,
}


class AppTest(unittest.TestCase):
  """Unit tests for the App function."""

  def setUp(self):
    self.directory = tempfile.TemporaryDirectory()
    self.root = pathlib.Path(self.directory.name)
    self.config_path = self.root / 'run.json'
    self.config_path.write_text(json.dumps(_RUN_CONFIG), encoding='utf-8')

  def tearDown(self):
    self.directory.cleanup()

  def _Run(self, *argv):
    """Returns the exit code and the standard output of a command."""
    stdout = io.StringIO()
    with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(
        io.StringIO()):
      code = cli.App([str(arg) for arg in argv])
    return code, stdout.getvalue()

  def _Init(self, name='model'):
    model = self.root / f'{name}.json'
    weights = self.root / f'{name}.bin'
    code, _ = self._Run(
        'init', '--architecture', 'cnn', '--config', self.config_path,
        '--out-model', model, '--out-weights', weights)
    self.assertEqual(code, cli.EXIT_SUCCESS)
    return model, weights

  def _Convert(self, name='supernet'):
    model, weights = self._Init()
    out = self.root / name
    code, output = self._Run(
        'convert', '--model', model, '--weights', weights, '--out', out)
    self.assertEqual(code, cli.EXIT_SUCCESS)
    return out, output

  def _Pipeline(self, name):
    supernet, _ = self._Convert(f'{name}-supernet')
    trained = self.root / f'{name}-trained'
    code, _ = self._Run(
        'train', '--supernet', supernet, '--data', 'synthetic', '--config',
        self.config_path, '--out', trained)
    self.assertEqual(code, cli.EXIT_SUCCESS)
    out = self.root / f'{name}-search'
    code, output = self._Run(
        'search', '--supernet', trained, '--data', 'synthetic', '--config',
        self.config_path, '--out', out, '--no-plot')
    self.assertEqual(code, cli.EXIT_SUCCESS)
    self.assertIn('outperform the baseline', output)
    return trained, out

  def test_convert(self):
    """Tests convert writes a super-network and reports the fidelity."""
    out, output = self._Convert()
    self.assertIn('fidelity max|Δ|', output)
    self.assertIn('search space: 36 subnetworks', output)
    for name in (definitions.MODEL_MANIFEST_NAME,
                 definitions.MODEL_WEIGHTS_NAME, definitions.SPACE_NAME,
                 definitions.PRETRAINED_MANIFEST_NAME,
                 definitions.PRETRAINED_WEIGHTS_NAME):
      with self.subTest(name=name):
        self.assertTrue((out / name).exists())

  def test_pipeline_deterministic(self):
    """Tests two runs with the same seed write identical archives."""
    first_trained, first = self._Pipeline('first')
    _, second = self._Pipeline('second')
    for name in (definitions.ARCHIVE_NAME, definitions.CONFIGS_NAME,
                 definitions.BASELINE_NAME):
      with self.subTest(name=name):
        self.assertEqual(
            (first / name).read_bytes(), (second / name).read_bytes())
    self.assertFalse((first / definitions.FRONT_PLOT_NAME).exists())
    self.assertTrue((first_trained / definitions.REPORT_NAME).exists())

    code, output = self._Run(
        'report', '--archive', first / definitions.ARCHIVE_NAME,
        '--baseline', first / definitions.BASELINE_NAME)
    self.assertEqual(code, cli.EXIT_SUCCESS)
    self.assertTrue(output.startswith('baseline '))

    rows = report.ReadArchive(first / definitions.ARCHIVE_NAME)
    config_id = rows[0].config_id
    code, output = self._Run(
        'eval', '--supernet', first_trained, '--subnet',
        first / definitions.CONFIGS_NAME, '--config-id', config_id,
        '--data', 'synthetic', '--config', self.config_path)
    self.assertEqual(code, cli.EXIT_SUCCESS)
    self.assertEqual(
        [line.split()[0] for line in output.splitlines()],
        ['accuracy', 'macs', 'params'])

  def test_eval_extremes(self):
    """Tests the maximal subnetwork costs more than the minimal one."""
    supernet, _ = self._Convert()
    macs = {}
    for subnet in ('max', 'min'):
      code, output = self._Run(
          'eval', '--supernet', supernet, '--subnet', subnet, '--data',
          'synthetic', '--config', self.config_path)
      self.assertEqual(code, cli.EXIT_SUCCESS)
      macs[subnet] = int(output.splitlines()[1].split()[1])
    self.assertGreater(macs['max'], macs['min'])

  def test_export_and_finetune(self):
    """Tests a subnetwork is written as a model that converts again."""
    supernet, _ = self._Convert()
    model = self.root / 'min.json'
    weights = self.root / 'min.bin'
    code, _ = self._Run(
        'finetune', '--supernet', supernet, '--subnet', 'min', '--data',
        'synthetic', '--config', self.config_path, '--out-model', model,
        '--out-weights', weights)
    self.assertEqual(code, cli.EXIT_SUCCESS)
    code, _ = self._Run(
        'export', '--supernet', supernet, '--subnet', 'min', '--out-model',
        model, '--out-weights', weights)
    self.assertEqual(code, cli.EXIT_SUCCESS)
    self.assertTrue(model.exists())

  def _Digests(self):
    """Returns the SHA-256 digest of every file under the root."""
    return {
        path: hashlib.sha256(path.read_bytes()).hexdigest()
        for path in sorted(self.root.rglob('*')) if path.is_file()}

  def _AssertKeepsFiles(self, *argv, expected_code=cli.EXIT_SUCCESS):
    """Runs a command and checks every existing file is left unchanged."""
    before = self._Digests()
    code, _ = self._Run(*argv)
    self.assertEqual(code, expected_code)
    after = self._Digests()
    self.assertEqual(
        [path.name for path in before if after.get(path) != before[path]],
        [])

  def test_inputs_unchanged(self):
    """Tests no command changes a file that exists before it runs."""
    supernet, _ = self._Convert()
    trained = self.root / 'trained'
    search = self.root / 'search'
    run = ('--data', 'synthetic', '--config', self.config_path)
    self._AssertKeepsFiles(
        'train', '--supernet', supernet, *run, '--out', trained)
    self._AssertKeepsFiles(
        'search', '--supernet', trained, *run, '--out', search, '--no-plot')
    self._AssertKeepsFiles(
        'report', '--archive', search / definitions.ARCHIVE_NAME,
        '--baseline', search / definitions.BASELINE_NAME)
    self._AssertKeepsFiles('eval', '--supernet', trained, '--subnet', 'max',
                           *run)
    self._AssertKeepsFiles(
        'export', '--supernet', trained, '--subnet', 'min', '--out-model',
        self.root / 'export.json', '--out-weights', self.root / 'export.bin')
    self._AssertKeepsFiles(
        'finetune', '--supernet', trained, '--subnet', 'min', *run,
        '--out-model', self.root / 'tuned.json', '--out-weights',
        self.root / 'tuned.bin')
    self._AssertKeepsFiles(
        'convert', '--model', self.root / 'tuned.json', '--weights',
        self.root / 'tuned.bin', '--out', self.root / 'reconverted')

  def test_refuses_to_overwrite_inputs(self):
    """Tests a command writing over one of its inputs exits with 2."""
    supernet, _ = self._Convert()
    model = self.root / 'model.json'
    weights = self.root / 'model.bin'
    run = ('--data', 'synthetic', '--config', self.config_path)
    cases = (
        ('train in place',
         ['train', '--supernet', supernet, *run, '--out', supernet]),
        ('train report',
         ['train', '--supernet', supernet, *run, '--out',
          self.root / 'trained', '--report', self.config_path]),
        ('convert over the model',
         ['convert', '--model', model, '--weights', weights, '--out',
          self.root]),
        ('export over the super-network',
         ['export', '--supernet', supernet, '--subnet', 'min', '--out-model',
          supernet / definitions.MODEL_MANIFEST_NAME, '--out-weights',
          self.root / 'export.bin']),
        ('finetune over the config',
         ['finetune', '--supernet', supernet, '--subnet', 'min', *run,
          '--out-model', self.root / 'tuned.json', '--out-weights',
          self.config_path]),
        ('init over the config',
         ['init', '--config', self.config_path, '--out-model',
          self.config_path, '--out-weights', self.root / 'init.bin']),
    )
    for name, argv in cases:
      with self.subTest(name=name):
        self._AssertKeepsFiles(*argv, expected_code=cli.EXIT_RUNTIME_ERROR)
    self.assertFalse((self.root / 'trained').exists())
    self.assertFalse((self.root / 'export.bin').exists())

  def test_budget_below_population(self):
    """Tests an invalid search configuration exits with 1."""
    supernet, _ = self._Convert()
    bad_config = self.root / 'bad.json'
    bad_config.write_text(
        json.dumps({'search': {'population': 8, 'budget': 4}}),
        encoding='utf-8')
    code, _ = self._Run(
        'search', '--supernet', supernet, '--data', 'synthetic', '--config',
        bad_config, '--out', self.root / 'search')
    self.assertEqual(code, cli.EXIT_VALIDATION_ERROR)

  def test_usage_errors(self):
    """Tests usage errors exit with 1."""
    cases = (
        ('no command', []),
        ('missing argument', ['train']),
        ('bad jobs', ['--jobs', '0', 'report', '--archive', 'a',
                      '--baseline', 'b']),
        ('bad shape', ['init', '--input-shape', '1,8', '--out-model', 'm',
                       '--out-weights', 'w']),
        ('init without data', ['init', '--epochs', '1', '--out-model', 'm',
                               '--out-weights', 'w']),
    )
    for name, argv in cases:
      with self.subTest(name=name):
        code, _ = self._Run(*argv)
        self.assertEqual(code, cli.EXIT_VALIDATION_ERROR)

  def test_missing_files(self):
    """Tests unreadable inputs exit with 1."""
    code, _ = self._Run(
        'report', '--archive', self.root / 'missing.csv', '--baseline',
        self.root / 'missing.json')
    self.assertEqual(code, cli.EXIT_VALIDATION_ERROR)
    code, _ = self._Run(
        'train', '--supernet', self.root / 'missing', '--data', 'synthetic',
        '--out', self.root / 'trained')
    self.assertEqual(code, cli.EXIT_VALIDATION_ERROR)


_DESK_CONFIG = {
    'training': {
        'schedule': 'sandwich', 'epochs': 10, 'batch_size': 32,
        'n_random': 2, 'learning_rate': 0.05},
    'search': {'population': 16, 'budget': 160, 'validation_size': 256},
    'data': {'num_classes': 4, 'train_size': 512, 'validation_size': 256},
    'seed': 11,
}


class DeskScaleTest(unittest.TestCase):
  """Unit tests for a small end-to-end run on synthetic data."""

  @classmethod
  def setUpClass(cls):
    cls.directory = tempfile.TemporaryDirectory()
    cls.root = pathlib.Path(cls.directory.name)
    cls.config_path = cls.root / 'run.json'
    cls.config_path.write_text(json.dumps(_DESK_CONFIG), encoding='utf-8')
    cls.trained = cls.root / 'trained'
    cls.search = cls.root / 'search'
    run = ('--data', 'synthetic', '--config', cls.config_path)
    for argv in (
        ('init', '--architecture', 'cnn', '--epochs', 10, *run,
         '--out-model', cls.root / 'model.json', '--out-weights',
         cls.root / 'model.bin'),
        ('convert', '--model', cls.root / 'model.json', '--weights',
         cls.root / 'model.bin', '--out', cls.root / 'supernet'),
        ('train', '--supernet', cls.root / 'supernet', *run, '--out',
         cls.trained),
        ('search', '--supernet', cls.trained, *run, '--out', cls.search,
         '--no-plot')):
      code, _ = cls._Run(*argv)
      if code != cli.EXIT_SUCCESS:
        cls.directory.cleanup()
        raise AssertionError(f'{argv[0]} exited with {code}')

  @classmethod
  def tearDownClass(cls):
    cls.directory.cleanup()

  @staticmethod
  def _Run(*argv):
    stdout = io.StringIO()
    with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(
        io.StringIO()):
      code = cli.App([str(arg) for arg in argv])
    return code, stdout.getvalue()

  def test_cheaper_subnetwork_keeps_accuracy(self):
    """Tests a subnetwork with 60% of the MACs matches the baseline."""
    rows = report.ReadArchive(self.search / definitions.ARCHIVE_NAME)
    baseline = report.ReadBaseline(self.search / definitions.BASELINE_NAME)
    region = evolution.OutperformingRegion(rows, baseline.csv_objectives)
    self.assertTrue(region)
    self.assertTrue(any(
        row.macs <= 0.6 * baseline.macs
        and row.accuracy >= baseline.accuracy - 0.005 for row in rows))

  def test_minimal_close_to_maximal(self):
    """Tests the minimal subnetwork keeps 80% of the maximal accuracy."""
    accuracy = {}
    for subnet in ('max', 'min'):
      code, output = self._Run(
          'eval', '--supernet', self.trained, '--subnet', subnet, '--data',
          'synthetic', '--config', self.config_path)
      self.assertEqual(code, cli.EXIT_SUCCESS)
      accuracy[subnet] = float(output.splitlines()[0].split()[1])
    self.assertGreaterEqual(accuracy['min'], 0.8 * accuracy['max'])


if __name__ == '__main__':
  unittest.main()
