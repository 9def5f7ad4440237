import contextlib
import filecmp
import io
import json
import os
import shutil
import tempfile
import unittest

import pytest

from pyradet import cli
from pyradet.dataset import RadarDataset
from pyradet.processors import read_jsonl


def run(*argv):
    """Run the CLI with stderr captured; returns (exit code, stderr text)."""
    stderr = io.StringIO()
    with contextlib.redirect_stderr(stderr), contextlib.redirect_stdout(io.StringIO()):
        code = cli.main(list(argv))
    return code, stderr.getvalue()


class TestArguments(unittest.TestCase):

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def _config(self, text):
        path = os.path.join(self.test_dir, 'run.cfg')
        with open(path, 'w') as f:
            f.write(text)
        return path

    def test_config_file_overrides_flags(self):
        path = self._config('# inference\nscore_thresh = 0.9\noffsets = false\n')
        args = cli.parse_args(['infer', '--data', 'd', '--oracle', '--score-thresh', '0.2', '--config', path])
        self.assertEqual(args.score_thresh, 0.9)
        self.assertFalse(args.offsets)
        self.assertTrue(args.oracle)

    def test_config_tokens(self):
        tokens = cli.config_tokens([('png', 'yes'), ('augment', 'off'), ('t-list', '1,3')])
        self.assertEqual(tokens, ['--png', '--no-augment', '--t-list=1,3'])

    def test_list_arguments(self):
        args = cli.parse_args(['ablate-frames', '--data', 'd', '--t-list', '1,3', '--seeds', '4'])
        self.assertEqual(args.t_list, (1, 3))
        self.assertEqual(args.seeds, (4,))

    def test_unknown_option_is_usage_error(self):
        code, stderr = run('simulate', '--out', self.test_dir, '--bogus')
        self.assertEqual(code, cli.EXIT_USAGE)
        self.assertIn('bogus', stderr)

    def test_missing_required_option(self):
        self.assertEqual(run('label')[0], cli.EXIT_USAGE)

    def test_unknown_config_key(self):
        path = self._config('colour = blue\n')
        self.assertEqual(run('label', '--data', self.test_dir, '--config', path)[0], cli.EXIT_USAGE)

    def test_malformed_config_line(self):
        path = self._config('score_thresh 0.3\n')
        self.assertEqual(run('eval', '--data', self.test_dir, '--oracle', '--config', path)[0], cli.EXIT_USAGE)

    def test_checkpoint_required(self):
        code, stderr = run('eval', '--data', self.test_dir)
        self.assertEqual(code, cli.EXIT_USAGE)
        self.assertIn('--checkpoint', stderr)

    def test_version(self):
        self.assertEqual(run('--version')[0], cli.EXIT_OK)

    def test_missing_dataset_is_data_error(self):
        code, stderr = run('label', '--data', os.path.join(self.test_dir, 'missing'), '-q')
        self.assertEqual(code, cli.EXIT_DATA)
        self.assertIn('Error:', stderr)


class TestPipeline(unittest.TestCase):
    """simulate -> label -> eval/infer/plot through the command line"""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.data = os.path.join(self.test_dir, 'sim')
        code, _ = run('simulate', '--out', self.data, '--sequences', '10', '--frames', '2', '--seed', '5',
                      '--pedestrians', '0', '--cyclists', '0', '--cars', '1', '-q')
        self.assertEqual(code, cli.EXIT_OK)

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_simulate_is_reproducible(self):
        again = os.path.join(self.test_dir, 'again')
        run('simulate', '--out', again, '--sequences', '10', '--frames', '2', '--seed', '5',
            '--pedestrians', '0', '--cyclists', '0', '--cars', '1', '-q')
        names = sorted(os.listdir(self.data))
        _, mismatch, errors = filecmp.cmpfiles(self.data, again, names, shallow=False)
        self.assertEqual((mismatch, errors), ([], []))

    def test_simulate_rejects_too_few_sequences(self):
        code, _ = run('simulate', '--out', os.path.join(self.test_dir, 'few'), '--sequences', '3', '-q')
        self.assertEqual(code, cli.EXIT_DATA)

    def test_oracle_eval(self):
        self.assertEqual(run('label', '--data', self.data, '-q')[0], cli.EXIT_OK)
        out_json = os.path.join(self.test_dir, 'report.json')
        out_csv = os.path.join(self.test_dir, 'report.csv')
        code, _ = run('eval', '--data', self.data, '--oracle', '--out-json', out_json, '--out-csv', out_csv, '-q')
        self.assertEqual(code, cli.EXIT_OK)
        with open(out_json) as f:
            report = json.load(f)
        self.assertEqual(report['map_2m'], 1.0)
        self.assertEqual(report['map_1m'], 1.0)
        with open(out_csv) as f:
            self.assertIn('oracle', f.read())

    def test_infer_and_plot(self):
        run('label', '--data', self.data, '--label-mode', 'gaussian', '-q')
        detections = os.path.join(self.test_dir, 'dets.jsonl')
        code, _ = run('infer', '--data', self.data, '--oracle', '--split', 'val', '--out', detections, '-q')
        self.assertEqual(code, cli.EXIT_OK)
        records = read_jsonl(detections)
        self.assertTrue(records)
        frame_id = records[0]['frame_id']
        out_dir = os.path.join(self.test_dir, 'plots')
        code, _ = run('plot', '--data', self.data, '--frame', frame_id, '--kind', 'heatmap', '--class-id', '2',
                      '--detections', detections, '--out-dir', out_dir, '-q')
        self.assertEqual(code, cli.EXIT_OK)
        self.assertTrue(os.path.exists(os.path.join(out_dir, f'{frame_id}_heatmap2.pgm')))
        self.assertTrue(os.path.exists(os.path.join(out_dir, f'{frame_id}_heatmap2_overlay.pgm')))
        self.assertTrue(os.path.exists(os.path.join(out_dir, f'{frame_id}_arrows.csv')))

    def test_plot_unknown_frame(self):
        code, stderr = run('plot', '--data', self.data, '--frame', 'seq_9999_f00', '--out-dir', self.test_dir, '-q')
        self.assertEqual(code, cli.EXIT_DATA)
        self.assertIn('seq_9999_f00', stderr)


@pytest.mark.slow
class TestRerunsAreByteIdentical(unittest.TestCase):
    """Every subcommand run twice with the same seed writes the same bytes"""

    SMALL = ('--r-bins', '16', '--a-bins', '16', '--d-bins', '8')
    TRAIN = ('--epochs', '2', '--batch-size', '4', '--seed', '3', '--enc-channels', '4,4,4,4,4,4',
             '--dec-channels', '4,4,4,4', '-q')

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def path(self, *parts):
        return os.path.join(self.test_dir, *parts)

    def assertSameTree(self, first, second):
        names = sorted(os.listdir(first))
        self.assertEqual(names, sorted(os.listdir(second)))
        _, mismatch, errors = filecmp.cmpfiles(first, second, names, shallow=False)
        self.assertEqual((mismatch, errors), ([], []))

    def assertSameFile(self, first, second):
        self.assertTrue(filecmp.cmp(first, second, shallow=False), f'{first} != {second}')

    def test_pipeline_twice(self):
        simulate = ('simulate', '--sequences', '10', '--frames', '2', '--seed', '5', '-q') + self.SMALL
        for name in ('a', 'b'):
            self.assertEqual(run(*simulate, '--out', self.path(name))[0], cli.EXIT_OK)
            self.assertEqual(run('label', '--data', self.path(name), '-q')[0], cli.EXIT_OK)
        self.assertSameTree(self.path('a'), self.path('b'))

        data = self.path('a')
        for name in ('run_a', 'run_b'):
            self.assertEqual(run('train', '--data', data, '--out', self.path(name), *self.TRAIN)[0], cli.EXIT_OK)
        self.assertSameTree(self.path('run_a'), self.path('run_b'))

        checkpoint = self.path('run_a', 'best.ckpt')
        for name in ('a', 'b'):
            code, _ = run('eval', '--data', data, '--checkpoint', checkpoint,
                          '--out-json', self.path(f'eval_{name}.json'),
                          '--out-csv', self.path(f'eval_{name}.csv'), '-q')
            self.assertEqual(code, cli.EXIT_OK)
            code, _ = run('infer', '--data', data, '--checkpoint', checkpoint, '--split', 'val',
                          '--out', self.path(f'dets_{name}.jsonl'), '-q')
            self.assertEqual(code, cli.EXIT_OK)
        for suffix in ('.json', '.csv'):
            self.assertSameFile(self.path('eval_a' + suffix), self.path('eval_b' + suffix))
        self.assertSameFile(self.path('dets_a.jsonl'), self.path('dets_b.jsonl'))

        with RadarDataset(data, verbose=False) as dataset:
            frame_id = dataset.split('val').records[0].id
        for name in ('a', 'b'):
            for kind in ('rd', 'heatmap'):
                code, _ = run('plot', '--data', data, '--frame', frame_id, '--kind', kind, '--class-id', '2',
                              '--detections', self.path('dets_a.jsonl'), '--out-dir', self.path(f'plots_{name}'),
                              '--png', '-q')
                self.assertEqual(code, cli.EXIT_OK)
        self.assertSameTree(self.path('plots_a'), self.path('plots_b'))


if __name__ == '__main__':
    unittest.main()
