# cli.py - PyRaDet Command Line Interface
# Copyright (C) 2026 PyRaDet contributors
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <https://www.gnu.org/licenses/>.

"""
PyRaDet command line: simulate, label, train, infer, eval, ablate-frames, plot.

Usage:
    pyradet simulate --out data/sim --sequences 20 --seed 7
    pyradet label --data data/sim --label-mode bivariate
    pyradet train --data data/sim --out runs/base --epochs 20
    pyradet infer --data data/sim --checkpoint runs/base/best.ckpt --out dets.jsonl
    pyradet eval --data data/sim --checkpoint runs/base/best.ckpt --out-json report.json
    pyradet ablate-frames --data data/sim --t-list 1,3,5 --out ablation.csv
    pyradet plot --data data/sim --frame seq_0000_f00 --kind heatmap --class-id 2

Exit codes: 0 success, 1 usage error, 2 data error.
"""

import argparse
import os
import sys

from . import __version__
from .dataset import RadarDataset
from .inference import InferenceConfig, decode_targets, read_detections, write_detections
from .labeling import LabelConfig
from .losses import LossWeights
from .metadata import CLASS_NAMES, DEFAULTS, SCENE_PRESETS
from .model import VARIANTS, load_checkpoint
from .plotting import MAP_KINDS, plot_frame
from .scene import RadarGeometry, generate_dataset
from .training import TrainConfig, ablate_frames, evaluate, load_samples, predict_split, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

CONFIG_HELP = """
Config file (--config): one 'key = value' per line, '#' starts a comment.
Keys are the long option names of the subcommand, with '-' or '_'
(e.g. 'score_thresh = 0.2'). Boolean options take true/false. Values in
the config file override the command line, which overrides the defaults.
Unknown keys are usage errors.
"""


class UsageError(Exception):
    """Bad command line or config file."""


class ArgumentParser(argparse.ArgumentParser):
    """argparse parser that raises UsageError instead of exiting with status 2."""

    def error(self, message):
        raise UsageError(f'{self.prog}: {message}')


# ==================== Argument Helpers ====================

def int_list(text):
    try:
        return tuple(int(v) for v in text.split(',') if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def float_list(text):
    try:
        return tuple(float(v) for v in text.split(',') if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def read_config_file(path):
    """
    Parse a flat key = value config file.

    Returns:
        List of (key, value) in file order, keys with '_' replaced by '-'

    Raises:
        UsageError: If the file is missing or a line has no '='
    """
    if not os.path.exists(path):
        raise UsageError(f'Config file not found: {path}')
    entries = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, raw in enumerate(f, 1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise UsageError(f"{path}:{line_no}: expected 'key = value', got '{raw.strip()}'")
            key, value = (part.strip() for part in line.split('=', 1))
            entries.append((key.replace('_', '-'), value))
    return entries


def config_tokens(entries):
    """Turn config entries into long options appended after the command line."""
    tokens = []
    for key, value in entries:
        lowered = value.lower()
        if lowered in ('true', 'yes', 'on'):
            tokens.append(f'--{key}')
        elif lowered in ('false', 'no', 'off'):
            tokens.append(f'--no-{key}')
        else:
            tokens.append(f'--{key}={value}')
    return tokens


def _add_common(parser):
    parser.add_argument('--config', type=str, default=None, help='Flat key = value file overriding flags')
    parser.add_argument('-q', '--quiet', action=argparse.BooleanOptionalAction, default=False,
                        help='Suppress progress messages')


def _add_inference(parser):
    infer = DEFAULTS['inference']
    parser.add_argument('--kernel', type=int, default=infer['kernel'],
                        help=f"Peak neighbourhood size, odd (default: {infer['kernel']})")
    parser.add_argument('--score-thresh', type=float, default=infer['score_thresh'],
                        help=f"Minimum peak score (default: {infer['score_thresh']})")
    parser.add_argument('--dnms-radius', type=float, default=infer['dnms_radius_m'],
                        help=f"Distance NMS radius in metres (default: {infer['dnms_radius_m']})")
    parser.add_argument('--offsets', action=argparse.BooleanOptionalAction, default=infer['use_offsets'],
                        help='Apply center-offset correction (default: on)')
    parser.add_argument('--split', choices=('train', 'val', 'test'), default='test',
                        help='Dataset split (default: test)')
    parser.add_argument('--limit', type=int, default=None, help='Only the first N frames of the split')


def _add_training(parser):
    train_defaults = DEFAULTS['training']
    losses = DEFAULTS['losses']
    parser.add_argument('--epochs', type=int, default=train_defaults['epochs'],
                        help=f"Training epochs (default: {train_defaults['epochs']})")
    parser.add_argument('--batch-size', type=int, default=train_defaults['batch_size'],
                        help=f"Batch size (default: {train_defaults['batch_size']})")
    parser.add_argument('--lr', type=float, default=train_defaults['lr0'],
                        help=f"Initial learning rate (default: {train_defaults['lr0']})")
    parser.add_argument('--plateau-patience', type=int, default=train_defaults['plateau_patience'],
                        help=f"Epochs without improvement before lr drops (default: "
                             f"{train_defaults['plateau_patience']})")
    parser.add_argument('--seed', type=int, default=train_defaults['seed'], help='Training seed (default: 0)')
    parser.add_argument('--variant', choices=VARIANTS, default=DEFAULTS['model']['variant'],
                        help=f"Model variant (default: {DEFAULTS['model']['variant']})")
    parser.add_argument('--augment', action=argparse.BooleanOptionalAction, default=True,
                        help='Noise and flip augmentation (default: on)')
    parser.add_argument('--max-steps', type=int, default=None, help='Stop after this many optimizer steps')
    parser.add_argument('--max-train-frames', type=int, default=None,
                        help='Train on the first N frames of the train split only')
    parser.add_argument('--enc-channels', type=int_list, default=None,
                        help='Encoder widths, six comma-separated integers')
    parser.add_argument('--dec-channels', type=int_list, default=None,
                        help='Decoder widths, four comma-separated integers')
    for name in ('w1', 'w2', 'w3'):
        parser.add_argument(f'--{name}', type=float, default=losses[name],
                            help=f'Loss weight {name} (default: {losses[name]})')
    parser.add_argument('--offset-loss', choices=('focal', 'l1'), default=losses['offset_variant'],
                        help=f"Offset loss variant (default: {losses['offset_variant']})")


def build_parser():
    parser = ArgumentParser(
        prog='pyradet',
        description='Raw-radar object detection and heading estimation pipeline',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=CONFIG_HELP,
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', metavar='command')
    sub.required = True

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=CONFIG_HELP,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        _add_common(p)
        return p

    geometry = DEFAULTS['geometry']
    scene = DEFAULTS['scene']
    p = add('simulate', 'Simulate sequences of RA/RD/AD frames into a dataset directory')
    p.add_argument('--out', required=True, help='Dataset directory')
    p.add_argument('--sequences', type=int, default=scene['n_sequences'],
                   help=f"Number of sequences, >= 10 (default: {scene['n_sequences']})")
    p.add_argument('--frames', type=int, default=scene['frames_per_sequence'],
                   help=f"Frames per sequence (default: {scene['frames_per_sequence']})")
    p.add_argument('--seed', type=int, default=0, help='Master seed (default: 0)')
    p.add_argument('--noise-sigma', type=float, default=scene['noise_sigma'],
                   help=f"Half-normal noise scale (default: {scene['noise_sigma']})")
    p.add_argument('--dt', type=float, default=scene['dt'], help=f"Frame period in s (default: {scene['dt']})")
    p.add_argument('--preset', choices=sorted(SCENE_PRESETS), default=scene['preset'],
                   help=f"Scene preset (default: {scene['preset']})")
    for name in CLASS_NAMES:
        p.add_argument(f'--{name}s', type=int, default=scene['class_counts'][name],
                       help=f"{name.capitalize()}s per scene (default: {scene['class_counts'][name]})")
    p.add_argument('--r-bins', type=int, default=geometry['r_bins'], help=f"Range bins (default: {geometry['r_bins']})")
    p.add_argument('--a-bins', type=int, default=geometry['a_bins'],
                   help=f"Azimuth bins (default: {geometry['a_bins']})")
    p.add_argument('--d-bins', type=int, default=geometry['d_bins'],
                   help=f"Doppler bins (default: {geometry['d_bins']})")
    p.add_argument('--r-max', type=float, default=geometry['r_max_m'],
                   help=f"Maximum range in m (default: {geometry['r_max_m']})")
    p.add_argument('--fov', type=float, default=geometry['fov_deg'],
                   help=f"Field of view in degrees (default: {geometry['fov_deg']})")
    p.add_argument('--v-max', type=float, default=geometry['v_max_mps'],
                   help=f"Maximum radial speed in m/s (default: {geometry['v_max_mps']})")

    labeling = DEFAULTS['labeling']
    p = add('label', 'Compute and cache target maps for every frame of a dataset')
    p.add_argument('--data', required=True, help='Dataset directory')
    p.add_argument('--label-mode', choices=('bivariate', 'gaussian'), default=labeling['label_mode'],
                   help=f"Heatmap ground truth (default: {labeling['label_mode']})")
    p.add_argument('--mask-threshold', type=float, default=labeling['mask_threshold'],
                   help=f"Spectrum mask threshold relative to the box peak (default: {labeling['mask_threshold']})")
    p.add_argument('--truncation-correction', action=argparse.BooleanOptionalAction,
                   default=labeling['truncation_correction'],
                   help='Undo the variance shrinkage of the thresholded mask (default: on)')
    p.add_argument('--plain-sigma', type=float, default=None,
                   help='Isotropic sigma in bins for gaussian mode (default: r_bins / 32)')

    p = add('train', 'Train a model on a dataset, writing best.ckpt and train_log.csv')
    p.add_argument('--data', required=True, help='Dataset directory')
    p.add_argument('--out', default='runs', help='Output directory (default: runs)')
    p.add_argument('--t-frames', type=int, default=DEFAULTS['model']['t_frames'],
                   help=f"Stacked frames per input (default: {DEFAULTS['model']['t_frames']})")
    _add_training(p)

    p = add('infer', 'Decode detections for a split into a JSON-lines file')
    p.add_argument('--data', required=True, help='Dataset directory')
    p.add_argument('--checkpoint', default=None, help='Model checkpoint')
    p.add_argument('--oracle', action=argparse.BooleanOptionalAction, default=False,
                   help='Decode the ground-truth target maps instead of a model')
    p.add_argument('--out', default='detections.jsonl', help='Output file (default: detections.jsonl)')
    _add_inference(p)

    metrics = DEFAULTS['metrics']
    p = add('eval', 'Evaluate a checkpoint on a split, writing the report as JSON and CSV')
    p.add_argument('--data', required=True, help='Dataset directory')
    p.add_argument('--checkpoint', default=None, help='Model checkpoint')
    p.add_argument('--oracle', action=argparse.BooleanOptionalAction, default=False,
                   help='Evaluate the ground-truth target maps as predictions')
    p.add_argument('--out-json', default='report.json', help='Report JSON (default: report.json)')
    p.add_argument('--out-csv', default='report.csv', help='Report CSV row (default: report.csv)')
    p.add_argument('--model-name', default=None, help='Row label in the CSV (default: checkpoint name)')
    p.add_argument('--thresholds', type=float_list, default=metrics['thresholds_m'],
                   help='Association thresholds in m (default: 2,1)')
    p.add_argument('--interpolation', choices=('all_point', '11_point'), default=metrics['interpolation'],
                   help=f"AP interpolation (default: {metrics['interpolation']})")
    _add_inference(p)

    p = add('ablate-frames', 'Train and evaluate one model per frame-stack depth and seed')
    p.add_argument('--data', required=True, help='Dataset directory')
    p.add_argument('--t-list', type=int_list, default=(1, 3, 5), help='Stack depths (default: 1,3,5)')
    p.add_argument('--seeds', type=int_list, default=(0, 1, 2), help='Training seeds (default: 0,1,2)')
    p.add_argument('--runs-dir', default='runs/ablation', help='Checkpoint directory (default: runs/ablation)')
    p.add_argument('--out', default='ablation.csv', help='Output CSV (default: ablation.csv)')
    p.add_argument('--split', choices=('train', 'val', 'test'), default='test', help='Evaluation split')
    _add_training(p)

    p = add('plot', 'Write PGM maps, detection overlays and heading arrow CSVs for a frame')
    p.add_argument('--data', required=True, help='Dataset directory')
    p.add_argument('--frame', required=True, help='Frame id, e.g. seq_0000_f00')
    p.add_argument('--kind', choices=MAP_KINDS, default='ra', help='Map to render (default: ra)')
    p.add_argument('--class-id', type=int, default=0, help='Heatmap channel for --kind heatmap')
    p.add_argument('--detections', default=None, help='JSON-lines detections to overlay')
    p.add_argument('--out-dir', default='plots', help='Output directory (default: plots)')
    p.add_argument('--png', action=argparse.BooleanOptionalAction, default=False,
                   help='Also render a PNG with matplotlib')
    return parser


def parse_args(argv):
    """
    Parse argv with the config file named by --config appended to it.

    Raises:
        UsageError: On unknown options, bad values or config keys
    """
    pre = ArgumentParser(add_help=False)
    pre.add_argument('--config', default=None)
    known, _ = pre.parse_known_args(argv)
    extra = []
    if known.config:
        extra = config_tokens(read_config_file(known.config))
        if any(token.startswith(('--config', '--no-config')) for token in extra):
            raise UsageError(f'{known.config}: a config file cannot name another config file')
    return build_parser().parse_args(list(argv) + extra)


# ==================== Subcommands ====================

def _train_config(args, **extra):
    overrides = {}
    if args.enc_channels:
        overrides['enc_channels'] = args.enc_channels
        overrides['fusion_dim'] = args.enc_channels[-1]
    if args.dec_channels:
        overrides['dec_channels'] = args.dec_channels
    weights = LossWeights(w1=args.w1, w2=args.w2, w3=args.w3, offset_variant=args.offset_loss).validate()
    return TrainConfig(
        batch_size=args.batch_size, lr0=args.lr, plateau_patience=args.plateau_patience, epochs=args.epochs,
        weights=weights, seed=args.seed, model_variant=args.variant, augment=args.augment,
        max_steps=args.max_steps, max_train_frames=args.max_train_frames, model_overrides=overrides, **extra,
    ).validate()


def _inference_config(args):
    return InferenceConfig(kernel=args.kernel, score_thresh=args.score_thresh,
                           dnms_radius_m=args.dnms_radius, use_offsets=args.offsets).validate()


def _need_checkpoint(args):
    if not args.oracle and not args.checkpoint:
        raise UsageError(f'{args.command}: --checkpoint is required unless --oracle is given')


def _banner(title, verbose):
    if verbose:
        print()
        print('=' * 60)
        print(title.center(60))
        print('=' * 60)


def cmd_simulate(args, verbose):
    geometry = RadarGeometry(r_bins=args.r_bins, a_bins=args.a_bins, d_bins=args.d_bins, r_max_m=args.r_max,
                             fov_deg=args.fov, v_max_mps=args.v_max).validate()
    class_counts = {name: getattr(args, f'{name}s') for name in CLASS_NAMES}
    generate_dataset(args.out, class_counts=class_counts, frames_per_sequence=args.frames,
                     n_sequences=args.sequences, geometry=geometry, seed=args.seed,
                     noise_sigma=args.noise_sigma, dt=args.dt, preset=args.preset, verbose=verbose)
    if verbose:
        with RadarDataset(args.out, verbose=False) as dataset:
            dataset.info()


def cmd_label(args, verbose):
    config = LabelConfig(label_mode=args.label_mode, mask_threshold=args.mask_threshold,
                         truncation_correction=args.truncation_correction, plain_sigma=args.plain_sigma).validate()
    with RadarDataset(args.data, verbose=verbose) as dataset:
        count = dataset.write_targets(config)
    if verbose:
        print(f'  Labelled {count} frames in {args.data}')


def cmd_train(args, verbose):
    config = _train_config(args, t_frames=args.t_frames)
    result = train(args.data, config, out_dir=args.out, verbose=verbose)
    if verbose:
        print(f'  Best validation loss: {result.best_val_loss:.4f} after {result.steps} steps')
        print(f'  Checkpoint: {result.checkpoint_path}')
        print(f'  Log: {result.log_path}')


def cmd_infer(args, verbose):
    _need_checkpoint(args)
    config = _inference_config(args)
    with RadarDataset(args.data, verbose=False) as dataset:
        if args.oracle:
            samples = load_samples(dataset, args.split, 1, args.limit, dataset.label_config)
            frames = [(s.frame_id, decode_targets(s.targets, dataset.geometry, config)) for s in samples]
        else:
            model, _ = load_checkpoint(args.checkpoint)
            frames = predict_split(model, dataset, args.split, config, args.limit)
    write_detections(args.out, frames)
    if verbose:
        total = sum(len(dets) for _, dets in frames)
        print(f'  Wrote {total} detections for {len(frames)} frames to {args.out}')


def cmd_eval(args, verbose):
    _need_checkpoint(args)
    report = evaluate(args.checkpoint, args.data, split=args.split, inference_config=_inference_config(args),
                      oracle=args.oracle, thresholds_m=args.thresholds, interpolation=args.interpolation,
                      limit=args.limit, verbose=verbose)
    name = args.model_name or ('oracle' if args.oracle else os.path.basename(os.path.dirname(
        os.path.abspath(args.checkpoint))))
    report.to_json(args.out_json)
    report.to_csv(args.out_csv, model_name=name)
    if verbose:
        print(report.to_frame(name).to_string(index=False))
        for flag in report.flags:
            print(f'  Note: {flag}')


def cmd_ablate_frames(args, verbose):
    config = _train_config(args)
    table = ablate_frames(args.data, t_list=args.t_list, base_config=config, seeds=args.seeds,
                          out_dir=args.runs_dir, split=args.split, verbose=verbose)
    table.to_csv(args.out, index=False)
    if verbose:
        print(table.to_string(index=False))


def cmd_plot(args, verbose):
    with RadarDataset(args.data, verbose=False) as dataset:
        detections = None
        if args.detections:
            detections = read_detections(args.detections).get(args.frame, [])
        written = plot_frame(dataset, args.frame, args.kind, args.out_dir, class_id=args.class_id,
                             detections=detections, png=args.png)
    if verbose:
        for label, path in written.items():
            print(f'  {label}: {path}')


COMMANDS = {
    'simulate': cmd_simulate,
    'label': cmd_label,
    'train': cmd_train,
    'infer': cmd_infer,
    'eval': cmd_eval,
    'ablate-frames': cmd_ablate_frames,
    'plot': cmd_plot,
}


def main(argv=None):
    """
    Run one subcommand.

    Returns:
        Exit code: 0 success, 1 usage error, 2 data error
    """
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        verbose = not args.quiet
        _banner(f'pyradet {args.command}', verbose)
        COMMANDS[args.command](args, verbose)
    except UsageError as e:
        print(f'Usage error: {e}', file=sys.stderr)
        print("Run 'pyradet --help' for usage.", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help and --version
        return EXIT_OK if e.code in (None, 0) else EXIT_USAGE
    except (ValueError, OSError, FloatingPointError) as e:
        print(f'Error: {e}', file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
