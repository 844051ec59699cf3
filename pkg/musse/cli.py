# -*- coding: utf-8 -*-

"""
Command line interface.

    musse simulate --spec spec.json --out DIR
    musse train --config cfg.json --data manifest.json --out RUN
    musse train-stage --run RUN --stage 2
    musse eval --run RUN --data manifest.json --rois rois.json --report out.json
    musse infer --run RUN --seq DIR --out DIR
    musse metrics --strain z.f32 --rois rois.json

Exit codes: 0 success, 2 configuration error, 3 data error, 4 divergence.
"""

from typing import List, Optional
import os
import sys
import json
import argparse
import logging
from .config import TrainConfig
from .errors import ConfigError, MusseError
from .evaluation import evaluate
from .fieldops import StrainMap
from .inference import infer
from .logs import setup_logging
from .metrics import cnr, snr_background, snr_e, snr_target
from .phantom import PhantomSpec, build_phantom_dataset, default_rois, simulate_sequence
from .rfdata import load_manifest, load_rois_file, save_rois_file, save_sequence
from .checkpoint import load_stack
from .storage import Float32BlobStorage, JsonFileStorage
from .training import train, train_stage_in_run
from .version import __version__

log = logging.getLogger(__name__)


def cmd_simulate(args):
    spec = PhantomSpec.from_json(args.spec)
    if args.count:
        manifest = build_phantom_dataset(spec, args.out, args.count, args.val_fraction, args.test_fraction,
                                         args.seed)
        log.info("dataset written", extra={"out": args.out, "sequences": len(manifest.entries)})
        return
    seq, _ = simulate_sequence(spec)
    save_sequence(seq, args.out)
    if spec.inclusions:
        save_rois_file(default_rois(spec), os.path.join(args.out, 'rois.json'), seq.shape)
    log.info("sequence written", extra={"out": args.out, "T": seq.T})


def cmd_train(args):
    config = TrainConfig.from_json(args.config) if args.config else TrainConfig.desk()
    result = train(config, args.data, args.out, resume=args.resume)
    for m, stage in result.stages.items():
        log.info("stage %d loss %.6g -> %.6g", m, stage.first_loss, stage.final_loss)


def cmd_train_stage(args):
    train_stage_in_run(args.run, args.stage, args.data)


def cmd_eval(args):
    stack = load_stack(args.run)
    manifest = load_manifest(args.data)
    rois = load_rois_file(args.rois)[0] if args.rois else None
    result = evaluate(stack, manifest, rois, splits=args.splits, mask_eps=args.mask_eps, norm=args.norm,
                      tau_rel=args.tau_rel)
    if args.report:
        root, name = os.path.split(os.path.abspath(args.report))
        JsonFileStorage(root, suf='').set(name, result.to_dict())
    sys.stdout.write(result.to_table())


def cmd_infer(args):
    stack = load_stack(args.run)
    infer(stack, args.seq, args.out, tuple(args.window) if args.window else None, args.stage)


def cmd_metrics(args):
    rois, shape = load_rois_file(args.rois)
    shape = tuple(args.shape) if args.shape else shape
    if shape is None:
        raise ConfigError("the strain blob shape is unknown, pass --shape or store it in the ROI file")
    root, name = os.path.split(os.path.abspath(args.strain))
    stem, suf = os.path.splitext(name)
    values = Float32BlobStorage(root, suf=suf).fetch(stem, shape=shape)
    if values is None:
        raise ConfigError(f"strain blob {args.strain} not found")
    z = StrainMap(values if args.signed else -values.astype('float64'))
    target, background = rois
    report = {
        "SNR_t": snr_target(z, target),
        "SNR_bg": snr_background(z, background),
        "CNR": cnr(z, target, background),
        "SNR_e": snr_e(z),
    }
    sys.stdout.write(json.dumps(report, sort_keys=True) + '\n')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='musse', description='Unsupervised multi-stage strain elastography.')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument('--log-level', default='INFO', help='logging level (default: INFO)')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('simulate', help='simulate a phantom sequence or dataset')
    p.add_argument('--spec', required=True, help='phantom spec json')
    p.add_argument('--out', required=True, help='output directory')
    p.add_argument('--count', type=int, default=0, help='write a dataset of this many random phantoms')
    p.add_argument('--val-fraction', type=float, default=0.0, help='share of the dataset in the val split')
    p.add_argument('--test-fraction', type=float, default=0.15, help='share of the dataset in the test split')
    p.add_argument('--seed', type=int, default=0, help='dataset seed')
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser('train', help='train all stages')
    p.add_argument('--config', help='training config json (default: desk preset)')
    p.add_argument('--data', required=True, help='dataset manifest')
    p.add_argument('--out', required=True, help='run directory')
    p.add_argument('--resume', action='store_true', help='continue an interrupted run')
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('train-stage', help='train one stage of an existing run')
    p.add_argument('--run', required=True, help='run directory')
    p.add_argument('--stage', type=int, required=True, help='stage index, 1-based')
    p.add_argument('--data', help='dataset manifest (default: the one recorded in the run)')
    p.set_defaults(func=cmd_train_stage)

    p = sub.add_parser('eval', help='evaluate every stage of a run')
    p.add_argument('--run', required=True, help='run directory')
    p.add_argument('--data', required=True, help='dataset manifest')
    p.add_argument('--rois', help='ROI file for entries without their own ROIs')
    p.add_argument('--report', help='json report path')
    p.add_argument('--splits', nargs='+', default=['test'], help='splits to evaluate (default: test)')
    p.add_argument('--mask-eps', type=float, default=1e-3, help='NRMSE support threshold, pixels')
    p.add_argument('--norm', choices=['literal', 'gt_rms'], default='literal', help='NRMSE normalization')
    p.add_argument('--tau-rel', type=float, default=0.01, help='stage selection threshold')
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('infer', help='write displacement and strain of a sequence')
    p.add_argument('--run', required=True, help='run directory')
    p.add_argument('--seq', required=True, help='sequence directory')
    p.add_argument('--out', required=True, help='output directory')
    p.add_argument('--window', type=float, nargs=2, metavar=('LO', 'HI'), help='strain display window')
    p.add_argument('--stage', type=int, help='stage to report (default: last)')
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser('metrics', help='quality metrics of a strain blob')
    p.add_argument('--strain', required=True, help='strain blob (.f32)')
    p.add_argument('--rois', required=True, help='ROI file')
    p.add_argument('--shape', type=int, nargs=2, metavar=('H', 'W'), help='blob shape')
    p.add_argument('--signed', action='store_true', help='use the signed strain instead of compression')
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level.upper())
    try:
        args.func(args)
    except MusseError as e:
        log.error("%s", e, extra={"error": type(e).__name__, "exit_code": e.exit_code})
        return e.exit_code
    return 0
