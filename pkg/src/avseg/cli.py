"""Command-line interface: gen / train / eval / maskige / gradcheck."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def _cmd_gen(args) -> int:
    from .config import RunConfig
    from .data import generate_dataset
    cfg = RunConfig(seed=args.seed, audio_noise=args.noise,
                    proposal_perturb=args.perturb)
    generate_dataset(Path(args.out), cfg, args.clips, args.seed)
    print(f"gen: wrote {args.clips} clips to {args.out}")
    return 0


def _cmd_train(args) -> int:
    from .config import RunConfig
    from .data import load_dataset
    from .train import TrainingDiverged, train
    cfg = RunConfig.from_file(args.config)
    dataset = load_dataset(Path(args.data))
    try:
        train(cfg, dataset, Path(args.out))
    except TrainingDiverged as exc:
        print(f"error: training diverged at iteration {exc.iteration}",
              file=sys.stderr)
        return 1
    print(f"train: checkpoint written to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    from .data import load_dataset
    from .model import Model
    from .train import evaluate
    model = Model.load_checkpoint(Path(args.checkpoint))
    dataset = load_dataset(Path(args.data))
    report = evaluate(model, dataset, Path(args.out))
    print(f"eval: miou={report['miou']:.6f} fscore={report['fscore']:.6f}")
    return 0


def _cmd_maskige(args) -> int:
    from .maskige import (Palette, default_palette, encode, export_maskige,
                          import_mask_dir, pad_masks)
    masks = import_mask_dir(Path(args.masks))
    palette = (Palette.from_file(Path(args.palette)) if args.palette
               else default_palette())
    image = np.clip(encode(pad_masks(masks, palette.n), palette), 0.0, 1.0)
    export_maskige(Path(args.out), image)
    print(f"maskige: encoded {masks.k} masks to {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    from .checks import run_gradcheck
    failed = False
    for name, err, thresh in run_gradcheck(args.module, args.seed):
        status = "ok" if err < thresh else "FAIL"
        print(f"gradcheck {name}: max_rel_err={err:.3e} "
              f"threshold={thresh:.0e} {status}")
        failed |= err >= thresh
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avseg",
        description="Audio-visual segmentation: synthetic data, training, "
                    "evaluation, maskige encoding and gradient checks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--clips", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.3,
                   help="audio noise sigma")
    p.add_argument("--perturb", type=int, default=2,
                   help="max proposal-mask perturbation in pixels")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("maskige", help="encode a mask directory to one image")
    p.add_argument("--masks", required=True)
    p.add_argument("--palette", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_maskige)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--module", required=True,
                   choices=("tensor", "bfm", "decoder", "loss", "all"))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
