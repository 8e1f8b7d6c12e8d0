"""Command line: ``searchmorph {synth,train,register,eval}``.

Exit codes: 0 ok, 1 usage or config error, 2 data error, 3 numerical failure.
"""
import argparse
import logging
import os
import sys

import numpy as np

from . import io
from .config import ConfigError, load_config, preset
from .data import load_corpus, save_pair, synth_generate
from .metrics import format_record
from .pipeline import Checkpoint, NumericalError, evaluate, register, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("searchmorph")

# fields that change the network; a --config for register/eval must agree on them
ARCH_KEYS = ("radius", "num_iters", "hidden_dim", "field_input", "query", "normalize_cost")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p, out_help):
    p.add_argument("--config", help="key = value config file (default: desk preset)")
    p.add_argument("--seed", type=int, help="random seed (overrides the config)")
    p.add_argument("--out", required=True, help=out_help)


def build_parser():
    parser = _Parser(prog="searchmorph", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic corpus of image pairs")
    _common(p, "corpus directory")
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--max-disp", type=float, default=12.0, help="largest displacement in pixels")
    p.add_argument("--smoothness", type=int, default=4, help="number of box blurs")

    p = sub.add_parser("train", help="train on a corpus directory")
    _common(p, "checkpoint path (.smck)")
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--epochs", type=int, help="override the configured epoch count")

    p = sub.add_parser("register", help="register one moving image onto a fixed image")
    _common(p, "output directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--moving", required=True, help="moving image (PGM)")
    p.add_argument("--fixed", required=True, help="fixed image (PGM)")
    p.add_argument("--moving-mask")
    p.add_argument("--fixed-mask")
    p.add_argument("--dump-field", action="store_true", help="write field.tnsr (2, H, W)")
    p.add_argument("--dump-steps", action="store_true",
                   help="write the half-resolution field after each iteration")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus directory")
    _common(p, "report path (plain text)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--dump-fields", help="directory for per-pair field TNSR files")
    return parser


def _config(args):
    cfg = load_config(args.config, preset("desk")) if args.config else preset("desk")
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _checkpoint(args):
    ckpt = Checkpoint.load(args.checkpoint)
    if args.config:
        cfg = load_config(args.config, ckpt.config)
        diff = [k for k in ARCH_KEYS if getattr(cfg, k) != getattr(ckpt.config, k)]
        if diff:
            raise io.FormatError(f"config disagrees with the checkpoint on {', '.join(diff)}")
    return ckpt


def cmd_synth(args):
    cfg = _config(args)
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    pairs = synth_generate(args.count, (cfg.image_height, cfg.image_width), args.max_disp,
                           args.smoothness, seed=cfg.seed)
    for i, pair in enumerate(pairs):
        save_pair(os.path.join(args.out, f"pair_{i:04d}"), pair)
    log.info("wrote %d pairs to %s", len(pairs), args.out)


def cmd_train(args):
    cfg = _config(args)
    if args.epochs is not None:
        cfg = cfg.replace(epochs=args.epochs)
    corpus = load_corpus(args.data)
    size = corpus[0].fixed.shape
    if size != (cfg.image_height, cfg.image_width):
        cfg = cfg.replace(image_height=size[0], image_width=size[1])
    ckpt = train(cfg, corpus, checkpoint_path=args.out)
    print(f"loss {ckpt.history[0]:.6f} -> {ckpt.history[-1]:.6f} over {cfg.epochs} epochs")


def cmd_register(args):
    if bool(args.moving_mask) != bool(args.fixed_mask):
        raise UsageError("--moving-mask and --fixed-mask go together")
    ckpt = _checkpoint(args)
    moving, pad = io.load_pgm(args.moving)
    fixed, _ = io.load_pgm(args.fixed)
    if moving.shape != fixed.shape:
        raise io.FormatError(f"moving {moving.shape} and fixed {fixed.shape} differ after padding")
    masks = (None, None)
    if args.moving_mask:
        masks = (io.load_mask(args.moving_mask)[0], io.load_mask(args.fixed_mask)[0])
    steps = [] if args.dump_steps else None
    warped, field, record = register(ckpt, moving, fixed, *masks, steps=steps)
    os.makedirs(args.out, exist_ok=True)
    io.write_pgm(os.path.join(args.out, "warped.pgm"), np.clip(io.unpad(warped[0], pad), 0, 1))
    if args.dump_field:
        io.save_tnsr(os.path.join(args.out, "field.tnsr"), io.unpad(field, pad))
    for i, step in enumerate(steps or []):
        io.save_tnsr(os.path.join(args.out, f"step_{i + 1:02d}.tnsr"), step)
    line = format_record(record)
    with open(os.path.join(args.out, "metrics.txt"), "w") as fh:
        fh.write(line + "\n")
    print(line)


def cmd_eval(args):
    ckpt = _checkpoint(args)
    corpus = load_corpus(args.data)
    report = evaluate(ckpt, corpus, dump_dir=args.dump_fields)
    report.write(args.out)
    print(report.table())


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "register": cmd_register, "eval": cmd_eval}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"searchmorph: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError) as exc:
        print(f"searchmorph: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (io.FormatError, OSError, ValueError) as exc:
        print(f"searchmorph: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
