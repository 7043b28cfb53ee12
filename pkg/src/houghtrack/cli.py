"""Command-line entry point.

Exit codes: 0 ok, 1 internal error, 2 usage, 3 bad config, 4 missing or
malformed input, 5 shape mismatch, 6 numerical failure (non-finite values,
failed gradient check, tracking failure).  Failures print a single line
``error: <kind>: <message>`` to stderr.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
import time

import numpy as np

from .config import Config, config_help, parse_config, toy_config
from .errors import DataError, HoughTrackError, NumericalError, ShapeError

log = logging.getLogger("houghtrack")


def _config(args):
    cfg = toy_config() if args.preset == "toy" else Config()
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = parse_config(fh.read(), base=cfg)
        except OSError as exc:
            raise DataError(str(exc)) from None
    if args.set:
        cfg = parse_config("\n".join(args.set), base=cfg)
    return cfg.validate()


def _load_params(path, net):
    from .tensor import load_params
    params = load_params(path)
    want = net.param_shapes()
    if set(params.names()) != set(want):
        missing = sorted(set(want) - set(params.names()))
        extra = sorted(set(params.names()) - set(want))
        raise ShapeError(f"{path}: parameter names differ (missing {missing[:3]}, unexpected {extra[:3]})")
    for name, shape in want.items():
        if tuple(params[name].shape) != tuple(shape):
            raise ShapeError(f"{path}: {name} has shape {params[name].shape}, expected {tuple(shape)}")
    return params.astype(net.cfg.dtype)


# -- commands ----------------------------------------------------------------

def cmd_gen_data(args, cfg):
    from .synthetic import generate_set, save_sequence
    seqs = generate_set(args.seed if args.seed is not None else cfg.seed, args.count,
                        cfg.n_frames, cfg.frame_size, cfg.difficulty)
    for k, seq in enumerate(seqs):
        save_sequence(seq, os.path.join(args.out, f"seq{k:04d}"))
    print(f"wrote {len(seqs)} sequences to {args.out}")


def cmd_train(args, cfg):
    from .network import Network
    from .synthetic import load_dataset
    from .tensor import save_params
    from .training import FixedPairSampler, SequenceSampler, sample_pairs, train

    if args.steps is not None:
        cfg = cfg.replace(steps=args.steps)
    net = Network(cfg)
    seqs = load_dataset(args.data)
    if args.pairs:
        pairs = sample_pairs(seqs, args.pairs, cfg, net, cfg.seed)
        sampler = FixedPairSampler(pairs, cfg.batch, cfg.seed)
    else:
        sampler = SequenceSampler(seqs, cfg, net, cfg.seed)
    params, losses = train(net, sampler)
    save_params(params, args.out)
    if args.losses:
        with open(args.losses, "w") as fh:
            fh.writelines(f"{i} {v!r}\n" for i, v in enumerate(losses))
    print(f"steps {len(losses)} initial_loss {losses[0]:.6f} final_loss {losses[-1]:.6f}")


def cmd_eval(args, cfg):
    from .network import Network
    from .synthetic import load_dataset
    from .training import evaluate

    net = Network(cfg)
    params = _load_params(args.params, net)
    report, _, _ = evaluate(net, params, load_dataset(args.data), workers=args.workers)
    text = report.to_text()
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)


def cmd_track(args, cfg):
    from .imageio import format_box, list_frames, read_boxes, read_image, write_pgm
    from .network import Network
    from .tracker import Tracker

    net = Network(cfg)
    if args.params:
        params = _load_params(args.params, net)
    else:
        log.warning("no --params given; tracking with freshly initialised weights")
        params = net.init_params(cfg.seed)
    boxes = read_boxes(args.init)
    if not boxes:
        raise DataError(f"{args.init}: no box")
    paths = list_frames(args.frames)
    read = lambda p: read_image(p, args.width, args.height)
    tracker = Tracker(net, params)
    state = tracker.init(read(paths[0]), boxes[0])
    print(format_box(state.box()))
    if args.dump_maps:
        os.makedirs(args.dump_maps, exist_ok=True)
    for k, path in enumerate(paths[1:], 1):
        box, state, logits = tracker.track_step(state, read(path))
        print(format_box(box))
        if args.dump_maps:
            for c, tag in enumerate(("tl", "br")):
                write_pgm(os.path.join(args.dump_maps, f"{k:06d}_{tag}.pgm"), logits[..., c])


def cmd_gradcheck(args, cfg):
    from .gradcheck import head_gradient_check, network_gradient_check

    t0 = time.perf_counter()
    if args.full:
        report = network_gradient_check(cfg, args.coords, args.eps, cfg.seed)
    else:
        report = head_gradient_check(cfg, args.fs_size, args.coords, args.eps, cfg.seed)
    print(f"max_rel_error {report.max_rel_error:.3e} checked {report.checked} "
          f"skipped {report.skipped} seconds {time.perf_counter() - t0:.1f}")
    if not report.ok(args.tol):
        raise NumericalError(f"max relative error {report.max_rel_error:.3e} exceeds {args.tol:g}")


def _parse_size(text):
    try:
        dims = tuple(int(v) for v in text.lower().split("x"))
    except ValueError:
        dims = ()
    if len(dims) != 3 or min(dims) < 1:
        raise ShapeError(f"--size expects HxWxC, got {text!r}")
    return dims


def cmd_bench(args, cfg):
    from . import ops
    from .correlation import group_pixel_correlation
    from .tensor import Tensor

    h, w, c = _parse_size(args.size)
    rng = np.random.default_rng(cfg.seed)
    dtype = np.dtype(cfg.dtype)
    if args.op == "group-correlation":
        # output channels c = bank size M times groups N
        if c % cfg.groups:
            raise ShapeError(f"{c} channels not divisible into {cfg.groups} groups")
        m = c // cfg.groups
        bank = Tensor(rng.standard_normal((m, cfg.channels)).astype(dtype))
        fs = Tensor(rng.standard_normal((h, w, cfg.channels)).astype(dtype))
        run = lambda: group_pixel_correlation(bank, fs, cfg.groups)
    else:
        x = Tensor(rng.standard_normal((h, w, c)).astype(dtype))
        k = rng.standard_normal((3, 3, c, c)).astype(dtype)
        run = lambda: ops.conv2d(x, Tensor(k), padding=1)
    out = run().data
    t0 = time.perf_counter()
    for _ in range(args.repeat):
        out = run().data
    dt = (time.perf_counter() - t0) / args.repeat
    digest = hashlib.sha256(np.ascontiguousarray(out).tobytes()).hexdigest()[:16]
    print(f"op {args.op} size {h}x{w}x{c} output {'x'.join(map(str, out.shape))} "
          f"cells_per_sec {out.size / dt:.4g} checksum {digest}")


def cmd_dump_votefield(args, cfg):
    from .imageio import write_pgm
    from .voting import build_vote_field

    field = build_vote_field(cfg.regions, cfg.vote_extent, cfg.ring_radii, cfg.angle_bins)
    os.makedirs(args.out, exist_ok=True)
    for r in range(field.regions):
        write_pgm(os.path.join(args.out, f"region_{r:02d}.pgm"), field.kernel[..., r])
    with open(os.path.join(args.out, "manifest.txt"), "w") as fh:
        fh.write("# dx dy region weight\n")
        for dx, dy, r, wgt in field.memberships():
            fh.write(f"{dx} {dy} {r} {wgt!r}\n")
    print(f"wrote {field.regions} slices of {field.extent}x{field.extent} to {args.out}")


# -- parser ------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--preset", choices=("full", "toy"), default="full",
                        help="base configuration before --config and --set (default full)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--workers", type=int, default=1, help="parallel sequences for eval (1 = reproducible)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="houghtrack",
        description="Corner-voting Siamese tracker on a from-scratch autodiff engine.",
        epilog="config keys:\n" + config_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write synthetic sequences")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train on a sequence directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="parameter container to write")
    p.add_argument("--steps", type=int)
    p.add_argument("--pairs", type=int, default=0, help="fixed pair set of this size (0 = fresh pairs each step)")
    p.add_argument("--losses", help="write the per-step loss curve here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="track held-out sequences and report AO/SR")
    p.add_argument("--data", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("track", parents=[common], help="track one frame directory")
    p.add_argument("--frames", required=True)
    p.add_argument("--init", required=True, help="file holding 'x_tl y_tl x_br y_br'")
    p.add_argument("--params")
    p.add_argument("--dump-maps", help="directory for per-frame presence map PGMs")
    p.add_argument("--width", type=int, help="frame width for .raw inputs")
    p.add_argument("--height", type=int)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the focal loss")
    p.add_argument("--coords", type=int, default=200)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--fs-size", type=int, default=31, help="search feature extent for the head check")
    p.add_argument("--full", action="store_true", help="check from raw images through the backbone")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", parents=[common], help="time one kernel")
    p.add_argument("--op", choices=("group-correlation", "conv2d"), default="group-correlation")
    p.add_argument("--size", default="31x31x456", help="HxWxC (output channels for group-correlation)")
    p.add_argument("--repeat", type=int, default=5)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("dump-votefield", parents=[common], help="write vote field slices and manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_votefield)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.workers < 1:
            raise HoughTrackError("--workers must be >= 1")
        args.func(args, _config(args))
    except HoughTrackError as exc:
        print(f"error: {exc.kind}: {' '.join(str(exc).split())}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # anything unexpected is an internal error
        print(f"error: internal: {type(exc).__name__}: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
