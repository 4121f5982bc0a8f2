"""``skelbench`` command line: gen, train, infer, eval, shift-demo, thin.

Exit status is 0 on success, 1 on a runtime failure and 2 on bad flags.
Every subcommand accepts ``--config FILE.json`` whose keys (flag names,
with or without dashes) pre-populate flags; flags given on the command line
win.
"""

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import tensor_nn as nn
from .classic_skel import ThinningAlgo, Variant
from .datagen import (GT_PRUNE_LENGTH, DatasetSpec, default_workers, gen_dataset,
                      ingest_dir, stack_pairs)
from .errors import MissingPairError, SizeMismatchError, SkelbenchError
from .imgcore import load_png, save_png, shift_mask
from .metrics import MatchConfig, MetricReport, aggregate, evaluate_pair
from .pipeline import PipelineConfig, infer_batch, load_model, save_model, train_pipeline
from .unet import UNetConfig

log = logging.getLogger("skelbench")

ALGOS = [v.value for v in Variant]
LOSSES = [m.value for m in nn.LossMode]


def _weights(text):
    if isinstance(text, (list, tuple)):
        vals = [float(v) for v in text]
    else:
        try:
            vals = [float(v) for v in str(text).split(",")]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad weights {text!r}, expected e.g. 1,25")
    if len(vals) != 2 or min(vals) <= 0:
        raise argparse.ArgumentTypeError("weights must be two positive numbers, e.g. 1,25")
    return tuple(vals)


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _pos_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser():
    parser = argparse.ArgumentParser(prog="skelbench", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"skelbench {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help, description=help)
        p.add_argument("--config", help="JSON file pre-populating flags")
        p.set_defaults(func=func)
        return p

    p = add("gen", cmd_gen, "generate a synthetic shape/skeleton dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=_pos_int, default=200)
    p.add_argument("--size", type=_pos_int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gt", choices=ALGOS, default=Variant.ZHANG_SUEN.value)
    p.add_argument("--prune", type=_nonneg_int, default=GT_PRUNE_LENGTH)

    p = add("train", cmd_train, "train an n-stage U-Net pipeline")
    p.add_argument("--data", required=True, help="dataset directory with img/ and gt/")
    p.add_argument("--stages", type=int, choices=(1, 2, 3), default=2)
    p.add_argument("--epochs", type=_nonneg_int, default=20)
    p.add_argument("--batch", type=_pos_int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--beta1", type=float, default=0.9)
    p.add_argument("--beta2", type=float, default=0.999)
    p.add_argument("--loss", choices=LOSSES, default=nn.LossMode.STANDARD_WCCE.value)
    p.add_argument("--weights", type=_weights, default=(1.0, 25.0))
    p.add_argument("--depth", type=_pos_int, default=4)
    p.add_argument("--base-channels", type=_pos_int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="model.sklb")

    p = add("infer", cmd_infer, "skeletonize every PNG in a directory")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "score predictions against ground truth (F1, M-CCORR)")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--radius", type=_nonneg_int, default=None,
                   help="translation search radius (default: quarter of the image side)")
    p.add_argument("--min-overlap", type=float, default=0.25)
    p.add_argument("--report", help="write the RunReport JSON here")

    p = add("shift-demo", cmd_shift_demo, "show F1 collapsing while M-CCORR degrades gently")
    p.add_argument("--truth", required=True, help="skeleton PNG")
    p.add_argument("--dx", type=int, default=3)
    p.add_argument("--dy", type=int, default=4)
    p.add_argument("--radius", type=_nonneg_int, default=None)
    p.add_argument("--composite", help="write truth | shifted side by side to this PNG")

    p = add("thin", cmd_thin, "classical skeleton of a PNG or a directory of PNGs")
    p.add_argument("--input", required=True)
    p.add_argument("--algo", choices=ALGOS, default=Variant.ZHANG_SUEN.value)
    p.add_argument("--prune", type=_nonneg_int, default=0)
    p.add_argument("--out", required=True)
    return parser


def _subparser(parser, command):
    for action in parser._subparsers._group_actions:
        if command in action.choices:
            return action.choices[command]
    raise KeyError(command)


def _apply_config(parser, argv, args):
    """Re-parse with config-file values installed as defaults."""
    sub = _subparser(parser, args.command)
    try:
        with open(args.config) as fh:
            conf = json.load(fh)
    except (OSError, ValueError) as exc:
        sub.error(f"cannot read config {args.config}: {exc}")
    if not isinstance(conf, dict):
        sub.error("config file must hold a JSON object")
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in conf.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest not in known or dest in ("config", "help", "func"):
            sub.error(f"unknown config key {key!r}")
        action = known[dest]
        # argparse only converts string defaults
        if isinstance(value, str) and action.type is not None:
            try:
                value = action.type(value)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                sub.error(f"config {key}: {exc}")
        if action.choices is not None and value not in action.choices:
            sub.error(f"config {key}: {value!r} not in {list(action.choices)}")
        defaults[dest] = value
        action.required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


# -- commands ----------------------------------------------------------------

def cmd_gen(args):
    spec = DatasetSpec(count=args.count, size=args.size, seed=args.seed,
                       gt=ThinningAlgo(args.gt, args.prune))
    t0 = time.perf_counter()
    manifest = gen_dataset(spec, args.out, workers=default_workers())
    print(f"wrote {len(manifest['files'])} pairs ({args.size}x{args.size}, seed {args.seed}, "
          f"gt {args.gt} prune {args.prune}) to {args.out} "
          f"in {time.perf_counter() - t0:.2f}s")
    return 0


def _history_path(model_path):
    p = Path(model_path)
    return p.with_name(p.stem + ".history.json")


def cmd_train(args):
    data = Path(args.data)
    pairs = ingest_dir(data / "img", data / "gt")
    shapes, skels = stack_pairs(pairs)
    cfg = PipelineConfig(n_stages=args.stages, epochs=args.epochs, batch_size=args.batch,
                         lr=args.lr, beta1=args.beta1, beta2=args.beta2,
                         loss=nn.LossConfig(args.weights, args.loss), seed=args.seed)
    if shapes.shape[1] != shapes.shape[2]:
        raise SizeMismatchError(f"training images must be square, got {shapes.shape[1:]}")
    unet = UNetConfig(depth=args.depth, base_channels=args.base_channels,
                      input_size=shapes.shape[1])
    log.info("optimizer adam lr %g beta1 %g beta2 %g eps %g, batch %d, epochs %d",
             cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.batch_size, cfg.epochs)
    log.info("loss %s weights %s, stages %d, depth %d, base channels %d, seed %d",
             cfg.loss.mode.value, list(cfg.loss.class_weights), cfg.n_stages,
             unet.depth, unet.base_channels, cfg.seed)
    t0 = time.perf_counter()
    bundle = train_pipeline(shapes, skels, cfg, unet)
    elapsed = time.perf_counter() - t0
    save_model(bundle, args.out)
    hist = {"pipeline": cfg.to_dict(), "unet": unet.to_dict(), "samples": len(pairs),
            "train_seconds": elapsed,
            "stages": [{"stage": k + 1, "epoch_loss": h} for k, h in enumerate(bundle.history)]}
    with open(_history_path(args.out), "w") as fh:
        json.dump(hist, fh, indent=2)
        fh.write("\n")
    last = [h[-1] if h else float("nan") for h in bundle.history]
    print(f"trained {cfg.n_stages}-stage pipeline on {len(pairs)} pairs in {elapsed:.1f}s; "
          f"final loss per stage {', '.join(f'{v:.4f}' for v in last)}; wrote {args.out}")
    return 0


def cmd_infer(args):
    bundle = load_model(args.model)
    pairs = ingest_dir(args.input)
    s = bundle.unet.input_size
    ok = [p for p in pairs if p.shape.shape == (s, s)]
    failed = 0
    for p in pairs:
        if p.shape.shape != (s, s):
            failed += 1
            print(f"error: {p.stem}: image is {p.shape.shape[0]}x{p.shape.shape[1]}, "
                  f"model expects {s}x{s}", file=sys.stderr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if ok:
        preds = infer_batch(bundle, np.stack([p.shape for p in ok]))
        for p, m in zip(ok, preds):
            save_png(m, out / f"{p.stem}.png")
    print(f"wrote {len(ok)} skeletons to {args.out}"
          + (f" ({failed} skipped)" if failed else ""))
    return 1 if failed else 0


def _pair_stems(pred_dir, truth_dir):
    preds = ingest_dir(pred_dir)
    truths = ingest_dir(truth_dir)
    p_stems = {p.stem for p in preds}
    t_stems = {t.stem for t in truths}
    for stem in sorted(p_stems ^ t_stems):
        raise MissingPairError(stem, truth_dir if stem in p_stems else pred_dir)
    return truths, preds


def cmd_eval(args):
    t0 = time.perf_counter()
    truths, preds = _pair_stems(args.pred, args.truth)
    loaded = time.perf_counter()
    cfg = MatchConfig(search_radius=args.radius, min_overlap_fraction=args.min_overlap)
    with ThreadPoolExecutor(default_workers()) as pool:
        reports = list(pool.map(lambda tp: evaluate_pair(tp[0].shape, tp[1].shape, cfg),
                                zip(truths, preds)))
    done = time.perf_counter()
    agg = aggregate(reports)
    report = {
        "tool_version": __version__,
        "config": {"pred": str(args.pred), "truth": str(args.truth),
                   "search_radius": args.radius, "min_overlap_fraction": args.min_overlap,
                   "workers": default_workers()},
        "timings": {"load_seconds": loaded - t0, "evaluate_seconds": done - loaded},
        "fields": MetricReport.field_names(),
        "images": [{"stem": t.stem, **r.to_dict()} for t, r in zip(truths, reports)],
        "aggregate": agg,
    }
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
    print(f"images {len(reports)}  F1 {agg['f1']:.4f}  M-CCORR {agg['m_ccorr']:.4f}")
    return 0


def cmd_shift_demo(args):
    truth = load_png(args.truth)
    shifted = shift_mask(truth, args.dx, args.dy)
    lost = int(truth.sum() - shifted.sum())
    if lost:
        print(f"warning: shift ({args.dx},{args.dy}) clipped {lost} pixels at the frame",
              file=sys.stderr)
    r = evaluate_pair(truth, shifted, MatchConfig(search_radius=args.radius))
    print(f"shift dx={args.dx} dy={args.dy}  F1 {r.f1:.4f}  M-CCORR {r.m_ccorr:.4f}  "
          f"(max ZNCC {r.max_zncc:.4f}, center distance {r.center_distance:.4f})")
    if args.composite:
        gap = np.zeros((truth.shape[0], 2), dtype=bool)
        save_png(np.hstack([truth, gap, shifted]), args.composite)
    return 0


def cmd_thin(args):
    algo = ThinningAlgo(args.algo, args.prune)
    src = Path(args.input)
    if src.is_dir():
        pairs = ingest_dir(src)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with ThreadPoolExecutor(default_workers()) as pool:
            skels = list(pool.map(lambda p: algo.apply(p.shape), pairs))
        for p, s in zip(pairs, skels):
            save_png(s, out / f"{p.stem}.png")
        print(f"thinned {len(pairs)} images with {args.algo} (prune {args.prune}) into {out}")
    else:
        save_png(algo.apply(load_png(src)), args.out)
        print(f"thinned {src} with {args.algo} (prune {args.prune}) into {args.out}")
    return 0


def _config_probe(parser, argv):
    """``(command, config path)`` when --config is given, else None.

    Required flags may come from the config file, so this looks only at the
    subcommand name and --config without enforcing anything else.
    """
    commands = parser._subparsers._group_actions[0].choices
    i = next((k for k, a in enumerate(argv) if a in commands), None)
    if i is None:
        return None
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv[i + 1:])
    if known.config is None:
        return None
    return argparse.Namespace(command=argv[i], config=known.config)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    probe = _config_probe(parser, argv)
    args = parser.parse_args(argv) if probe is None else _apply_config(parser, argv, probe)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (SkelbenchError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def run():
    sys.exit(main())
