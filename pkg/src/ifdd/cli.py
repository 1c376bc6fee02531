"""Command-line interface.

Subcommands: gen-data, train, eval, ablate, grad-check, inspect-splits.
Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

import argparse
import os
import sys

# single-threaded BLAS before numpy loads: reproducibility contract
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np  # noqa: E402


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def build_parser():
    parser = _Parser(prog="ifdd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--preset", choices=["easy", "hard"], default="easy")
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--clips", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--out", required=True)

    for name in ("train", "ablate", "grad-check"):
        p = sub.add_parser(name)
        p.add_argument("--data", required=True, help="dataset directory")
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--preset", default=None, help="training preset (toy|paper)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
        if name == "train":
            p.add_argument("--out", required=True)
            p.add_argument("--fold", default=None)
            p.add_argument("--quiet", action="store_true")
        elif name == "ablate":
            p.add_argument("--out", required=True)
            p.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")
            p.add_argument("--variants", default=None,
                           help="comma-separated subset of the variant grid")
            p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "val", "test", "all"], default="test")
    p.add_argument("--fold", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("inspect-splits", help="dump learned splitting indices")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--limit", type=int, default=None)

    return parser


def _load_cfg(args):
    from .config import load_config

    return load_config(path=args.config, sets=args.set, preset=args.preset)


def cmd_gen_data(args):
    from . import data as D

    overrides = {}
    for key in ("classes", "clips", "folds"):
        val = getattr(args, key)
        if val is not None:
            overrides[key] = val
    cfg = D.gen_config(args.preset, **overrides)
    manifest = D.generate_dataset(cfg, args.seed, args.out)
    print(f"wrote {manifest['clips']} clips ({manifest['classes']} classes) to {args.out}")
    print(f"motif-oracle accuracy: {manifest['oracle']['accuracy']:.4f}")
    print(f"class-stats min pairwise p: {manifest['stats_check']['min_pairwise_p']:.4g}")
    return 0


def cmd_train(args):
    from .train import train_run

    cfg = _load_cfg(args)
    fold_arg = args.fold
    if fold_arg is not None and fold_arg != "all":
        fold_arg = int(fold_arg)
    if fold_arg == "all":
        records = []
        for fold in range(int(cfg["train"]["folds"])):
            records.append(train_run(cfg, args.data, f"{args.out}/fold{fold}",
                                     fold=fold, quiet=args.quiet))
        wars = [r["test"]["war"] for r in records]
        uars = [r["test"]["uar"] for r in records]
        print(f"{len(records)}-fold mean test WAR {np.mean(wars):.4f}  UAR {np.mean(uars):.4f}")
    else:
        record = train_run(cfg, args.data, args.out, fold=fold_arg, quiet=args.quiet)
        print(f"test WAR {record['test']['war']:.4f}  UAR {record['test']['uar']:.4f}")
    return 0


def cmd_eval(args):
    from .train import evaluate_checkpoint

    report = evaluate_checkpoint(args.checkpoint, args.data, args.split, args.out, fold=args.fold)
    print(f"{args.split} WAR {report.war:.4f}  UAR {report.uar:.4f}")
    return 0


def cmd_ablate(args):
    from .train import run_ablation_suite

    cfg = _load_cfg(args)
    seeds = [int(s) for s in args.seeds.split(",") if s != ""]
    variants = args.variants.split(",") if args.variants else None
    results = run_ablation_suite(cfg, args.data, args.out, seeds, variants=variants,
                                 quiet=args.quiet)
    for name, agg in results.items():
        print(f"{name:16s} WAR {agg['war_mean']:.4f} +- {agg['war_std']:.4f}  "
              f"UAR {agg['uar_mean']:.4f} +- {agg['uar_std']:.4f}")
    return 0


def cmd_grad_check(args):
    from . import data as D
    from .train import gradient_gate

    cfg = _load_cfg(args)
    _, clips, labels = D.load_dataset(args.data)
    idx = np.random.default_rng(cfg["train"]["seed"]).choice(len(clips), size=2, replace=False)
    err = gradient_gate(cfg, clips, labels, idx)
    print(f"gradient check passed: max relative error {err:.3e}")
    return 0


def cmd_inspect_splits(args):
    from .train import inspect_splits

    inspect_splits(args.checkpoint, args.data, args.out, limit=args.limit)
    print(f"wrote splitting indices to {args.out}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "grad-check": cmd_grad_check,
    "inspect-splits": cmd_inspect_splits,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    from .config import ConfigError

    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"ifdd: config error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"ifdd: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
