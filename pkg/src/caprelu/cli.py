"""
Command-line entry point.

    caprelu train --arch 784,392,196,10 --cap-layers HL2 --beta 0.1 --out net.crlu
    caprelu attack --checkpoint net.crlu --attack pgd --subset 1000
    caprelu probe --checkpoint net.crlu --subset 500
    caprelu smap --checkpoint net.crlu --image-id 0 --output maps/
    caprelu experiment adv-train-table --config t1.toml --subset 2000
    caprelu plotdata results/ --activations
"""

import argparse
import logging
import math
import sys
from pathlib import Path

from . import __version__, analysis
from .attacks import AttackSpec, CwConfig, LinfAttackConfig, probe_many
from .config import (EXPERIMENT_KINDS, GENERAL_DIMS, cap_layers_label, format_beta, load_config,
                     parse_cap_layers, parse_train_beta)
from .data_io import load_mnist
from .errors import CapReluError, CheckpointError, ConfigError, DatasetError
from .experiments import run_experiment
from .fileio import atomic_write_text
from .nn_core import (build_network, checkpoint_provenance, load_checkpoint, save_checkpoint,
                      set_cap, train)
from .plot_data import write_plot_data

logger = logging.getLogger(__name__)

USAGE_ERRORS = (ConfigError, DatasetError, CheckpointError)


def _dims(text):
    try:
        dims = [int(d) for d in str(text).split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated layer sizes, got '{text}'")
    if len(dims) < 3:
        raise argparse.ArgumentTypeError("need input, at least one hidden and output size")
    return dims


def build_parser():
    ap = argparse.ArgumentParser(prog="caprelu",
                                 description="Capped-ReLU robustness experiments on MNIST")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--log-level", default="INFO",
                    choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="logging level")
    ap.add_argument("-v", "--verbose", action="store_true", help="shortcut for --log-level DEBUG")
    ap.add_argument("--data-dir", help="directory with the MNIST IDX files (else $CAPRELU_DATA_DIR)")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("train", help="train one network and write a checkpoint")
    p.add_argument("--arch", type=_dims, default=GENERAL_DIMS, help="layer sizes, e.g. 784,392,196,10")
    p.add_argument("--cap-layers", default="none", help="HL1, HL2, HL12, ... or none")
    p.add_argument("--beta", default="uncapped", help="cap value used during training")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-subset", type=int, default=0, help="train on N samples (0 = all)")
    p.add_argument("--adv-training", choices=["none", "fgsm", "pgd"], default="none",
                   help="replace batches with adversarial examples (eps 0.1)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--progress", action="store_true", help="show a progress bar")

    p = sub.add_parser("attack", help="evaluate a checkpoint under an attack")
    _add_checkpoint_args(p)
    p.add_argument("--attack", choices=["fgsm", "pgd", "cw"], default="pgd")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--step-size", type=float, default=0.01)
    p.add_argument("--iters", type=int, default=10, help="PGD iterations")
    p.add_argument("--cw-iters", type=int, default=1000)
    p.add_argument("--cw-searches", type=int, default=5)

    p = sub.add_parser("probe", help="mean distance to vanishing input gradients")
    _add_checkpoint_args(p)
    p.add_argument("--epsilon", type=float, default=math.inf, help="L-inf bound (default: none)")
    p.add_argument("--step-size", type=float, default=2 / 256)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--grad-tolerance", type=float, default=1e-12)

    p = sub.add_parser("smap", help="sensitivity maps of test images")
    _add_checkpoint_args(p)
    p.add_argument("--image-id", type=int, action="append", required=True,
                   help="test-set index (repeatable)")
    p.add_argument("--output", default=".", help="directory for smap_<id>.csv")

    p = sub.add_parser("experiment", help="run a whole experiment family")
    p.add_argument("kind", choices=EXPERIMENT_KINDS)
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--subset", type=int, help="evaluate on N test samples")
    p.add_argument("--train-subset", type=int, help="train on N samples")
    p.add_argument("--cw-iters", type=int)
    p.add_argument("--cw-searches", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--output", help="report directory")
    p.add_argument("--excel", help="also export the report tables to this .xlsx file")

    p = sub.add_parser("plotdata", help="long-format plot CSVs from a report directory")
    p.add_argument("report_dir", nargs="?", help="directory holding report CSVs")
    p.add_argument("--output", help="destination directory (default: report_dir)")
    p.add_argument("--activations", action="store_true",
                   help="also write activation-shape data for Sigmoid/Tanh/capped ReLU")
    return ap


def _add_checkpoint_args(p):
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--subset", type=int, default=0, help="use N test samples (0 = all)")
    p.add_argument("--seed", type=int, default=0, help="subset shuffle seed")
    p.add_argument("--set-cap", help="re-cap these layers (HL1, HL2, ...) before evaluating")
    p.add_argument("--eval-beta", type=float, help="cap value for --set-cap")


def _load_net(args):
    net = load_checkpoint(args.checkpoint)
    logger.debug("checkpoint provenance: %s", checkpoint_provenance(args.checkpoint))
    if args.set_cap:
        if args.eval_beta is None:
            raise ConfigError("--set-cap needs --eval-beta")
        net = set_cap(net, parse_cap_layers(args.set_cap), args.eval_beta)
    return net


def _test_set(args):
    return load_mnist(args.data_dir, "test").subset(args.subset, args.seed)


def cmd_train(args):
    indices = parse_cap_layers(args.cap_layers)
    beta = parse_train_beta(args.beta)
    train_set = load_mnist(args.data_dir, "train").subset(args.train_subset, args.seed)
    test_set = load_mnist(args.data_dir, "test")

    net = build_network(args.arch, ["relu"] * (len(args.arch) - 2) + ["identity"], seed=args.seed)
    if beta is not None and indices:
        net = set_cap(net, indices, beta)
    history = train(net, train_set, args.epochs, batch_size=args.batch_size, lr=args.lr,
                    seed=args.seed, progress=args.progress or None)
    if args.adv_training != "none":
        adversary = (AttackSpec.fgsm(0.1) if args.adv_training == "fgsm"
                     else AttackSpec.pgd(LinfAttackConfig.table_defaults()))
        train(net, train_set, 10, batch_size=args.batch_size, lr=args.lr, seed=args.seed,
              adversary=adversary, progress=args.progress or None)

    acc = analysis.evaluate(net, test_set)
    save_checkpoint(net, args.out, provenance={
        "cap_layers": cap_layers_label(indices),
        "train_beta": format_beta(beta),
        "regime": args.adv_training,
        "epochs": args.epochs,
        "lr": args.lr,
        "batch_size": args.batch_size,
        "seed": args.seed,
        "train_loss": history.losses[-1] if history.records else None,
        "test_accuracy": acc,
    })
    print(f"test accuracy: {acc:.4f}")
    print(f"checkpoint: {args.out}")
    return 0


def cmd_attack(args):
    net = _load_net(args)
    if args.attack == "fgsm":
        spec = AttackSpec.fgsm(args.epsilon)
    elif args.attack == "pgd":
        spec = AttackSpec.pgd(LinfAttackConfig(args.epsilon, args.step_size, args.iters))
    else:
        spec = AttackSpec.carlini_wagner(CwConfig(max_iter=args.cw_iters,
                                                  binary_search_steps=args.cw_searches))
    metrics = analysis.evaluate_under_attack(net, _test_set(args), spec)
    print(f"attack: {spec.label}")
    print(f"standard accuracy: {metrics.standard_accuracy:.4f}")
    print(f"robust accuracy:   {metrics.robust_accuracy:.4f}")
    print(f"success rate:      {metrics.success_rate:.4f}")
    print(f"samples:           {metrics.n_evaluated}")
    return 0


def cmd_probe(args):
    net = _load_net(args)
    test_set = _test_set(args)
    cfg = LinfAttackConfig(args.epsilon, args.step_size, args.iters)
    summary = analysis.aggregate_zero_grad(
        probe_many(net, test_set.images, test_set.labels, cfg, args.grad_tolerance)
    )
    mean = "n/a" if summary.mean_distance is None else f"{summary.mean_distance:.4f}"
    print(f"mean distance to zero gradients: {mean}")
    print(f"found fraction: {summary.found_fraction:.4f}")
    return 0


def cmd_smap(args):
    net = _load_net(args)
    test_set = load_mnist(args.data_dir, "test")
    out = Path(args.output)
    for image_id in args.image_id:
        if not 0 <= image_id < len(test_set):
            raise ConfigError(f"image id {image_id} outside the test set (size {len(test_set)})")
        smap = analysis.sensitivity_map(net, test_set.images[image_id], test_set.labels[image_id])
        rows = "\n".join(",".join(f"{v:.10g}" for v in row) for row in smap.map)
        path = atomic_write_text(out / f"smap_{image_id}.csv", rows + "\n")
        print(f"image {image_id} (label {test_set.labels[image_id]}): total {smap.total:.6g} -> {path}")
    return 0


def cmd_experiment(args):
    overrides = {
        "subset": args.subset,
        "train_subset": args.train_subset,
        "cw_iters": args.cw_iters,
        "cw_searches": args.cw_searches,
        "epochs": args.epochs,
        "workers": args.workers,
        "seed": args.seed,
        "output": args.output,
        "data_dir": args.data_dir,
    }
    cfg = load_config(args.config, kind=args.kind, overrides=overrides)
    report = run_experiment(cfg)
    written = report.save(cfg.output_dir)
    for path in written:
        print(f"wrote {path}")
    if args.excel:
        ok, error = report.export_to_excel(args.excel)
        if not ok:
            print(error, file=sys.stderr)
            return 1
        print(f"wrote {args.excel}")
    return 0


def cmd_plotdata(args):
    for path in write_plot_data(args.report_dir, args.output, activations=args.activations):
        print(f"wrote {path}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "attack": cmd_attack,
    "probe": cmd_probe,
    "smap": cmd_smap,
    "experiment": cmd_experiment,
    "plotdata": cmd_plotdata,
}


def cli_main(argv=None):
    """
    Parse argv, run the subcommand and return the process exit code.

    0 on success, 2 on usage/config/data/checkpoint errors, 1 on other failures.
    """
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2

    level = logging.DEBUG if args.verbose else getattr(logging, args.log_level)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        return COMMANDS[args.command](args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CapReluError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
