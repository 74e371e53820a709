"""Command-line interface.

Exit codes: 0 success (or Learnable), 2 Insufficient verdict / bound
violations, 1 error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .datagen import DataError, FeatureModel, make_dataset, make_test_instances, read_dataset, write_dataset, dataset_lines
from .diagnostics import hed_base_sweep, random_kb_sweep, recovery_experiment, verify_bound
from .kb import KBError, builtin_kb, ground, kb_to_json, parse_kb, random_kb, render_kb
from .learner import METHODS, TrainConfig, TrainingError, timed_train
from .probmatrix import LEARNABLE, ClassPrior, ProbMatrixError, diagnose, joint_matrix

EXIT_OK, EXIT_ERROR, EXIT_INSUFFICIENT = 0, 1, 2


class CliError(Exception):
    pass


def _emit(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _load_kb(args):
    if getattr(args, "kb", None):
        path = Path(args.kb)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise CliError(f"cannot read {path}: {e}") from None
        kb = ground(parse_kb(text, name=path.stem))
    elif getattr(args, "builtin", None):
        kb = builtin_kb(args.builtin, args.base)
    else:
        raise CliError("give --kb PATH or --builtin NAME")
    if getattr(args, "concepts", None):
        kb = kb.select(args.concepts.split(","))
    return kb


def _load_prior(args, kb) -> ClassPrior:
    source = getattr(args, "prior", "uniform")
    if source in (None, "uniform"):
        return ClassPrior.uniform(kb.num_classes)
    try:
        text = Path(source).read_text(encoding="utf-8")
    except OSError as e:
        raise CliError(f"cannot read prior {spec}: {e}") from None
    values = [v.strip() for v in text.replace("\n", ",").split(",") if v.strip()]
    prior = ClassPrior.from_values(values)
    if len(prior) != kb.num_classes:
        raise CliError(f"prior has {len(prior)} entries, KB has {kb.num_classes} classes")
    return prior


def _kb_flags(p, required=True):
    g = p.add_argument_group("knowledge base")
    g.add_argument("--kb", help="KB DSL file")
    g.add_argument("--builtin", help="conj_eq | conjunction | addition | hed")
    g.add_argument("--base", type=int, default=10, help="number base for addition/hed (default 10)")
    g.add_argument("--concepts", help="comma-separated subset of concepts to keep")
    g.add_argument("--prior", default="uniform", help="'uniform' or a file of c comma/newline separated values")


def _train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--method", default="tl", choices=METHODS)
    g.add_argument("--epochs", type=int, default=100)
    g.add_argument("--batch", type=int, default=256)
    g.add_argument("--lr", type=float, default=0.001)
    g.add_argument("--arch", default="linear", choices=("linear", "mlp"))
    g.add_argument("--hidden", type=int, default=64)
    g.add_argument("--n-train", type=int, default=10000)
    g.add_argument("--n-test", type=int, default=10000)


def _train_cfg(args) -> TrainConfig:
    return TrainConfig(
        method=args.method,
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        seed=args.seed,
        arch=args.arch,
        hidden=args.hidden,
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_diagnose(args) -> int:
    kb = _load_kb(args)
    report = diagnose(kb, _load_prior(args, kb))
    if args.format == "text":
        _emit(args, report.to_text())
    else:
        _emit(args, _dump(report.to_json()))
    return EXIT_OK if report.verdict == LEARNABLE else EXIT_INSUFFICIENT


def cmd_gen_kb(args) -> int:
    kb = random_kb(args.form, args.arity, args.seed)
    _emit(args, _dump(kb_to_json(kb)) if args.format == "json" else render_kb(kb))
    return EXIT_OK


def cmd_gen_data(args) -> int:
    kb = _load_kb(args)
    model = FeatureModel(kb.num_classes, args.dim, args.sep, args.sigma)
    ds = make_dataset(kb, args.mode, _load_prior(args, kb), model, args.n, args.seed)
    if args.out:
        write_dataset(ds, args.out)
    else:
        for line in dataset_lines(ds):
            sys.stdout.write(line + "\n")
    return EXIT_OK


def cmd_train(args) -> int:
    kb = _load_kb(args)
    prior = _load_prior(args, kb)
    cfg = _train_cfg(args)
    timing = not args.no_timing
    if args.data:
        ds = read_dataset(args.data, kb)
        model = FeatureModel(kb.num_classes, ds.dim)
        Q = joint_matrix(kb, ds.prior, ds.mode) if cfg.method == "tl" else None
        x_test, y_test = make_test_instances(model, ds.prior, args.n_test, args.seed)
        _, rep = timed_train(ds.training_view(), cfg, Q, x_test, y_test)
        out = {"kb_id": kb.name, "data": str(args.data), "train": rep.to_json(timing)}
    else:
        res = recovery_experiment(kb, prior, cfg, args.n_train, args.n_test, args.seed, args.mode)
        out = {"kb_id": kb.name, "n_train": args.n_train, "n_test": args.n_test, "mode": args.mode}
        out.update(res.to_json(timing))
    _emit(args, _dump(out))
    return EXIT_OK


def cmd_verify_bound(args) -> int:
    kb = _load_kb(args)
    res = verify_bound(kb, _load_prior(args, kb), args.n, args.trials, args.seed)
    out = res.to_json()
    if args.summary:
        out.pop("records")
    _emit(args, _dump(out))
    return EXIT_OK if res.violations == 0 else EXIT_INSUFFICIENT


def _sweep_out(args, res) -> None:
    timing = not args.no_timing
    if args.format == "json":
        rows = [dict(r, wall_ms=r["wall_ms"] if timing else 0) for r in res.rows]
        _emit(args, _dump({"rows": rows, "group_means": {str(k): v for k, v in res.group_means().items()}}))
    else:
        _emit(args, res.to_csv(timing))


def cmd_sweep_random(args) -> int:
    cfg = _train_cfg(args)
    methods = args.methods.split(",") if args.methods else [cfg.method]
    res = random_kb_sweep(
        args.form, args.arity, args.num_kbs, cfg, args.seed, methods, args.n_train, args.n_test, args.workers
    )
    _sweep_out(args, res)
    return EXIT_OK


def _parse_bases(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def cmd_sweep_hed(args) -> int:
    cfg = _train_cfg(args)
    res = hed_base_sweep(_parse_bases(args.bases), cfg, args.seed, args.n_train, args.n_test, args.workers)
    _sweep_out(args, res)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-o", "--out", help="write output here instead of stdout")
    common.add_argument("--format", choices=("json", "csv", "text"), default=None)
    common.add_argument("--no-timing", action="store_true", help="report wall_ms as 0 (byte-stable output)")

    parser = argparse.ArgumentParser(prog="abl-rank", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("diagnose", parents=[common], help="rank criterion for a KB")
    _kb_flags(p)
    p.set_defaults(func=cmd_diagnose, default_format="json")

    p = sub.add_parser("gen-kb", parents=[common], help="random DNF/CNF knowledge base")
    p.add_argument("--form", choices=("dnf", "cnf"), default="dnf")
    p.add_argument("--arity", type=int, required=True)
    p.set_defaults(func=cmd_gen_kb, default_format="text")

    p = sub.add_parser("gen-data", parents=[common], help="synthetic sequence dataset (JSON lines)")
    _kb_flags(p)
    p.add_argument("--mode", choices=("uniform", "generative"), default="generative")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--sep", type=float, default=3.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.set_defaults(func=cmd_gen_data, default_format="json")

    p = sub.add_parser("train", parents=[common], help="train one method and report accuracy")
    _kb_flags(p)
    _train_flags(p)
    p.add_argument("--mode", choices=("uniform", "generative"), default="generative")
    p.add_argument("--data", help="train on this dataset file instead of generating one")
    p.set_defaults(func=cmd_train, default_format="json")

    p = sub.add_parser("verify-bound", parents=[common], help="Monte-Carlo check of the risk upper bound")
    _kb_flags(p)
    p.add_argument("--trials", type=int, default=100, help="number of random classifiers")
    p.add_argument("--n", type=int, default=20000, help="number of sequences")
    p.add_argument("--summary", action="store_true", help="omit per-classifier records")
    p.set_defaults(func=cmd_verify_bound, default_format="json")

    p = sub.add_parser("sweep-random", parents=[common], help="random KB sweep grouped by rank")
    p.add_argument("--form", choices=("dnf", "cnf"), default="dnf")
    p.add_argument("--arity", type=int, default=3)
    p.add_argument("--num-kbs", type=int, default=40)
    p.add_argument("--methods", help="comma-separated methods (default: --method)")
    p.add_argument("--workers", type=int, default=1)
    _train_flags(p)
    p.set_defaults(func=cmd_sweep_random, default_format="csv")

    p = sub.add_parser("sweep-hed", parents=[common], help="HED numeral-base sweep")
    p.add_argument("--bases", default="2-10")
    p.add_argument("--workers", type=int, default=1)
    _train_flags(p)
    p.set_defaults(func=cmd_sweep_hed, default_format="csv")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.format is None:
        args.format = args.default_format
    try:
        return args.func(args)
    except (CliError, KBError, ProbMatrixError, DataError, TrainingError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
