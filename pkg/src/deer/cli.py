"""Command-line entry point: ``deer {generate,train,eval,reject}``.

Every option can also be given in a JSON config file (``--config``) whose keys
are the option names with dashes replaced by underscores; explicit flags win
over the file. Each command writes ``config.json`` (the resolved settings)
next to its outputs.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, data, experiment
from .metrics import reject_curve_arrays
from .net import TrainConfig

DEFAULT_FRACTIONS = tuple(round(0.05 * i, 2) for i in range(11))


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _names(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="deer", description="Deep evidential regression on multi-annotator labels.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic multi-annotator dataset")
    g.add_argument("--out", required=True, type=Path)
    g.add_argument("--n-items", type=int, default=2000)
    g.add_argument("--d", type=int, default=8)
    g.add_argument("--attributes", type=_names, default=data.DEFAULT_ATTRIBUTES)
    g.add_argument("--m-min", type=int, default=3)
    g.add_argument("--m-max", type=int, default=7)
    g.add_argument("--s0", type=float, default=0.1)
    g.add_argument("--s1", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--split", type=_floats, default=(0.8, 0.1, 0.1))

    t = sub.add_parser("train", help="train DEER or a baseline")
    t.add_argument("--train", required=True, type=Path)
    t.add_argument("--val", type=Path)
    t.add_argument("--out", required=True, type=Path)
    t.add_argument("--model", choices=("deer", "ensemble", "mcdp"), default="deer")
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--hidden", type=_ints, default=(128, 128))
    t.add_argument("--dropout", type=float, help="default 0.3, or 0.4 for mcdp")
    t.add_argument("--epsilons", type=_floats, help="per-attribute loss weights (default 1/N)")
    t.add_argument("--lambdas", type=_floats, help="per-attribute regulariser scales (default 0.1)")
    t.add_argument("--no-reg-sigma", action="store_true", help="drop the variance regulariser")
    t.add_argument("--avg-nll", action="store_true", help="fit the averaged label instead of every label")
    t.add_argument("--detach-phi", action="store_true", help="no gradient through the regulariser weight")
    t.add_argument("--patience", type=int, help="early stopping patience (needs --val)")
    t.add_argument("--members", type=int, default=10, help="ensemble size")

    e = sub.add_parser("eval", help="score a checkpoint on a dataset")
    e.add_argument("--model", required=True, type=Path)
    e.add_argument("--data", required=True, type=Path)
    e.add_argument("--truth", type=Path)
    e.add_argument("--out", required=True, type=Path)
    e.add_argument("--passes", type=int, default=50, help="MC-dropout forward passes")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--bandwidth", default="silverman", help="KDE bandwidth: 'silverman' or a number")

    r = sub.add_parser("reject", help="RMSE after rejecting the most uncertain items")
    r.add_argument("--predictions", required=True, type=Path)
    r.add_argument("--out", required=True, type=Path)
    r.add_argument("--fractions", type=_floats, default=DEFAULT_FRACTIONS)

    for sp in (g, t, e, r):
        sp.add_argument("--config", type=Path, help="JSON file of option defaults")
    return p


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        if not isinstance(overrides, dict):
            parser.error("config file must hold a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(overrides) - known - {"command"})
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        converters = {"attributes": _names, "split": _floats, "hidden": _ints, "epsilons": _floats,
                      "lambdas": _floats, "fractions": _floats}
        for key, val in overrides.items():
            if key in converters and not isinstance(val, str):
                val = ",".join(str(v) for v in val)
            if key in converters:
                val = converters[key](val)
            overrides[key] = val
        overrides.pop("command", None)
        sub.set_defaults(**overrides)
        args = parser.parse_args(argv)
    return parser, args


def _echo(out: Path, args, **extra) -> None:
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()}
    cfg.update(extra)
    (out / "config.json").write_text(json.dumps(cfg, sort_keys=True, indent=2, default=list) + "\n")


def cmd_generate(args) -> None:
    if not (1 <= args.m_min <= args.m_max <= 20):
        raise UsageError(f"need 1 <= --m-min <= --m-max <= 20, got {args.m_min}, {args.m_max}")
    fr = tuple(args.split)
    if len(fr) != 3 or min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-9:
        raise UsageError(f"--split needs three nonnegative fractions summing to 1, got {fr}")
    cfg = data.GeneratorConfig(
        n_items=args.n_items,
        d=args.d,
        attributes=tuple(args.attributes),
        m_range=(args.m_min, args.m_max),
        seed=args.seed,
        s0=args.s0,
        s1=args.s1,
    )
    try:
        cfg.validate()
    except data.DataError as exc:
        raise UsageError(str(exc)) from None
    items, truth = data.generate(cfg)
    train, val, test = data.split(items, args.split, seed=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", train), ("val", val), ("test", test)):
        if part:
            data.save(part, args.out / f"{name}.jsonl")
    data.save_truth(truth, args.out / "truth.jsonl")
    _echo(args.out, args)


def train_config_from_args(args) -> TrainConfig:
    dropout = args.dropout
    if dropout is None:
        dropout = 0.4 if args.model == "mcdp" else 0.3
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        seed=args.seed,
        hidden=tuple(args.hidden),
        dropout=dropout,
        epsilons=tuple(args.epsilons) if args.epsilons else None,
        lambdas=tuple(args.lambdas) if args.lambdas else None,
        avg_nll=args.avg_nll,
        use_reg_sigma=not args.no_reg_sigma,
        detach_phi=args.detach_phi,
        patience=args.patience,
    )


def cmd_train(args) -> None:
    if args.model != "deer" and (args.no_reg_sigma or args.avg_nll or args.detach_phi):
        raise UsageError("loss-variant flags apply to --model deer only")
    if args.model == "ensemble" and args.members < 2:
        raise UsageError("--members must be at least 2")
    if args.patience is not None and args.val is None:
        raise UsageError("--patience needs --val")
    config = train_config_from_args(args)
    train = data.to_arrays(data.load(args.train))
    val = data.to_arrays(data.load(args.val), train.attributes) if args.val else None
    if val is not None and val.x.shape[1] != train.x.shape[1]:
        raise data.DataError("train and validation feature widths differ")
    nets, trace = experiment.train_model(args.model, train, config, val, args.members)

    args.out.mkdir(parents=True, exist_ok=True)
    echo = {"model": args.model, "members": args.members if args.model == "ensemble" else 1,
            "train_config": dataclasses.asdict(config)}
    checkpoint.save_checkpoint(args.out / "model.json", args.model, nets, train.attributes, echo)
    cols = list(trace[0])
    lines = ["\t".join(cols)] + ["\t".join(repr(row[c]) for c in cols) for row in trace]
    (args.out / "trace.tsv").write_text("\n".join(lines) + "\n")
    _echo(args.out, args, resolved_dropout=config.dropout)


def cmd_eval(args) -> None:
    kind, nets, attributes, _ = checkpoint.load_checkpoint(args.model)
    items = data.load(args.data)
    if set(items[0].labels) != set(attributes):
        raise data.DataError(f"data attributes {sorted(items[0].labels)} do not match model {list(attributes)}")
    test = data.to_arrays(items, attributes)
    if test.x.shape[1] != nets[0].input_width:
        raise data.DataError(f"data has {test.x.shape[1]} features, model expects {nets[0].input_width}")
    truth = data.load_truth(args.truth) if args.truth else None
    bandwidth = args.bandwidth if args.bandwidth == "silverman" else float(args.bandwidth)
    summary, rows = experiment.evaluate(kind, nets, test, truth, args.passes, args.seed, bandwidth)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "summary.tsv").write_text(summary.to_table())
    (args.out / "predictions.tsv").write_text(experiment.rows_to_table(rows))
    _echo(args.out, args, model_kind=kind)


def cmd_reject(args) -> None:
    rows = experiment.read_prediction_table(args.predictions)
    fractions = tuple(args.fractions)
    if not fractions or any(not 0 <= f < 1 for f in fractions) or list(fractions) != sorted(set(fractions)):
        raise UsageError("--fractions must be strictly increasing values in [0, 1)")
    attributes = list(dict.fromkeys(r["attribute"] for r in rows))
    out_lines = ["attribute\tfraction\tcoverage\trmse"]
    for name in attributes:
        sel = [r for r in rows if r["attribute"] == name]
        totals = np.array([r["total"] for r in sel])
        if np.any(np.isnan(totals)):
            raise ValueError(f"predictions for {name!r} carry no total variance")
        curve = reject_curve_arrays(
            [r["mean"] for r in sel], [r["label_mean"] for r in sel], totals, [r["id"] for r in sel], fractions
        )
        out_lines += [f"{name}\t{f!r}\t{c!r}\t{e!r}" for f, c, e in curve.points]
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "reject.tsv").write_text("\n".join(out_lines) + "\n")
    _echo(args.out, args)


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "reject": cmd_reject}


def main(argv=None) -> int:
    parser, args = parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"deer {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"deer {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
